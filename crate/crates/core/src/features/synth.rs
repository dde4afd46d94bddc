//! Synthetic warped pairs: a seeded random transform renders a target image
//! from a source image, and both are described on the same grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{ImageSizes, Keypoint, KeypointSet};
use crate::features::{extract_descriptors, DescriptorKind, GrayImage, GridLayout};
use crate::geometry::sampling::{bilinear_sample, snap, SamplingGrid};
use crate::geometry::{Family, PointWarp, Transform, DEFAULT_TPS_LATTICE};
use crate::grids::FeatureGrid;

/// Ranges of the random warp drawn by [`synth_pair`]. Translations and TPS
/// displacements are in normalized frame units (the image spans `[-1, 1]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpRange {
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_translation: f64,
    /// Per-control displacement on top of the similarity, TPS only.
    pub max_tps: f64,
    /// Bound on the two perspective terms, homography only.
    pub max_perspective: f64,
}

pub const MAX_ROTATION_DEG: f64 = 45.0;
pub const SCALE_LIMITS: (f64, f64) = (0.7, 1.4);
pub const MAX_TRANSLATION: f64 = 0.3;
pub const MAX_TPS: f64 = 0.3;
pub const MAX_PERSPECTIVE: f64 = 0.1;

impl Default for WarpRange {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            scale_min: 0.8,
            scale_max: 1.25,
            max_translation: 0.25,
            max_tps: 0.1,
            max_perspective: 0.05,
        }
    }
}

impl WarpRange {
    /// Zero magnitude: every draw is the identity.
    pub fn none() -> Self {
        Self {
            max_rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            max_translation: 0.0,
            max_tps: 0.0,
            max_perspective: 0.0,
        }
    }

    /// The default range shrunk by `f` in `[0, 1]`.
    pub fn scaled(f: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::invalid(format!("magnitude factor must be in [0, 1], got {f}")));
        }
        let d = Self::default();
        Ok(Self {
            max_rotation_deg: d.max_rotation_deg * f,
            scale_min: d.scale_min.powf(f),
            scale_max: d.scale_max.powf(f),
            max_translation: d.max_translation * f,
            max_tps: d.max_tps * f,
            max_perspective: d.max_perspective * f,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, max: f64| {
            if !(0.0..=max).contains(&v) {
                Err(Error::invalid(format!("{name} {v} outside [0, {max}]")))
            } else {
                Ok(())
            }
        };
        check("rotation", self.max_rotation_deg, MAX_ROTATION_DEG)?;
        check("translation", self.max_translation, MAX_TRANSLATION)?;
        check("TPS displacement", self.max_tps, MAX_TPS)?;
        check("perspective", self.max_perspective, MAX_PERSPECTIVE)?;
        let (lo, hi) = SCALE_LIMITS;
        if !(lo <= self.scale_min && self.scale_min <= self.scale_max && self.scale_max <= hi) {
            return Err(Error::invalid(format!(
                "scale range [{}, {}] outside [{lo}, {hi}]",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }

    /// Draws a transform of `family`.
    pub fn sample(&self, family: Family, rng: &mut ChaCha8Rng) -> Result<Transform> {
        self.validate()?;
        let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let angle = sym(self.max_rotation_deg).to_radians();
        let log_scale = if self.scale_max > self.scale_min {
            rng.random_range(self.scale_min.ln()..=self.scale_max.ln())
        } else {
            self.scale_min.ln()
        };
        let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let (tx, ty) = (sym(self.max_translation), sym(self.max_translation));
        let base = Transform::similarity(angle, log_scale.exp(), tx, ty)?;
        match family {
            Family::Affine => Ok(base),
            Family::Homography => {
                let mut p = base.to_homography()?.params().to_vec();
                p[6] = sym(self.max_perspective);
                p[7] = sym(self.max_perspective);
                Transform::new(Family::Homography, p)
            }
            Family::Tps => {
                let lifted = base.to_tps(DEFAULT_TPS_LATTICE)?;
                let p = lifted.params().iter().map(|&v| v + sym(self.max_tps)).collect();
                Transform::new(Family::Tps, p)
            }
        }
    }
}

/// Seeded smooth random texture in `[0, 1]`: a sum of Gaussian blobs of
/// mixed sign and size.
pub fn procedural_texture(height: usize, width: usize, seed: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = height.min(width) as f64;
    let blobs = (height * width / 48).max(8);
    let mut acc = vec![0.0; height * width];
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let sigma = rng.random_range(side / 64.0..side / 12.0).max(1.0);
        let amp = rng.random_range(-1.0..1.0);
        let reach = (3.0 * sigma).ceil() as i64;
        let (r0, c0) = (cy as i64, cx as i64);
        for r in (r0 - reach).max(0)..(r0 + reach + 1).min(height as i64) {
            for c in (c0 - reach).max(0)..(c0 + reach + 1).min(width as i64) {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                acc[r as usize * width + c as usize] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    GrayImage::new(height, width, acc.into_iter().map(|v| (v - lo) / span).collect())
}

/// A normalized-frame transform placed on concrete source and target images.
#[derive(Debug, Clone)]
pub struct FramedTransform {
    pub transform: Transform,
    pub source: GridLayout,
    pub target: GridLayout,
}

impl FramedTransform {
    pub fn new(transform: Transform, source: GridLayout, target: GridLayout) -> Self {
        Self { transform, source, target }
    }

    /// Target pixel `(r, c)` to source pixel position.
    pub fn map_pixel(&self, r: f64, c: f64) -> Result<(f64, f64)> {
        let (x, y) = self.target.pixel_to_normalized(r, c);
        let (xs, ys) = self.transform.apply_point(x, y)?;
        Ok(self.source.normalized_to_pixel(xs, ys))
    }
}

impl PointWarp for FramedTransform {
    fn warp_unit(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let (r, c) = self.target.unit_to_pixel(x, y);
        let (rs, cs) = self.map_pixel(r, c)?;
        Ok(self.source.pixel_to_unit(rs, cs))
    }
}

/// Renders the target image of `warp` by sampling `src` at the warp of every
/// target pixel; pixels that land outside the source are black.
pub fn render_warp(src: &GrayImage, warp: &FramedTransform) -> Result<GrayImage> {
    let (h, w) = (warp.target.image_h, warp.target.image_w);
    let mut coords = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (u, v) = warp.map_pixel(r as f64, c as f64)?;
            coords.push((snap(u), snap(v)));
        }
    }
    let grid = SamplingGrid { h, w, coords };
    GrayImage::new(h, w, bilinear_sample(src.data(), src.height(), src.width(), &grid))
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub source: FeatureGrid,
    pub target: FeatureGrid,
    /// Maps target grid coordinates into the source frame.
    pub gt: Transform,
    pub seed: u64,
    pub source_image: GrayImage,
    pub target_image: GrayImage,
    pub layout: GridLayout,
}

impl SynthPair {
    pub fn gt_warp(&self) -> FramedTransform {
        FramedTransform::new(self.gt.clone(), self.layout, self.layout)
    }
}

/// Draws a warp of `family` within `range` from `seed`, renders the target
/// image from `img` and describes both images on a `grid_h x grid_w` grid.
pub fn synth_pair(
    img: &GrayImage,
    family: Family,
    range: &WarpRange,
    kind: DescriptorKind,
    grid_h: usize,
    grid_w: usize,
    seed: u64,
) -> Result<SynthPair> {
    range.validate()?;
    let layout = GridLayout::for_image(img, grid_h, grid_w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = range.sample(family, &mut rng)?;
    let target_image = render_warp(img, &FramedTransform::new(gt.clone(), layout, layout))?;
    Ok(SynthPair {
        source: extract_descriptors(img, kind, grid_h, grid_w)?,
        target: extract_descriptors(&target_image, kind, grid_h, grid_w)?,
        gt,
        seed,
        source_image: img.clone(),
        target_image,
        layout,
    })
}

/// `n` keypoints consistent with the pair's ground truth: target points are
/// drawn uniformly in the inner part of the image and kept when their source
/// point stays inside the source image.
pub fn synth_keypoints(pair: &SynthPair, n: usize, seed: u64) -> Result<KeypointSet> {
    let warp = pair.gt_warp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n * 50 {
        if points.len() == n {
            break;
        }
        let (xt, yt) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let (xs, ys) = warp.warp_unit(xt, yt)?;
        if (0.02..=0.98).contains(&xs) && (0.02..=0.98).contains(&ys) {
            points.push(Keypoint { xs, ys, xt, yt });
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("no keypoint of the target maps inside the source image"));
    }
    let (h, w) = (pair.layout.image_h, pair.layout.image_w);
    KeypointSet::new(points, ImageSizes { ws: w, hs: h, wt: w, ht: h })
}
