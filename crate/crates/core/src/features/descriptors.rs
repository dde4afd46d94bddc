use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GrayImage;
use crate::grids::{grid_to_normalized, normalized_to_grid, FeatureGrid, GridPoint};

/// Smallest cell side in pixels.
pub const MIN_CELL: usize = 4;

/// Orientation bins of the gradient histogram.
pub const GRADHIST_BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    /// Mean-subtracted raw pixel block.
    Patch,
    /// Magnitude-weighted orientation histogram.
    Gradhist,
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorKind::Patch => "patch",
            DescriptorKind::Gradhist => "gradhist",
        })
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "patch" => Ok(DescriptorKind::Patch),
            "gradhist" => Ok(DescriptorKind::Gradhist),
            other => Err(Error::invalid(format!("unknown descriptor kind {other:?}"))),
        }
    }
}

/// How a feature grid tiles an image. Cells start at the top-left pixel;
/// leftover rows and columns at the bottom and right are not covered.
///
/// The layout also fixes the image's place in the normalized transform
/// frame: the centers of the extreme cells sit at -1 and +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub image_h: usize,
    pub image_w: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub cell_h: usize,
    pub cell_w: usize,
}

impl GridLayout {
    pub fn new(image_h: usize, image_w: usize, grid_h: usize, grid_w: usize) -> Result<Self> {
        if grid_h < 2 || grid_w < 2 {
            return Err(Error::invalid(format!("grid must be at least 2x2, got {grid_h}x{grid_w}")));
        }
        let (cell_h, cell_w) = (image_h / grid_h, image_w / grid_w);
        if cell_h < MIN_CELL || cell_w < MIN_CELL {
            return Err(Error::invalid(format!(
                "a {grid_h}x{grid_w} grid on a {image_w}x{image_h} image gives {cell_w}x{cell_h} pixel cells; \
                 cells need at least {MIN_CELL}x{MIN_CELL} pixels"
            )));
        }
        Ok(Self { image_h, image_w, grid_h, grid_w, cell_h, cell_w })
    }

    pub fn for_image(img: &GrayImage, grid_h: usize, grid_w: usize) -> Result<Self> {
        Self::new(img.height(), img.width(), grid_h, grid_w)
    }

    /// Pixel position (row, column; pixel centers at integers) to the
    /// normalized frame `(x, y)`.
    pub fn pixel_to_normalized(&self, r: f64, c: f64) -> (f64, f64) {
        let i = (r - (self.cell_h as f64 - 1.0) / 2.0) / self.cell_h as f64;
        let j = (c - (self.cell_w as f64 - 1.0) / 2.0) / self.cell_w as f64;
        grid_to_normalized(GridPoint::new(i, j), self.grid_h, self.grid_w).expect("layout grid is at least 2x2")
    }

    pub fn normalized_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let p = normalized_to_grid(x, y, self.grid_h, self.grid_w).expect("layout grid is at least 2x2");
        (
            p.i * self.cell_h as f64 + (self.cell_h as f64 - 1.0) / 2.0,
            p.j * self.cell_w as f64 + (self.cell_w as f64 - 1.0) / 2.0,
        )
    }

    /// Unit image coordinates (`x = (c + 0.5) / width`) to pixel position.
    pub fn unit_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (y * self.image_h as f64 - 0.5, x * self.image_w as f64 - 0.5)
    }

    pub fn pixel_to_unit(&self, r: f64, c: f64) -> (f64, f64) {
        ((c + 0.5) / self.image_w as f64, (r + 0.5) / self.image_h as f64)
    }
}

fn normalize_or_empty(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.fill(0.0);
    }
}

/// Per-cell descriptors of `img` on a `grid_h x grid_w` grid. Cells without
/// signal (constant patch, zero gradient) come out as all-zero descriptors.
pub fn extract_descriptors(
    img: &GrayImage,
    kind: DescriptorKind,
    grid_h: usize,
    grid_w: usize,
) -> Result<FeatureGrid> {
    let layout = GridLayout::for_image(img, grid_h, grid_w)?;
    match kind {
        DescriptorKind::Patch => patch_descriptors(img, &layout),
        DescriptorKind::Gradhist => gradhist_descriptors(img, &layout),
    }
}

fn patch_descriptors(img: &GrayImage, layout: &GridLayout) -> Result<FeatureGrid> {
    let (ch, cw) = (layout.cell_h, layout.cell_w);
    let d = ch * cw;
    let mut grid = FeatureGrid::zeros(layout.grid_h, layout.grid_w, d)?;
    for i in 0..layout.grid_h {
        for j in 0..layout.grid_w {
            let cell = grid.cell_mut(i, j);
            for r in 0..ch {
                for c in 0..cw {
                    cell[r * cw + c] = img.get(i * ch + r, j * cw + c);
                }
            }
            let (lo, hi) = cell.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if lo == hi {
                cell.fill(0.0);
                continue;
            }
            let mean = cell.iter().sum::<f64>() / d as f64;
            cell.iter_mut().for_each(|v| *v -= mean);
            normalize_or_empty(cell);
        }
    }
    Ok(grid)
}

/// Central-difference gradients, one-sided at the image border.
fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (img.height(), img.width());
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            gx[r * w + c] = (img.get(r, (c + 1).min(w - 1)) - img.get(r, c.saturating_sub(1))) / 2.0;
            gy[r * w + c] = (img.get((r + 1).min(h - 1), c) - img.get(r.saturating_sub(1), c)) / 2.0;
        }
    }
    (gx, gy)
}

fn gradhist_descriptors(img: &GrayImage, layout: &GridLayout) -> Result<FeatureGrid> {
    let (gx, gy) = gradients(img);
    let w = img.width();
    let bin_width = 2.0 * PI / GRADHIST_BINS as f64;
    let mut grid = FeatureGrid::zeros(layout.grid_h, layout.grid_w, GRADHIST_BINS)?;
    for i in 0..layout.grid_h {
        for j in 0..layout.grid_w {
            let hist = grid.cell_mut(i, j);
            for r in i * layout.cell_h..(i + 1) * layout.cell_h {
                for c in j * layout.cell_w..(j + 1) * layout.cell_w {
                    let (dx, dy) = (gx[r * w + c], gy[r * w + c]);
                    let mag = dx.hypot(dy);
                    if mag == 0.0 {
                        continue;
                    }
                    // bins centered on multiples of 45 degrees, linear vote split
                    let pos = dy.atan2(dx).rem_euclid(2.0 * PI) / bin_width;
                    let lo = pos.floor();
                    let frac = pos - lo;
                    let b0 = lo as usize % GRADHIST_BINS;
                    hist[b0] += mag * (1.0 - frac);
                    hist[(b0 + 1) % GRADHIST_BINS] += mag * frac;
                }
            }
            normalize_or_empty(hist);
        }
    }
    Ok(grid)
}
