//! Evaluation protocols: keypoint transfer error, PCK and warped-mask IoU.
//!
//! Keypoints live in unit image coordinates (`x / width`, `y / height`). A
//! transform maps target points into the source image, so the predicted
//! source keypoint is the warp of the annotated target keypoint.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GrayImage;
use crate::geometry::sampling::sample_point;
use crate::geometry::PointWarp;

/// PF-PASCAL distance threshold in unit coordinates.
pub const PF_PASCAL_ALPHA: f64 = 0.1;
/// TSS threshold factor on `max(source width, source height)`.
pub const TSS_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Error in unit coordinates, threshold `alpha`.
    Pfpascal,
    /// Error in source pixels, threshold `alpha * max(ws, hs)`.
    Tss,
}

impl Protocol {
    pub fn default_alpha(self) -> f64 {
        match self {
            Protocol::Pfpascal => PF_PASCAL_ALPHA,
            Protocol::Tss => TSS_ALPHA,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Pfpascal => "pfpascal",
            Protocol::Tss => "tss",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "pfpascal" => Ok(Protocol::Pfpascal),
            "tss" => Ok(Protocol::Tss),
            other => Err(Error::invalid(format!("unknown evaluation protocol {other:?}"))),
        }
    }
}

/// Source and target image sizes in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSizes {
    pub ws: usize,
    pub hs: usize,
    pub wt: usize,
    pub ht: usize,
}

impl ImageSizes {
    pub fn square(side: usize) -> Self {
        Self { ws: side, hs: side, wt: side, ht: side }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub xs: f64,
    pub ys: f64,
    pub xt: f64,
    pub yt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    points: Vec<Keypoint>,
    sizes: ImageSizes,
}

impl KeypointSet {
    pub fn new(points: Vec<Keypoint>, sizes: ImageSizes) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("keypoint set is empty"));
        }
        for (n, p) in points.iter().enumerate() {
            if ![p.xs, p.ys, p.xt, p.yt].iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("keypoint {n} has coordinates outside [0, 1]: {p:?}")));
            }
        }
        if sizes.ws == 0 || sizes.hs == 0 || sizes.wt == 0 || sizes.ht == 0 {
            return Err(Error::invalid("image sizes must be positive"));
        }
        Ok(Self { points, sizes })
    }

    pub fn points(&self) -> &[Keypoint] {
        &self.points
    }

    pub fn sizes(&self) -> ImageSizes {
        self.sizes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Parses keypoint CSV with header `xs,ys,xt,yt`.
pub fn parse_keypoints_csv(text: &str, sizes: ImageSizes, origin: &str) -> Result<KeypointSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let perr = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["xs", "ys", "xt", "yt"] {
        return Err(perr(1, format!("expected header xs,ys,xt,yt, got {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut points = Vec::new();
    for (n, rec) in rdr.deserialize::<Keypoint>().enumerate() {
        points.push(rec.map_err(|e| perr(n + 2, e.to_string()))?);
    }
    KeypointSet::new(points, sizes)
}

pub fn read_keypoints_csv(path: impl AsRef<Path>, sizes: ImageSizes) -> Result<KeypointSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints_csv(&text, sizes, &path.display().to_string())
}

pub fn format_keypoints_csv(kps: &KeypointSet) -> String {
    let mut out = String::from("xs,ys,xt,yt\n");
    for p in &kps.points {
        out.push_str(&format!("{:?},{:?},{:?},{:?}\n", p.xs, p.ys, p.xt, p.yt));
    }
    out
}

/// Transfer error of every keypoint: unit-coordinate distance for
/// PF-PASCAL, source-pixel distance for TSS.
pub fn transfer_errors<W: PointWarp + ?Sized>(kps: &KeypointSet, warp: &W, protocol: Protocol) -> Result<Vec<f64>> {
    let s = kps.sizes;
    kps.points
        .iter()
        .map(|p| {
            let (x, y) = warp.warp_unit(p.xt, p.yt)?;
            let (dx, dy) = (x - p.xs, y - p.ys);
            Ok(match protocol {
                Protocol::Pfpascal => dx.hypot(dy),
                Protocol::Tss => (dx * s.ws as f64).hypot(dy * s.hs as f64),
            })
        })
        .collect()
}

/// Distance threshold used by [`pck`].
pub fn pck_threshold(protocol: Protocol, alpha: f64, sizes: ImageSizes) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(match protocol {
        Protocol::Pfpascal => alpha,
        Protocol::Tss => alpha * sizes.ws.max(sizes.hs) as f64,
    })
}

/// Fraction of errors strictly below the protocol threshold.
pub fn pck(errors: &[f64], protocol: Protocol, alpha: f64, sizes: ImageSizes) -> Result<f64> {
    let thr = pck_threshold(protocol, alpha, sizes)?;
    if errors.is_empty() {
        return Err(Error::invalid("no transfer errors to score"));
    }
    Ok(errors.iter().filter(|&&e| e < thr).count() as f64 / errors.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub alpha: f64,
    pub threshold: f64,
    pub errors: Vec<f64>,
    pub pck: f64,
}

impl EvalReport {
    pub fn correct(&self) -> usize {
        self.errors.iter().filter(|&&e| e < self.threshold).count()
    }
}

pub fn evaluate<W: PointWarp + ?Sized>(kps: &KeypointSet, warp: &W, protocol: Protocol, alpha: f64) -> Result<EvalReport> {
    let errors = transfer_errors(kps, warp, protocol)?;
    let threshold = pck_threshold(protocol, alpha, kps.sizes)?;
    let pck = pck(&errors, protocol, alpha, kps.sizes)?;
    Ok(EvalReport { protocol, alpha, threshold, errors, pck })
}

/// PCK over several pairs, averaged per pair and pooled over all keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PckSummary {
    pub pck_per_pair_mean: f64,
    pub pck_pooled: f64,
    pub pairs: usize,
    pub keypoints: usize,
}

pub fn summarize_pck(reports: &[EvalReport]) -> Option<PckSummary> {
    if reports.is_empty() {
        return None;
    }
    let keypoints: usize = reports.iter().map(|r| r.errors.len()).sum();
    let correct: usize = reports.iter().map(EvalReport::correct).sum();
    Some(PckSummary {
        pck_per_pair_mean: reports.iter().map(|r| r.pck).sum::<f64>() / reports.len() as f64,
        pck_pooled: correct as f64 / keypoints as f64,
        pairs: reports.len(),
        keypoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IouResult {
    pub iou: f64,
    /// Both the warped source and the target mask are empty; `iou` is 1.
    pub both_empty: bool,
}

/// Warps `src_mask` into the target frame (sampling the source at the warp
/// of every target pixel, bilinear then thresholded at 0.5) and returns its
/// intersection-over-union with `tgt_mask`.
pub fn mask_iou<W: PointWarp + ?Sized>(
    src_mask: &GrayImage,
    tgt_mask: &GrayImage,
    warp: &W,
    expected: Option<ImageSizes>,
) -> Result<IouResult> {
    if let Some(s) = expected {
        let got = (src_mask.width(), src_mask.height(), tgt_mask.width(), tgt_mask.height());
        if got != (s.ws, s.hs, s.wt, s.ht) {
            return Err(Error::shape(format!(
                "mask sizes {}x{} / {}x{} do not match images {}x{} / {}x{}",
                got.0, got.1, got.2, got.3, s.ws, s.hs, s.wt, s.ht
            )));
        }
    }
    let (hs, ws) = (src_mask.height(), src_mask.width());
    let src: Vec<f64> = src_mask.binarize().into_iter().map(|b| b as u8 as f64).collect();
    let tgt = tgt_mask.binarize();
    let (ht, wt) = (tgt_mask.height(), tgt_mask.width());
    let (mut inter, mut union) = (0usize, 0usize);
    for r in 0..ht {
        for c in 0..wt {
            let (x, y) = warp.warp_unit((c as f64 + 0.5) / wt as f64, (r as f64 + 0.5) / ht as f64)?;
            let (u, v) = (y * hs as f64 - 0.5, x * ws as f64 - 0.5);
            let a = sample_point(&src, hs, ws, u, v) >= 0.5;
            let b = tgt[r * wt + c];
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
    }
    Ok(if union == 0 {
        IouResult { iou: 1.0, both_empty: true }
    } else {
        IouResult { iou: inter as f64 / union as f64, both_empty: false }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Family, Transform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kps(points: Vec<Keypoint>) -> KeypointSet {
        KeypointSet::new(points, ImageSizes::square(100)).unwrap()
    }

    #[test]
    fn identity_with_constant_offset() {
        let set = kps((0..5)
            .map(|n| {
                let t = 0.1 + 0.1 * n as f64;
                Keypoint { xs: t + 0.3, ys: t, xt: t, yt: t }
            })
            .collect());
        let e = transfer_errors(&set, &Transform::identity(Family::Affine), Protocol::Pfpascal).unwrap();
        assert!(e.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        let px = transfer_errors(&set, &Transform::identity(Family::Affine), Protocol::Tss).unwrap();
        assert!(px.iter().all(|&v| (v - 30.0).abs() < 1e-9));
    }

    #[test]
    fn generator_transform_has_zero_error() {
        let t = Transform::similarity(0.2, 0.9, 0.05, -0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points = (0..20)
            .map(|_| {
                let (xt, yt) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
                let (xs, ys) = t.warp_unit(xt, yt).unwrap();
                Keypoint { xs, ys, xt, yt }
            })
            .collect();
        let e = transfer_errors(&kps(points), &t, Protocol::Pfpascal).unwrap();
        assert!(e.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn random_affine_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = [1.1, 0.1, 0.05, -0.08, 0.95, -0.02];
        let t = Transform::affine(g).unwrap();
        let points: Vec<Keypoint> = (0..30)
            .map(|_| Keypoint {
                xs: rng.random(),
                ys: rng.random(),
                xt: rng.random(),
                yt: rng.random(),
            })
            .collect();
        let set = kps(points.clone());
        let e = transfer_errors(&set, &t, Protocol::Pfpascal).unwrap();
        for (p, err) in points.iter().zip(e) {
            let (x, y) = (2.0 * p.xt - 1.0, 2.0 * p.yt - 1.0);
            let xs = (g[0] * x + g[1] * y + g[2] + 1.0) / 2.0;
            let ys = (g[3] * x + g[4] * y + g[5] + 1.0) / 2.0;
            let oracle = ((xs - p.xs).powi(2) + (ys - p.ys).powi(2)).sqrt();
            assert!((err - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn pck_thresholds() {
        let s = ImageSizes::square(100);
        assert_eq!(pck(&[0.0, 0.0], Protocol::Pfpascal, 0.1, s).unwrap(), 1.0);
        assert_eq!(pck(&[0.05, 0.15], Protocol::Pfpascal, 0.1, s).unwrap(), 0.5);
        assert_eq!(pck(&[4.9, 5.1], Protocol::Tss, 0.05, s).unwrap(), 0.5);
        // strict inequality at the threshold
        assert_eq!(pck(&[0.1], Protocol::Pfpascal, 0.1, s).unwrap(), 0.0);
        assert!(pck(&[0.1], Protocol::Pfpascal, 0.0, s).is_err());
        let wide = ImageSizes { ws: 200, hs: 50, wt: 10, ht: 10 };
        assert_eq!(pck_threshold(Protocol::Tss, 0.05, wide).unwrap(), 10.0);
    }

    #[test]
    fn protocol_tags() {
        assert_eq!("PF-PASCAL".parse::<Protocol>().unwrap(), Protocol::Pfpascal);
        assert_eq!("tss".parse::<Protocol>().unwrap(), Protocol::Tss);
        assert!("caltech".parse::<Protocol>().is_err());
    }

    #[test]
    fn keypoint_validation_and_csv() {
        assert!(KeypointSet::new(vec![], ImageSizes::square(10)).is_err());
        let bad = Keypoint { xs: 1.2, ys: 0.0, xt: 0.0, yt: 0.0 };
        assert!(KeypointSet::new(vec![bad], ImageSizes::square(10)).is_err());
        let set = kps(vec![Keypoint { xs: 0.25, ys: 0.5, xt: 0.1, yt: 0.9 }]);
        let text = format_keypoints_csv(&set);
        assert_eq!(parse_keypoints_csv(&text, set.sizes(), "m").unwrap(), set);
        assert!(parse_keypoints_csv("a,b,c,d\n1,1,1,1\n", set.sizes(), "m").is_err());
        let err = parse_keypoints_csv("xs,ys,xt,yt\n0.1,0.1,0.1,x\n", set.sizes(), "k.csv").unwrap_err();
        assert!(err.to_string().starts_with("k.csv:2:"), "{err}");
    }

    #[test]
    fn summary_reports_both_averages() {
        let r = |errors: Vec<f64>| {
            let pck = errors.iter().filter(|&&e| e < 0.1).count() as f64 / errors.len() as f64;
            EvalReport { protocol: Protocol::Pfpascal, alpha: 0.1, threshold: 0.1, errors, pck }
        };
        let s = summarize_pck(&[r(vec![0.0]), r(vec![0.2, 0.2, 0.2])]).unwrap();
        assert_eq!(s.pck_per_pair_mean, 0.5);
        assert_eq!(s.pck_pooled, 0.25);
        assert!(summarize_pck(&[]).is_none());
    }

    fn square(side: usize, r0: usize, c0: usize, size: usize) -> GrayImage {
        GrayImage::from_fn(side, side, |r, c| ((r0..r0 + size).contains(&r) && (c0..c0 + size).contains(&c)) as u8 as f64)
            .unwrap()
    }

    #[test]
    fn iou_cases() {
        let id = Transform::identity(Family::Affine);
        let a = square(64, 10, 10, 20);
        assert_eq!(mask_iou(&a, &a, &id, None).unwrap().iou, 1.0);
        let far = square(64, 40, 40, 20);
        assert_eq!(mask_iou(&a, &far, &id, None).unwrap().iou, 0.0);
        let half = square(64, 10, 20, 20);
        let r = mask_iou(&a, &half, &id, Some(ImageSizes::square(64))).unwrap();
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-12);
        let empty = GrayImage::filled(64, 64, 0.0).unwrap();
        assert_eq!(mask_iou(&empty, &empty, &id, None).unwrap(), IouResult { iou: 1.0, both_empty: true });
        assert!(mask_iou(&a, &a, &id, Some(ImageSizes::square(32))).is_err());
    }

    #[test]
    fn translated_warp_restores_overlap() {
        // target square sits 16 px right of the source one; the warp sends
        // target points 16 px left
        let a = square(64, 10, 10, 20);
        let b = square(64, 10, 26, 20);
        let t = Transform::affine([1.0, 0.0, -0.5, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(mask_iou(&a, &b, &t, None).unwrap().iou, 1.0);
    }
}
