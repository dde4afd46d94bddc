use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::direct::AlignmentResult;
use crate::error::{Error, Result};
use crate::geometry::{Family, Transform};
use crate::grids::{grid_to_normalized, GridPoint};
use crate::matching::CorrelationTensor;
use crate::softinlier::{hard_inlier_count, identity_mask, soft_inlier_count, warp_mask, Match};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub family: Family,
    /// Inlier threshold in grid units; `None` uses `max(h, w) / 30`.
    pub threshold: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Targets whose best score is below this fraction of the strongest
    /// column maximum contribute no candidate.
    pub min_score_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { family: Family::Affine, threshold: None, iterations: 500, seed: 0, min_score_ratio: 0.5 }
    }
}

/// One candidate per target cell: its best source cell, kept when the score
/// reaches `ratio` times the largest column maximum.
pub fn candidate_matches(s: &CorrelationTensor, ratio: f64) -> Vec<Match> {
    let (h, w) = s.grid_dims();
    let best: Vec<Match> = (0..h * w)
        .map(|tgt| {
            let (src, score) = s.column_argmax(tgt / w, tgt % w);
            Match { src, tgt: (tgt / w, tgt % w), score }
        })
        .collect();
    let top = best.iter().map(|m| m.score).fold(0.0, f64::max);
    best.into_iter().filter(|m| m.score > 0.0 && m.score >= ratio * top).collect()
}

// (target, source) in normalized coordinates
type PointPair = ((f64, f64), (f64, f64));

fn normalized(p: (usize, usize), h: usize, w: usize) -> (f64, f64) {
    grid_to_normalized(GridPoint::new(p.0 as f64, p.1 as f64), h, w).expect("grid is at least 2x2")
}

/// Least-squares affine map sending target points onto source points.
fn fit_affine(pairs: &[PointPair]) -> Option<Transform> {
    let n = pairs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 6);
    let mut b = DVector::<f64>::zeros(2 * n);
    for (r, &((x, y), (xs, ys))) in pairs.iter().enumerate() {
        a.row_mut(2 * r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0]);
        a.row_mut(2 * r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0]);
        b[2 * r] = xs;
        b[2 * r + 1] = ys;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-9 * smax.max(1e-300) {
        return None;
    }
    let g = svd.solve(&b, 0.0).ok()?;
    Transform::affine([g[0], g[1], g[2], g[3], g[4], g[5]]).ok()
}

/// Direct linear transform with `h33 = 1`.
fn fit_homography(pairs: &[PointPair]) -> Option<Transform> {
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, &((x, y), (xs, ys))) in pairs.iter().enumerate() {
        a.row_mut(2 * r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, xs * x, xs * y, xs]);
        a.row_mut(2 * r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, ys * x, ys * y, ys]);
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (k, _) = sv.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    // a second (near) null direction means the sample is degenerate
    let second = sv.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    if second <= 1e-9 * sv.max() {
        return None;
    }
    let v_t = svd.v_t.as_ref()?;
    let hv: Vec<f64> = v_t.row(k).iter().copied().collect();
    if hv[8].abs() < 1e-12 {
        return None;
    }
    let p: Vec<f64> = hv[..8].iter().map(|v| v / hv[8]).collect();
    Transform::homography(p.try_into().ok()?).ok()
}

fn fit_model(family: Family, pairs: &[PointPair]) -> Option<Transform> {
    match family {
        Family::Affine => fit_affine(pairs),
        Family::Homography => fit_homography(pairs),
        Family::Tps => None,
    }
}

fn minimal_sample(family: Family) -> Result<usize> {
    match family {
        Family::Affine => Ok(3),
        Family::Homography => Ok(4),
        Family::Tps => Err(Error::invalid("RANSAC supports affine and homography only")),
    }
}

/// Hypothesize-and-verify over sparse matches on an `h x w` grid. Returns the
/// best transform, its inlier count and the inliers.
pub fn ransac_matches(
    matches: &[Match],
    family: Family,
    t: f64,
    iterations: usize,
    seed: u64,
    h: usize,
    w: usize,
) -> Result<(Transform, usize, Vec<Match>)> {
    let k = minimal_sample(family)?;
    if matches.len() < k {
        return Err(Error::InsufficientMatches { needed: k, have: matches.len() });
    }
    let pairs: Vec<_> = matches.iter().map(|m| (normalized(m.tgt, h, w), normalized(m.src, h, w))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Transform, Vec<Match>)> = None;
    for _ in 0..iterations {
        let idx = sample(&mut rng, pairs.len(), k);
        let chosen: Vec<_> = idx.iter().map(|i| pairs[i]).collect();
        let Some(hyp) = fit_model(family, &chosen) else { continue };
        let Ok((count, inliers)) = hard_inlier_count(matches, &hyp, t, h, w) else { continue };
        if best.as_ref().is_none_or(|(b, _, _)| count > *b) {
            best = Some((count, hyp, inliers));
        }
    }
    let (count, hyp, inliers) = best.ok_or_else(|| Error::Singular("every minimal sample was degenerate".into()))?;
    if inliers.len() >= k {
        let refit_pairs: Vec<_> = inliers.iter().map(|m| (normalized(m.tgt, h, w), normalized(m.src, h, w))).collect();
        if let Some(refit) = fit_model(family, &refit_pairs) {
            if let Ok((c2, in2)) = hard_inlier_count(matches, &refit, t, h, w) {
                if c2 >= count {
                    return Ok((refit, c2, in2));
                }
            }
        }
    }
    Ok((hyp, count, inliers))
}

/// RANSAC baseline on the candidate matches of a correlation tensor.
pub fn fit_ransac(s: &CorrelationTensor, cfg: &RansacConfig) -> Result<AlignmentResult> {
    let (h, w) = s.grid_dims();
    let t = cfg.threshold.unwrap_or_else(|| crate::default_threshold(h, w));
    let matches = candidate_matches(s, cfg.min_score_ratio);
    let (transform, count, _) = ransac_matches(&matches, cfg.family, t, cfg.iterations, cfg.seed, h, w)?;
    let breakdown = soft_inlier_count(s.scores(), &warp_mask(&identity_mask(h, w, t)?, &transform)?)?;
    Ok(AlignmentResult {
        c: breakdown.c,
        trace: vec![breakdown.c],
        transform,
        restart: 0,
        breakdown,
        no_signal: false,
        threshold: t,
        hard_inliers: Some(count),
    })
}
