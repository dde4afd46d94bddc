//! Soft-inlier count: a differentiable, RANSAC-style support score for a
//! transform over a dense correlation tensor.
//!
//! The binary identity mask `m_id[i, j, k, l] = [|(i, j) - (k, l)| < t]` is
//! warped by a transform with a spatial transformer: each source slice
//! `m_id[i, j, ., .]` is bilinearly sampled at `T(k, l)`. The count is
//! `c = sum s * m` over all four indices. Values of the warped mask stay
//! fractional, which is what makes `c` differentiable in the parameters.
//!
//! Summation order for `c` is fixed: per target cell `(k, l)` the
//! contribution sums source cells in row-major order, and `c` sums the
//! contributions in row-major `(k, l)` order.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::sampling::{sample_point, sample_point_grad};
use crate::geometry::{sampling_grid, Transform};
use crate::grids::{grid_to_normalized, GridPoint, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MaskKind {
    IdentityBinary,
    WarpedSoft,
}

/// A 4-D inlier mask over `(source i, source j, target k, target l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InlierMask {
    base: Tensor4,
    kind: MaskKind,
    threshold: f64,
}

impl InlierMask {
    pub fn tensor(&self) -> &Tensor4 {
        &self.base
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        let [h, w, _, _] = self.base.dims();
        (h, w)
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("inlier threshold must be positive, got {t}")));
    }
    Ok(())
}

/// Binary mask of all cell pairs closer than `t` grid units (strictly).
pub fn identity_mask(h: usize, w: usize, t: f64) -> Result<InlierMask> {
    check_threshold(t)?;
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("grid must be at least 2x2, got {h}x{w}")));
    }
    let mut base = Tensor4::zeros([h, w, h, w]);
    let reach = t.ceil() as i64;
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            for k in (i - reach).max(0)..(i + reach + 1).min(h as i64) {
                for l in (j - reach).max(0)..(j + reach + 1).min(w as i64) {
                    let d2 = ((i - k).pow(2) + (j - l).pow(2)) as f64;
                    if d2.sqrt() < t {
                        base.set(i as usize, j as usize, k as usize, l as usize, 1.0);
                    }
                }
            }
        }
    }
    Ok(InlierMask { base, kind: MaskKind::IdentityBinary, threshold: t })
}

fn require_identity(m_id: &InlierMask) -> Result<()> {
    if m_id.kind != MaskKind::IdentityBinary {
        return Err(Error::invalid("mask warping expects an identity mask"));
    }
    Ok(())
}

/// Warps an identity mask by `t` (target to source).
pub fn warp_mask(m_id: &InlierMask, t: &Transform) -> Result<InlierMask> {
    require_identity(m_id)?;
    let (h, w) = m_id.grid_dims();
    let n = h * w;
    let grid = sampling_grid(t, h, w)?;
    let src = m_id.base.data();
    let mut out = Tensor4::zeros([h, w, h, w]);
    let data = out.data_mut();
    for (tgt, &(u, v)) in grid.coords.iter().enumerate() {
        for s in 0..n {
            data[s * n + tgt] = sample_point(&src[s * n..(s + 1) * n], h, w, u, v);
        }
    }
    Ok(InlierMask { base: out, kind: MaskKind::WarpedSoft, threshold: m_id.threshold })
}

/// One weighted match in a score breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InlierMatch {
    pub src: [usize; 2],
    pub tgt: [usize; 2],
    pub w: f64,
}

/// Soft-inlier count with its per-target contributions and the positively
/// weighted matches, strongest first (ties by `(k, l, i, j)`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreBreakdown {
    pub c: f64,
    pub contributions: Vec<Vec<f64>>,
    pub inliers: Vec<InlierMatch>,
}

impl ScoreBreakdown {
    /// Copy keeping only the `k` strongest matches.
    pub fn top(&self, k: usize) -> ScoreBreakdown {
        ScoreBreakdown {
            c: self.c,
            contributions: self.contributions.clone(),
            inliers: self.inliers.iter().take(k).copied().collect(),
        }
    }
}

pub(crate) fn sort_matches(v: &mut [InlierMatch]) {
    v.sort_by(|a, b| {
        b.w.total_cmp(&a.w)
            .then((a.tgt, a.src).cmp(&(b.tgt, b.src)))
    });
}

/// `c = sum_{ijkl} s * m` with breakdown.
pub fn soft_inlier_count(s: &Tensor4, m: &InlierMask) -> Result<ScoreBreakdown> {
    if s.dims() != m.base.dims() {
        return Err(Error::shape(format!(
            "scores {:?} vs mask {:?}",
            s.dims(),
            m.base.dims()
        )));
    }
    let [h, w, _, _] = s.dims();
    let n = h * w;
    let (sd, md) = (s.data(), m.base.data());
    let mut contributions = vec![vec![0.0; w]; h];
    let mut inliers = Vec::new();
    let mut c = 0.0;
    for tgt in 0..n {
        let mut acc = 0.0;
        for src in 0..n {
            let v = sd[src * n + tgt] * md[src * n + tgt];
            acc += v;
            if v > 0.0 {
                inliers.push(InlierMatch { src: [src / w, src % w], tgt: [tgt / w, tgt % w], w: v });
            }
        }
        contributions[tgt / w][tgt % w] = acc;
        c += acc;
    }
    sort_matches(&mut inliers);
    Ok(ScoreBreakdown { c, contributions, inliers })
}

/// Gradients of `c(s, warp_mask(m_id, t))`: with respect to the transform
/// parameters, and with respect to the scores (which is the warped mask).
pub fn soft_inlier_grad(s: &Tensor4, m_id: &InlierMask, t: &Transform) -> Result<(Vec<f64>, Tensor4)> {
    require_identity(m_id)?;
    if s.dims() != m_id.base.dims() {
        return Err(Error::shape(format!("scores {:?} vs mask {:?}", s.dims(), m_id.base.dims())));
    }
    let (h, w) = m_id.grid_dims();
    let n = h * w;
    let grid = sampling_grid(t, h, w)?;
    let (sd, src_mask) = (s.data(), m_id.base.data());
    let mut warped = Tensor4::zeros([h, w, h, w]);
    let mut dc_dg = vec![0.0; t.dof()];
    let (su, sv) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);

    for (tgt, &(u, v)) in grid.coords.iter().enumerate() {
        let (mut du, mut dv) = (0.0, 0.0);
        for src in 0..n {
            let (val, gu, gv) = sample_point_grad(&src_mask[src * n..(src + 1) * n], h, w, u, v);
            warped.data_mut()[src * n + tgt] = val;
            let sc = sd[src * n + tgt];
            du += sc * gu;
            dv += sc * gv;
        }
        if du == 0.0 && dv == 0.0 {
            continue;
        }
        let (x, y) = grid_to_normalized(GridPoint::new((tgt / w) as f64, (tgt % w) as f64), h, w)?;
        // u follows y' and v follows x'
        let (gx, gy) = (dv * sv, du * su);
        for (p, row) in t.jacobian(x, y)?.iter().enumerate() {
            dc_dg[p] += gx * row[0] + gy * row[1];
        }
    }
    Ok((dc_dg, warped))
}

/// Precomputed per-target support images for fast scoring of many
/// transforms against one score tensor.
///
/// `support[k, l][a, b] = sum_{ij} s[i, j, k, l] * m_id[i, j, a, b]`, so that
/// `c(T) = sum_{kl} bilinear(support[k, l], T(k, l))`. This equals the dense
/// warp-then-sum route up to floating-point summation order.
#[derive(Debug, Clone)]
pub struct MaskedSupport {
    h: usize,
    w: usize,
    threshold: f64,
    // support[tgt * n + node]
    support: Vec<f64>,
    normalized_cells: Vec<(f64, f64)>,
}

impl MaskedSupport {
    pub fn new(s: &Tensor4, m_id: &InlierMask) -> Result<Self> {
        require_identity(m_id)?;
        if s.dims() != m_id.base.dims() {
            return Err(Error::shape(format!("scores {:?} vs mask {:?}", s.dims(), m_id.base.dims())));
        }
        let (h, w) = m_id.grid_dims();
        let n = h * w;
        let (sd, md) = (s.data(), m_id.base.data());
        let mut support = vec![0.0; n * n];
        for src in 0..n {
            for node in 0..n {
                let m = md[src * n + node];
                if m == 0.0 {
                    continue;
                }
                for tgt in 0..n {
                    support[tgt * n + node] += sd[src * n + tgt] * m;
                }
            }
        }
        let normalized_cells = (0..n)
            .map(|c| grid_to_normalized(GridPoint::new((c / w) as f64, (c % w) as f64), h, w))
            .collect::<Result<_>>()?;
        Ok(Self { h, w, threshold: m_id.threshold, support, normalized_cells })
    }

    pub fn from_scores(s: &Tensor4, t: f64) -> Result<Self> {
        let [h, w, _, _] = s.dims();
        Self::new(s, &identity_mask(h, w, t)?)
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// True when no transform can score above zero.
    pub fn is_empty(&self) -> bool {
        self.support.iter().all(|&v| v == 0.0)
    }

    pub fn score(&self, t: &Transform) -> Result<f64> {
        let (h, w) = (self.h, self.w);
        let n = h * w;
        let grid = sampling_grid(t, h, w)?;
        Ok(grid
            .coords
            .iter()
            .enumerate()
            .map(|(tgt, &(u, v))| sample_point(&self.support[tgt * n..(tgt + 1) * n], h, w, u, v))
            .sum())
    }

    /// Soft-inlier count and its gradient with respect to the parameters.
    pub fn score_and_grad(&self, t: &Transform) -> Result<(f64, Vec<f64>)> {
        let (h, w) = (self.h, self.w);
        let n = h * w;
        let grid = sampling_grid(t, h, w)?;
        let (su, sv) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
        let mut c = 0.0;
        let mut grad = vec![0.0; t.dof()];
        for (tgt, &(u, v)) in grid.coords.iter().enumerate() {
            let (val, du, dv) = sample_point_grad(&self.support[tgt * n..(tgt + 1) * n], h, w, u, v);
            c += val;
            if du == 0.0 && dv == 0.0 {
                continue;
            }
            let (x, y) = self.normalized_cells[tgt];
            let (gx, gy) = (dv * sv, du * su);
            for (p, row) in t.jacobian(x, y)?.iter().enumerate() {
                grad[p] += gx * row[0] + gy * row[1];
            }
        }
        Ok((c, grad))
    }
}

/// A sparse candidate match between source cell `src` and target cell `tgt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub src: (usize, usize),
    pub tgt: (usize, usize),
    pub score: f64,
}

/// Classical inlier count: matches whose transfer error
/// `|src - T(tgt)|` (grid units on an `h x w` grid) is below `t`.
pub fn hard_inlier_count(
    matches: &[Match],
    transform: &Transform,
    t: f64,
    h: usize,
    w: usize,
) -> Result<(usize, Vec<Match>)> {
    check_threshold(t)?;
    let mut inliers = Vec::new();
    for m in matches {
        let (u, v) = transform.map_grid(m.tgt.0 as f64, m.tgt.1 as f64, h, w)?;
        let d = ((m.src.0 as f64 - u).powi(2) + (m.src.1 as f64 - v).powi(2)).sqrt();
        if d < t {
            inliers.push(*m);
        }
    }
    Ok((inliers.len(), inliers))
}
