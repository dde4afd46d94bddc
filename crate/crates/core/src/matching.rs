//! Normalized dense correlation between two feature grids and its backward
//! pass.
//!
//! Raw scores are dot products clamped at zero. Each target column `(k, l)` is
//! then divided by the L2 norm of that column over all source cells, which
//! suppresses targets that match many source cells equally well.

use crate::error::{Error, Result};
use crate::grids::{FeatureGrid, Tensor4};

/// Columns whose raw-score norm is below this are zeroed.
pub const COLUMN_EPS: f64 = 1e-12;

/// Maximum descriptor-norm deviation accepted by [`correlate`].
pub const INPUT_NORM_TOL: f64 = 1e-3;

/// Normalized match scores `s[i, j, k, l]`, source cell `(i, j)` first.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    scores: Tensor4,
}

impl CorrelationTensor {
    /// Clamps `raw` at zero and normalizes each target column.
    pub fn from_raw_scores(raw: &Tensor4) -> Result<Self> {
        let [h, w, h2, w2] = raw.dims();
        if (h, w) != (h2, w2) {
            return Err(Error::shape(format!("correlation must be square, got {:?}", raw.dims())));
        }
        let n = h * w;
        let mut data: Vec<f64> = raw.data().iter().map(|&r| r.max(0.0)).collect();
        for tgt in 0..n {
            let ss: f64 = (0..n).map(|src| data[src * n + tgt].powi(2)).sum();
            let denom = ss.sqrt();
            for src in 0..n {
                let v = &mut data[src * n + tgt];
                *v = if denom < COLUMN_EPS { 0.0 } else { *v / denom };
            }
        }
        Ok(Self { scores: Tensor4::from_vec(raw.dims(), data)? })
    }

    pub fn scores(&self) -> &Tensor4 {
        &self.scores
    }

    pub fn into_scores(self) -> Tensor4 {
        self.scores
    }

    /// Grid size `(h, w)` shared by source and target.
    pub fn grid_dims(&self) -> (usize, usize) {
        let [h, w, _, _] = self.scores.dims();
        (h, w)
    }

    /// Sum of squared scores in target column `(k, l)`.
    pub fn column_energy(&self, k: usize, l: usize) -> f64 {
        let (h, w) = self.grid_dims();
        let n = h * w;
        let tgt = k * w + l;
        (0..n).map(|src| self.scores.data()[src * n + tgt].powi(2)).sum()
    }

    /// Best source cell for target `(k, l)` as `((i, j), score)`; the first
    /// cell in row-major order wins ties.
    pub fn column_argmax(&self, k: usize, l: usize) -> ((usize, usize), f64) {
        let (h, w) = self.grid_dims();
        let n = h * w;
        let tgt = k * w + l;
        let mut best = (0, f64::NEG_INFINITY);
        for src in 0..n {
            let v = self.scores.data()[src * n + tgt];
            if v > best.1 {
                best = (src, v);
            }
        }
        ((best.0 / w, best.0 % w), best.1)
    }
}

fn check_pair(f_s: &FeatureGrid, f_t: &FeatureGrid) -> Result<()> {
    if f_s.d() != f_t.d() {
        return Err(Error::shape(format!("descriptor dimensions differ: {} vs {}", f_s.d(), f_t.d())));
    }
    if (f_s.h(), f_s.w()) != (f_t.h(), f_t.w()) {
        return Err(Error::shape(format!(
            "grid sizes differ: {}x{} vs {}x{}",
            f_s.h(),
            f_s.w(),
            f_t.h(),
            f_t.w()
        )));
    }
    Ok(())
}

fn raw_dots(f_s: &FeatureGrid, f_t: &FeatureGrid) -> Tensor4 {
    let (h, w) = (f_s.h(), f_s.w());
    let n = h * w;
    let mut raw = Tensor4::zeros([h, w, h, w]);
    let data = raw.data_mut();
    for src in 0..n {
        let a = f_s.cell_flat(src);
        for tgt in 0..n {
            let b = f_t.cell_flat(tgt);
            data[src * n + tgt] = a.iter().zip(b).map(|(x, y)| x * y).sum();
        }
    }
    raw
}

/// Dense normalized correlation of two L2-normalized grids.
pub fn correlate(f_s: &FeatureGrid, f_t: &FeatureGrid) -> Result<CorrelationTensor> {
    check_pair(f_s, f_t)?;
    for (name, g) in [("source", f_s), ("target", f_t)] {
        if !g.is_normalized(INPUT_NORM_TOL) {
            return Err(Error::invalid(format!(
                "{name} grid is not L2-normalized (max norm deviation {:.3e})",
                g.max_norm_deviation()
            )));
        }
    }
    CorrelationTensor::from_raw_scores(&raw_dots(f_s, f_t))
}

/// Gradients of `sum(upstream * correlate(f_s, f_t))` with respect to both
/// descriptor grids. The clamp's subgradient is 0 wherever the raw score is
/// not strictly positive, so a source cell orthogonal to every target cell
/// receives no gradient.
pub fn correlate_backward(
    f_s: &FeatureGrid,
    f_t: &FeatureGrid,
    upstream: &Tensor4,
) -> Result<(FeatureGrid, FeatureGrid)> {
    check_pair(f_s, f_t)?;
    let (h, w, d) = (f_s.h(), f_s.w(), f_s.d());
    if upstream.dims() != [h, w, h, w] {
        return Err(Error::shape(format!(
            "upstream has shape {:?}, expected {:?}",
            upstream.dims(),
            [h, w, h, w]
        )));
    }
    let n = h * w;
    let raw = raw_dots(f_s, f_t);
    let (raw, up) = (raw.data(), upstream.data());
    let mut grad_s = FeatureGrid::zeros(h, w, d)?;
    let mut grad_t = FeatureGrid::zeros(h, w, d)?;
    let mut g_col = vec![0.0; n];

    for tgt in 0..n {
        let r = |src: usize| raw[src * n + tgt].max(0.0);
        let ss: f64 = (0..n).map(|src| r(src).powi(2)).sum();
        let denom = ss.sqrt();
        if denom < COLUMN_EPS {
            continue;
        }
        let dot_ur: f64 = (0..n).map(|src| up[src * n + tgt] * r(src)).sum();
        let cube = denom * ss;
        for (src, g) in g_col.iter_mut().enumerate() {
            *g = if raw[src * n + tgt] <= 0.0 {
                0.0
            } else {
                up[src * n + tgt] / denom - dot_ur * r(src) / cube
            };
        }
        let ft = f_t.cell_flat(tgt).to_vec();
        for (src, &g) in g_col.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let fs = f_s.cell_flat(src);
            let gs = &mut grad_s.data_mut()[src * d..(src + 1) * d];
            for c in 0..d {
                gs[c] += g * ft[c];
            }
            let gt = &mut grad_t.data_mut()[tgt * d..(tgt + 1) * d];
            for c in 0..d {
                gt[c] += g * fs[c];
            }
        }
    }
    Ok((grad_s, grad_t))
}
