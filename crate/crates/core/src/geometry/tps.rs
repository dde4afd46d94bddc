//! Thin-plate spline on a fixed square control lattice.
//!
//! Control points sit on the `n x n` lattice spanning `[-1, 1]^2` in
//! row-major order (row index follows `y`). The kernel system is solved once
//! per lattice size; a spline is then fully described by its coefficient
//! vectors, which are linear in the control targets.

use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Maximum residual accepted for the solved kernel system.
pub const TPS_RESIDUAL_TOL: f64 = 1e-9;

/// `U(r) = r^2 ln r^2`, evaluated from the squared distance, with `U(0) = 0`.
#[inline]
pub fn kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Control lattice and the inverse of its kernel system matrix.
#[derive(Debug)]
pub struct TpsBasis {
    n: usize,
    controls: Vec<(f64, f64)>,
    // (p + 3) x (p + 3) inverse of [[K, P], [P^T, 0]], row-major.
    system_inv: Vec<f64>,
}

impl TpsBasis {
    fn build(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("TPS control lattice must be at least 2x2, got {n}")));
        }
        let coord = |a: usize| -1.0 + 2.0 * a as f64 / (n - 1) as f64;
        let controls: Vec<(f64, f64)> =
            (0..n * n).map(|p| (coord(p % n), coord(p / n))).collect();
        let np = controls.len();
        let m = np + 3;
        let mut sys = DMatrix::<f64>::zeros(m, m);
        for (a, &(xa, ya)) in controls.iter().enumerate() {
            for (b, &(xb, yb)) in controls.iter().enumerate() {
                sys[(a, b)] = kernel((xa - xb).powi(2) + (ya - yb).powi(2));
            }
            for (c, v) in [1.0, xa, ya].into_iter().enumerate() {
                sys[(a, np + c)] = v;
                sys[(np + c, a)] = v;
            }
        }
        let inv = sys
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Invariant(format!("TPS system for {n}x{n} lattice is singular")))?;
        let residual = (&sys * &inv - DMatrix::<f64>::identity(m, m)).abs().max();
        if residual > TPS_RESIDUAL_TOL {
            return Err(Error::Invariant(format!("TPS system inverse residual {residual:.3e}")));
        }
        let system_inv = (0..m * m).map(|idx| inv[(idx / m, idx % m)]).collect();
        Ok(Self { n, controls, system_inv })
    }

    /// Shared basis for an `n x n` lattice.
    pub fn for_lattice(n: usize) -> Result<Arc<TpsBasis>> {
        static CACHE: OnceLock<Mutex<Vec<Arc<TpsBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(b) = guard.iter().find(|b| b.n == n) {
            return Ok(b.clone());
        }
        let b = Arc::new(Self::build(n)?);
        guard.push(b.clone());
        Ok(b)
    }

    pub fn lattice(&self) -> usize {
        self.n
    }

    pub fn controls(&self) -> &[(f64, f64)] {
        &self.controls
    }

    fn features(&self, x: f64, y: f64) -> Vec<f64> {
        let mut phi: Vec<f64> = self
            .controls
            .iter()
            .map(|&(cx, cy)| kernel((x - cx).powi(2) + (y - cy).powi(2)))
            .collect();
        phi.extend([1.0, x, y]);
        phi
    }

    /// Weights `b_p(x, y)` such that the spline value at `(x, y)` equals
    /// `sum_p b_p * target_p` for either output coordinate.
    pub fn weights_at(&self, x: f64, y: f64) -> Vec<f64> {
        let m = self.controls.len() + 3;
        let phi = self.features(x, y);
        (0..self.controls.len())
            .map(|p| (0..m).map(|q| phi[q] * self.system_inv[q * m + p]).sum())
            .collect()
    }

    fn solve(&self, targets: &[f64]) -> Vec<f64> {
        let m = self.controls.len() + 3;
        (0..m)
            .map(|q| (0..targets.len()).map(|p| self.system_inv[q * m + p] * targets[p]).sum())
            .collect()
    }
}

/// A solved spline: kernel weights followed by the affine part `(a0, a1, a2)`
/// for each output coordinate.
#[derive(Debug, Clone)]
pub struct TpsModel {
    basis: Arc<TpsBasis>,
    coeff_x: Vec<f64>,
    coeff_y: Vec<f64>,
}

impl TpsModel {
    /// Solves the spline whose control point `p` moves by
    /// `(displacements[2p], displacements[2p + 1])`.
    pub fn solve(basis: Arc<TpsBasis>, displacements: &[f64]) -> Result<Self> {
        let np = basis.controls.len();
        if displacements.len() != 2 * np {
            return Err(Error::invalid(format!(
                "TPS on a {0}x{0} lattice needs {1} parameters, got {2}",
                basis.n,
                2 * np,
                displacements.len()
            )));
        }
        let tx: Vec<f64> = (0..np).map(|p| basis.controls[p].0 + displacements[2 * p]).collect();
        let ty: Vec<f64> = (0..np).map(|p| basis.controls[p].1 + displacements[2 * p + 1]).collect();
        let model = Self { coeff_x: basis.solve(&tx), coeff_y: basis.solve(&ty), basis };

        let residual = model
            .basis
            .controls
            .iter()
            .enumerate()
            .map(|(p, &(cx, cy))| {
                let (x, y) = model.eval(cx, cy);
                (x - tx[p]).abs().max((y - ty[p]).abs())
            })
            .fold(0.0, f64::max);
        if residual > TPS_RESIDUAL_TOL {
            return Err(Error::Invariant(format!("TPS interpolation residual {residual:.3e}")));
        }
        Ok(model)
    }

    pub fn basis(&self) -> &TpsBasis {
        &self.basis
    }

    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let phi = self.basis.features(x, y);
        let dot = |c: &[f64]| phi.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        (dot(&self.coeff_x), dot(&self.coeff_y))
    }

    /// Kernel weights for `x'` and `y'` (affine terms excluded).
    pub fn kernel_weights(&self) -> (&[f64], &[f64]) {
        let np = self.basis.controls.len();
        (&self.coeff_x[..np], &self.coeff_y[..np])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_limit_at_zero() {
        assert_eq!(kernel(0.0), 0.0);
        assert_eq!(kernel(1.0), 0.0);
        assert!((kernel(4.0) - 4.0 * 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lattice_is_row_major() {
        let b = TpsBasis::for_lattice(3).unwrap();
        assert_eq!(b.controls()[0], (-1.0, -1.0));
        assert_eq!(b.controls()[1], (0.0, -1.0));
        assert_eq!(b.controls()[3], (-1.0, 0.0));
        assert_eq!(b.controls()[8], (1.0, 1.0));
    }

    #[test]
    fn weights_reproduce_affine_functions() {
        let b = TpsBasis::for_lattice(3).unwrap();
        let (x, y) = (0.37, -0.81);
        let w = b.weights_at(x, y);
        let sum: f64 = w.iter().sum();
        let sx: f64 = w.iter().zip(b.controls()).map(|(a, c)| a * c.0).sum();
        let sy: f64 = w.iter().zip(b.controls()).map(|(a, c)| a * c.1).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((sx - x).abs() < 1e-12 && (sy - y).abs() < 1e-12);
    }

    #[test]
    fn collinear_consistent_displacements_have_zero_kernel_weights() {
        // displacement is an affine function of the control position
        let b = TpsBasis::for_lattice(3).unwrap();
        let disp: Vec<f64> = b
            .controls()
            .iter()
            .flat_map(|&(x, y)| [0.1 * x - 0.2 * y + 0.05, 0.3 * y + 0.02 * x])
            .collect();
        let m = TpsModel::solve(b, &disp).unwrap();
        let (wx, wy) = m.kernel_weights();
        assert!(wx.iter().chain(wy).all(|w| w.abs() < 1e-12));
        let (x, y) = m.eval(0.4, 0.9);
        assert!((x - (0.4 + 0.1 * 0.4 - 0.2 * 0.9 + 0.05)).abs() < 1e-12);
        assert!((y - (0.9 + 0.3 * 0.9 + 0.02 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn larger_lattice_interpolates() {
        let b = TpsBasis::for_lattice(4).unwrap();
        let disp: Vec<f64> = (0..32).map(|v| ((v * 7 % 11) as f64 - 5.0) * 0.02).collect();
        let m = TpsModel::solve(b.clone(), &disp).unwrap();
        for (p, &(cx, cy)) in b.controls().iter().enumerate() {
            let (x, y) = m.eval(cx, cy);
            assert!((x - cx - disp[2 * p]).abs() < 1e-9);
            assert!((y - cy - disp[2 * p + 1]).abs() < 1e-9);
        }
        assert!(TpsBasis::for_lattice(1).is_err());
        assert!(TpsModel::solve(b, &disp[..30]).is_err());
    }
}
