//! Adaptive-moment (Adam) update rule with bias correction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self { cfg, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Descent direction scaled by the configured step: `params -= delta`
    /// minimizes, `params += delta` maximizes.
    pub fn delta(&mut self, grad: &[f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamConfig { step, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(p, &g)| {
                self.m[p] = beta1 * self.m[p] + (1.0 - beta1) * g;
                self.v[p] = beta2 * self.v[p] + (1.0 - beta2) * g * g;
                step * (self.m[p] / c1) / ((self.v[p] / c2).sqrt() + eps)
            })
            .collect()
    }

    pub fn step(&self) -> f64 {
        self.cfg.step
    }

    pub fn set_step(&mut self, step: f64) {
        self.cfg.step = step;
    }

    /// In-place descent step.
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        for (p, d) in params.iter_mut().zip(self.delta(grad)) {
            *p -= d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_unit_magnitude() {
        let mut a = Adam::new(AdamConfig { step: 0.1, ..Default::default() }, 2);
        let d = a.delta(&[3.0, -0.001]);
        assert!((d[0] - 0.1).abs() < 1e-6 && (d[1] + 0.1).abs() < 1e-4);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut a = Adam::new(AdamConfig { step: 0.05, ..Default::default() }, 2);
        let mut x = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (x[0] - 1.0), 4.0 * (x[1] + 0.5)];
            a.descend(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn validates() {
        assert!(AdamConfig { step: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
