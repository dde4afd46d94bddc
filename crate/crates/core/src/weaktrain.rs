//! Weakly supervised training of a small transform regressor.
//!
//! A two-layer perceptron maps the flattened correlation tensor to transform
//! parameters and is trained to minimize `L = -c`, the negated soft-inlier
//! count of its own prediction. Training sees feature-grid pairs only: no
//! keypoints, no ground-truth transforms.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::WarpRange;
use crate::geometry::{Family, Transform};
use crate::grids::FeatureGrid;
use crate::matching::{correlate, CorrelationTensor};
use crate::optim::{Adam, AdamConfig};
use crate::softinlier::MaskedSupport;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Default first-layer step multiplier, see [`TrainConfig::first_layer_scale`].
pub const FIRST_LAYER_STEP_SCALE: f64 = 0.05;

/// Warp range of the bundled training demo: moderate similarity warps that
/// move most cells by up to about one grid cell on an 8x8 grid.
pub fn demo_range() -> WarpRange {
    WarpRange {
        max_rotation_deg: 20.0,
        scale_min: 1.0 / 1.15,
        scale_max: 1.15,
        max_translation: 0.3,
        ..WarpRange::none()
    }
}

/// `g = W2 relu(W1 vec(s) + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub version: u32,
    pub family: Family,
    /// Correlation grid `(h, w)`; the input has `(h w)^2` entries.
    pub grid: (usize, usize),
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelGrad {
    fn zeros(m: &RegressorModel) -> Self {
        Self { w1: vec![0.0; m.w1.len()], b1: vec![0.0; m.b1.len()], w2: vec![0.0; m.w2.len()], b2: vec![0.0; m.b2.len()] }
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    fn add_scaled(&mut self, other: &ModelGrad, k: f64) {
        for (a, b) in [(&mut self.w1, &other.w1), (&mut self.b1, &other.b1), (&mut self.w2, &other.w2), (&mut self.b2, &other.b2)] {
            a.iter_mut().zip(b.iter()).for_each(|(x, y)| *x += k * y);
        }
    }
}

impl RegressorModel {
    /// Random first layer, zero second layer and identity output bias, so
    /// the fresh model predicts the identity for every input.
    pub fn new(grid: (usize, usize), hidden: usize, family: Family, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        if grid.0 < 2 || grid.1 < 2 {
            return Err(Error::invalid(format!("grid must be at least 2x2, got {}x{}", grid.0, grid.1)));
        }
        let input = (grid.0 * grid.1).pow(2);
        let k = family.dof();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / input as f64).sqrt();
        Ok(Self {
            version: CHECKPOINT_VERSION,
            family,
            grid,
            hidden,
            w1: (0..hidden * input).map(|_| rng.random_range(-bound..bound)).collect(),
            b1: vec![0.0; hidden],
            w2: vec![0.0; k * hidden],
            b2: Transform::identity(family).params().to_vec(),
        })
    }

    pub fn input_len(&self) -> usize {
        (self.grid.0 * self.grid.1).pow(2)
    }

    pub fn output_len(&self) -> usize {
        self.b2.len()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::shape(format!("model has {} parameters, got {}", self.param_count(), p.len())));
        }
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let input = self.input_len();
        let k = self.family.dof();
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.w1.len() != self.hidden * input || self.b1.len() != self.hidden || self.w2.len() != k * self.hidden || self.b2.len() != k {
            return Err(Error::shape("checkpoint layer sizes disagree with its header"));
        }
        if !self.flat_params().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(())
    }

    fn input<'a>(&self, s: &'a CorrelationTensor) -> Result<&'a [f64]> {
        if s.grid_dims() != self.grid {
            return Err(Error::shape(format!("model expects a {:?} grid, got {:?}", self.grid, s.grid_dims())));
        }
        Ok(s.scores().data())
    }

    // hidden activations and output parameters
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let act: Vec<f64> = (0..self.hidden)
            .map(|r| {
                let row = &self.w1[r * n..(r + 1) * n];
                (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b1[r]).max(0.0)
            })
            .collect();
        let g = (0..self.output_len())
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>() + self.b2[o]
            })
            .collect();
        (act, g)
    }

    pub fn predict(&self, s: &CorrelationTensor) -> Result<Transform> {
        let (_, g) = self.forward(self.input(s)?);
        Transform::new(self.family, g)
    }

    /// `-c` of the model's prediction and its gradient; the scores are a
    /// constant input.
    pub fn loss_and_grad_scores(&self, s: &CorrelationTensor, support: &MaskedSupport) -> Result<(f64, ModelGrad)> {
        let x = self.input(s)?;
        let (act, g) = self.forward(x);
        let t = Transform::new(self.family, g)?;
        let (c, dc_dg) = support.score_and_grad(&t)?;
        let mut grad = ModelGrad::zeros(self);
        let dl_dg: Vec<f64> = dc_dg.iter().map(|v| -v).collect();
        let h = self.hidden;
        let mut dl_dact = vec![0.0; h];
        for (o, &d) in dl_dg.iter().enumerate() {
            grad.b2[o] = d;
            for r in 0..h {
                grad.w2[o * h + r] = d * act[r];
                dl_dact[r] += d * self.w2[o * h + r];
            }
        }
        let n = x.len();
        for r in 0..h {
            // relu' taken as 0 at the kink
            if act[r] <= 0.0 || dl_dact[r] == 0.0 {
                continue;
            }
            let d = dl_dact[r];
            grad.b1[r] = d;
            grad.w1[r * n..(r + 1) * n].iter_mut().zip(x).for_each(|(gw, xv)| *gw = d * xv);
        }
        Ok((-c, grad))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Loss `-c` and parameter gradients for one feature-grid pair.
pub fn loss_and_grad(model: &RegressorModel, f_s: &FeatureGrid, f_t: &FeatureGrid, t: f64) -> Result<(f64, ModelGrad)> {
    let s = correlate(f_s, f_t)?;
    let support = MaskedSupport::from_scores(s.scores(), t)?;
    model.loss_and_grad_scores(&s, &support)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub hidden: usize,
    pub family: Family,
    /// Inlier threshold in grid units; `None` uses `max(h, w) / 30`.
    pub threshold: Option<f64>,
    /// An epoch that raises the mean training loss by more than this is
    /// undone and the step halved; accepted epochs grow the step back
    /// towards `step`. `None` disables the check.
    pub backtrack: Option<f64>,
    /// Step multiplier for the first-layer weights. Adam moves every weight
    /// by about the step, and a first-layer unit sums that over thousands of
    /// inputs.
    pub first_layer_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 16,
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            hidden: 64,
            family: Family::Affine,
            threshold: None,
            backtrack: Some(1e-3),
            first_layer_scale: FIRST_LAYER_STEP_SCALE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        if !(self.first_layer_scale > 0.0 && self.first_layer_scale.is_finite()) {
            return Err(Error::invalid(format!("first-layer step scale must be positive, got {}", self.first_layer_scale)));
        }
        AdamConfig { step: self.step, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RegressorModel,
    /// Mean loss over the training pairs at initialization, then after
    /// every epoch.
    pub epoch_loss: Vec<f64>,
    /// Epochs undone by backtracking.
    pub rejected_epochs: Vec<usize>,
}

struct Prepared {
    s: CorrelationTensor,
    support: MaskedSupport,
}

fn mean_loss(model: &RegressorModel, data: &[Prepared]) -> Result<f64> {
    let losses = data
        .par_iter()
        .map(|p| model.loss_and_grad_scores(&p.s, &p.support).map(|(l, _)| l))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mini-batch Adam descent on the mean of `-c` over `pairs` of
/// (source, target) feature grids.
pub fn train(pairs: &[(FeatureGrid, FeatureGrid)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = pairs.first().ok_or_else(|| Error::invalid("training needs at least one pair"))?;
    let grid = (first.0.h(), first.0.w());
    let t = cfg.threshold.unwrap_or_else(|| crate::default_threshold(grid.0, grid.1));
    let data = pairs
        .par_iter()
        .map(|(a, b)| {
            let s = correlate(a, b)?;
            if s.grid_dims() != grid {
                return Err(Error::shape(format!("pair grid {:?} differs from the first pair's {grid:?}", s.grid_dims())));
            }
            let support = MaskedSupport::from_scores(s.scores(), t)?;
            Ok(Prepared { s, support })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = RegressorModel::new(grid, cfg.hidden, cfg.family, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig { step: cfg.step, beta1: cfg.beta1, beta2: cfg.beta2, eps: 1e-8 },
        model.param_count(),
    );
    let first_scale = cfg.first_layer_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = vec![mean_loss(&model, &data)?];
    let mut rejected_epochs = Vec::new();
    for epoch in 0..cfg.epochs {
        let snapshot = (model.clone(), adam.clone());
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let grads = batch
                .par_iter()
                .map(|&i| model.loss_and_grad_scores(&data[i].s, &data[i].support).map(|(_, g)| g))
                .collect::<Result<Vec<_>>>()?;
            let mut total = ModelGrad::zeros(&model);
            for g in &grads {
                total.add_scaled(g, 1.0 / batch.len() as f64);
            }
            let mut params = model.flat_params();
            let n1 = model.w1.len();
            for (p, (v, d)) in params.iter_mut().zip(adam.delta(&total.flat())).enumerate() {
                *v -= if p < n1 { first_scale * d } else { d };
            }
            model.set_flat_params(&params)?;
        }
        let loss = mean_loss(&model, &data)?;
        let prev = *epoch_loss.last().expect("initial loss");
        match cfg.backtrack {
            Some(tol) if loss > prev + tol => {
                let step = adam.step() * 0.5;
                (model, adam) = snapshot;
                adam.set_step(step);
                rejected_epochs.push(epoch);
                epoch_loss.push(prev);
            }
            _ => {
                adam.set_step((adam.step() * 2.0).min(cfg.step));
                epoch_loss.push(loss);
            }
        }
    }
    Ok(TrainOutcome { model, epoch_loss, rejected_epochs })
}
