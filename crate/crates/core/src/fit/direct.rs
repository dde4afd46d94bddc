use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Family, Transform, DEFAULT_TPS_LATTICE};
use crate::grids::FeatureGrid;
use crate::matching::{correlate, CorrelationTensor};
use crate::optim::{Adam, AdamConfig};
use crate::softinlier::{identity_mask, soft_inlier_count, warp_mask, MaskedSupport, ScoreBreakdown};

/// Coarse grid of similarity hypotheses scored before the ascent. Angles in
/// degrees, translations in normalized frame units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilaritySearch {
    pub max_rotation_deg: f64,
    pub rotation_steps: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_steps: usize,
    pub max_translation: f64,
    pub translation_steps: usize,
    /// Lower bound on the threshold used while scoring the grid.
    pub min_threshold: f64,
}

impl Default for SimilaritySearch {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            rotation_steps: 7,
            scale_min: 0.8,
            scale_max: 1.25,
            scale_steps: 5,
            max_translation: 0.3,
            translation_steps: 9,
            min_threshold: 1.5,
        }
    }
}

impl SimilaritySearch {
    fn values(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![(lo + hi) / 2.0];
        }
        (0..n).map(|a| lo + (hi - lo) * a as f64 / (n - 1) as f64).collect()
    }

    fn hypotheses(&self) -> Result<Vec<Transform>> {
        let mut out = Vec::new();
        let angles = Self::values(-self.max_rotation_deg, self.max_rotation_deg, self.rotation_steps);
        let scales = Self::values(self.scale_min.ln(), self.scale_max.ln(), self.scale_steps);
        let shifts = Self::values(-self.max_translation, self.max_translation, self.translation_steps);
        for &a in &angles {
            for &s in &scales {
                for &ty in &shifts {
                    for &tx in &shifts {
                        out.push(Transform::similarity(a.to_radians(), s.exp(), tx, ty)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Final family; affine is always fitted first.
    pub family: Family,
    /// Inlier threshold in grid units; `None` uses `max(h, w) / 30`.
    pub threshold: Option<f64>,
    pub iterations: usize,
    pub affine_step: f64,
    /// Step for the second stage (TPS displacements or homography).
    pub warp_step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub restarts: usize,
    pub seed: u64,
    /// A stage stops once `c` gained less than this over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    pub search: Option<SimilaritySearch>,
    pub tps_lattice: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: Family::Affine,
            threshold: None,
            iterations: 200,
            affine_step: 0.05,
            warp_step: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            restarts: 4,
            seed: 0,
            tolerance: 1e-6,
            patience: 25,
            search: Some(SimilaritySearch::default()),
            tps_lattice: DEFAULT_TPS_LATTICE,
        }
    }
}

impl FitConfig {
    pub fn for_family(family: Family) -> Self {
        Self { family, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("threshold must be positive, got {t}")));
            }
        }
        for step in [self.affine_step, self.warp_step] {
            self.adam(step).validate()?;
        }
        Ok(())
    }

    fn adam(&self, step: f64) -> AdamConfig {
        AdamConfig { step, beta1: self.beta1, beta2: self.beta2, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub transform: Transform,
    pub c: f64,
    /// `c` after every iteration of the chosen restart, all stages.
    pub trace: Vec<f64>,
    pub restart: usize,
    pub breakdown: ScoreBreakdown,
    /// The correlation carried no usable signal; `transform` is the identity.
    pub no_signal: bool,
    pub threshold: f64,
    /// Inlier count of the sparse candidate matches, RANSAC only.
    pub hard_inliers: Option<usize>,
}

/// Correlates both grids and maximizes the soft-inlier count.
pub fn fit_direct(f_s: &FeatureGrid, f_t: &FeatureGrid, cfg: &FitConfig) -> Result<AlignmentResult> {
    fit_direct_scores(&correlate(f_s, f_t)?, cfg)
}

struct Run {
    transform: Transform,
    c: f64,
    trace: Vec<f64>,
}

/// Adam ascent on `c` from `start`, with step halving whenever a step would
/// lower `c`.
fn ascend(support: &MaskedSupport, start: Transform, step: f64, cfg: &FitConfig, trace: &mut Vec<f64>) -> Result<Run> {
    let mut t = start;
    let (mut c, mut grad) = support.score_and_grad(&t)?;
    let mut adam = Adam::new(cfg.adam(step), t.dof());
    let base = trace.len();
    for _ in 0..cfg.iterations {
        let delta = adam.delta(&grad);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let params: Vec<f64> = t.params().iter().zip(&delta).map(|(p, d)| p + scale * d).collect();
            if let Ok(cand) = t.with_params(params) {
                if let Ok((c_new, g_new)) = support.score_and_grad(&cand) {
                    if c_new >= c {
                        accepted = Some((cand, c_new, g_new));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        if let Some((cand, c_new, g_new)) = accepted {
            t = cand;
            c = c_new;
            grad = g_new;
        }
        trace.push(c);
        let n = trace.len() - base;
        if n > cfg.patience && c - trace[trace.len() - 1 - cfg.patience] < cfg.tolerance {
            break;
        }
    }
    Ok(Run { transform: t, c, trace: Vec::new() })
}

fn perturb(t: &Transform, rng: &mut ChaCha8Rng) -> Result<Transform> {
    let p = t.params();
    let mut q = p.to_vec();
    for v in q.iter_mut().take(2) {
        *v += rng.random_range(-0.1..0.1);
    }
    q[2] += rng.random_range(-0.15..0.15);
    q[3] += rng.random_range(-0.1..0.1);
    q[4] += rng.random_range(-0.1..0.1);
    q[5] += rng.random_range(-0.15..0.15);
    Transform::new(Family::Affine, q)
}

fn best_hypothesis(support: &MaskedSupport, search: &SimilaritySearch) -> Result<Option<Transform>> {
    let mut best: Option<(f64, Transform)> = None;
    for t in search.hypotheses()? {
        let c = support.score(&t)?;
        if best.as_ref().is_none_or(|(b, _)| c > *b) {
            best = Some((c, t));
        }
    }
    Ok(best.filter(|(c, _)| *c > 0.0).map(|(_, t)| t))
}

fn second_stage(family: Family, affine: &Transform, lattice: usize) -> Result<Option<Transform>> {
    match family {
        Family::Affine => Ok(None),
        Family::Homography => affine.to_homography().map(Some),
        Family::Tps => affine.to_tps(lattice).map(Some),
    }
}

/// [`fit_direct`] on a precomputed correlation tensor.
pub fn fit_direct_scores(s: &CorrelationTensor, cfg: &FitConfig) -> Result<AlignmentResult> {
    cfg.validate()?;
    let (h, w) = s.grid_dims();
    let t = cfg.threshold.unwrap_or_else(|| crate::default_threshold(h, w));
    let support = MaskedSupport::from_scores(s.scores(), t)?;
    let m_id = identity_mask(h, w, t)?;
    let finish = |transform: Transform, c_trace: Vec<f64>, restart: usize, no_signal: bool| -> Result<AlignmentResult> {
        let breakdown = soft_inlier_count(s.scores(), &warp_mask(&m_id, &transform)?)?;
        Ok(AlignmentResult {
            c: breakdown.c,
            transform,
            trace: c_trace,
            restart,
            breakdown,
            no_signal,
            threshold: t,
            hard_inliers: None,
        })
    };

    let identity = Transform::identity(Family::Affine);
    let seeded = match &cfg.search {
        Some(search) if !support.is_empty() => {
            let wide = MaskedSupport::from_scores(s.scores(), t.max(search.min_threshold))?;
            best_hypothesis(&wide, search)?
        }
        _ => None,
    };
    let initial_c = support.score(&identity)?;
    if support.is_empty() || (initial_c == 0.0 && seeded.is_none() && support.score_and_grad(&identity)?.1.iter().all(|&g| g == 0.0)) {
        let id = Transform::identity(cfg.family);
        let trace = vec![0.0];
        return finish(id, trace, 0, true);
    }

    let anchor = seeded.clone().unwrap_or_else(|| identity.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Run)> = None;
    for restart in 0..cfg.restarts {
        let start = match (restart, &seeded) {
            (0, _) => identity.clone(),
            (1, Some(t)) => t.clone(),
            _ => perturb(&anchor, &mut rng)?,
        };
        let mut trace = Vec::new();
        let mut run = ascend(&support, start, cfg.affine_step, cfg, &mut trace)?;
        if let Some(next) = second_stage(cfg.family, &run.transform, cfg.tps_lattice)? {
            run = ascend(&support, next, cfg.warp_step, cfg, &mut trace)?;
        }
        run.trace = trace;
        if best.as_ref().is_none_or(|(_, b)| run.c > b.c) {
            best = Some((restart, run));
        }
    }
    let (restart, run) = best.expect("at least one restart");
    finish(run.transform, run.trace, restart, false)
}
