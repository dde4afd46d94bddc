//! Differentiable soft-inlier scoring for dense semantic alignment.
//!
//! Two images are described by dense grids of L2-normalized descriptors
//! ([`grids`], [`features`]). Their normalized correlation ([`matching`]) is
//! scored against a parametric transform ([`geometry`]) by warping a binary
//! identity inlier mask with a spatial transformer and summing the masked
//! scores ([`softinlier`]). The score is differentiable in both the transform
//! parameters and the match scores, so it can drive direct fitting ([`fit`])
//! or train a transform regressor from matching pairs alone ([`weaktrain`]).
//! [`evalkit`] implements keypoint-transfer PCK and mask IoU.

pub mod cli;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod fit;
pub mod geometry;
pub mod grids;
pub mod matching;
pub mod optim;
pub mod softinlier;
pub mod weaktrain;

pub use error::{Error, Result};
pub use geometry::{Family, Transform};
pub use grids::{FeatureGrid, GridPoint, Tensor4};
pub use matching::{correlate, CorrelationTensor};
pub use softinlier::{identity_mask, soft_inlier_count, warp_mask, InlierMask};

/// Default inlier threshold in grid units: `max(h, w) / 30`.
pub fn default_threshold(h: usize, w: usize) -> f64 {
    h.max(w) as f64 / 30.0
}
