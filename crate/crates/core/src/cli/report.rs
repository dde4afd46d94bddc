//! JSON run reports. Everything except the `timestamps` objects is a pure
//! function of the inputs and flags.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::evalkit::{summarize_pck, EvalReport, Protocol};
use crate::features::DescriptorKind;
use crate::geometry::{Family, TransformRecord};
use crate::softinlier::InlierMatch;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Timestamps {
    pub start_unix_ms: u128,
    pub end_unix_ms: u128,
}

pub(crate) fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Flags that shaped the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub seed: u64,
    pub family: Family,
    /// Requested threshold; `null` means `max(h, w) / 30` per pair.
    pub t: Option<f64>,
    pub descriptor: DescriptorKind,
    pub grid: [usize; 2],
    pub protocol: Protocol,
    pub alpha: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub id: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_signal: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hard_inliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pck: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_keypoints: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou_both_empty: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contributions: Option<Vec<Vec<f64>>>,
    pub inliers: Vec<InlierMatch>,
    pub timestamps: Timestamps,
    /// Keypoint evaluation kept for pooling; not serialized.
    #[serde(skip)]
    pub eval: Option<EvalReport>,
}

impl PairReport {
    pub fn empty(id: impl Into<String>, start: u128) -> Self {
        Self {
            id: id.into(),
            status: Status::Ok,
            error: None,
            transform: None,
            threshold: None,
            c: None,
            no_signal: None,
            hard_inliers: None,
            pck: None,
            keypoints: None,
            correct_keypoints: None,
            iou: None,
            iou_both_empty: None,
            contributions: None,
            inliers: Vec::new(),
            timestamps: Timestamps { start_unix_ms: start, end_unix_ms: start },
            eval: None,
        }
    }

    pub fn failed(id: impl Into<String>, start: u128, msg: String) -> Self {
        let mut r = Self::empty(id, start);
        r.status = Status::Error;
        r.error = Some(msg);
        r.timestamps.end_unix_ms = now_ms();
        r
    }
}

/// Means over the succeeded pairs that carry each field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub pairs: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_c: Option<f64>,
    /// Mean of the per-pair PCK values.
    pub pck_per_pair_mean: Option<f64>,
    /// Correct keypoints over all keypoints, pooled across pairs.
    pub pck_pooled: Option<f64>,
    pub mean_iou: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl Aggregate {
    pub fn of(pairs: &[PairReport]) -> Self {
        let ok: Vec<&PairReport> = pairs.iter().filter(|p| p.status == Status::Ok).collect();
        let evals: Vec<EvalReport> = ok.iter().filter_map(|p| p.eval.clone()).collect();
        let summary = summarize_pck(&evals);
        Self {
            pairs: pairs.len(),
            succeeded: ok.len(),
            failed: pairs.len() - ok.len(),
            mean_c: mean(ok.iter().filter_map(|p| p.c)),
            pck_per_pair_mean: summary.map(|s| s.pck_per_pair_mean),
            pck_pooled: summary.map(|s| s.pck_pooled),
            mean_iou: mean(ok.iter().filter_map(|p| p.iou)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub report_version: u32,
    pub command: &'static str,
    pub config: ConfigEcho,
    pub pairs: Vec<PairReport>,
    pub aggregate: Aggregate,
    pub timestamps: Timestamps,
}

impl RunReport {
    pub fn new(command: &'static str, config: ConfigEcho, pairs: Vec<PairReport>, start: u128) -> Self {
        let aggregate = Aggregate::of(&pairs);
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            report_version: REPORT_VERSION,
            command,
            config,
            pairs,
            aggregate,
            timestamps: Timestamps { start_unix_ms: start, end_unix_ms: now_ms() },
        }
    }
}
