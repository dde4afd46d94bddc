use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{format_manifest, read_manifest, PairRecord};
use super::report::{now_ms, ConfigEcho, PairReport, RunReport, Status, Timestamps};
use super::{Cli, Command, EvalArgs, PairArgs, BUNDLED_LINE_POINTS};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, format_keypoints_csv, mask_iou, read_keypoints_csv, ImageSizes};
use crate::features::{
    extract_descriptors, load_pgm, procedural_texture, render_warp, save_pgm, synth_keypoints, synth_pair, FramedTransform,
    GrayImage, GridLayout, WarpRange,
};
use crate::fit::{fit_direct_scores, fit_line_demo, fit_ransac, FitConfig, LineDemoConfig, LineMode, RansacConfig};
use crate::geometry::{Family, PointWarp, Transform, TransformRecord};
use crate::grids::{l2_normalize, read_fgrid, write_fgrid, FeatureGrid};
use crate::matching::{correlate, CorrelationTensor};
use crate::softinlier::{identity_mask, soft_inlier_count, warp_mask, ScoreBreakdown};
use crate::weaktrain::{train, TrainConfig};

pub(super) fn dispatch(cli: &Cli) -> Result<Option<String>> {
    match &cli.command {
        Command::Align { pair, eval, iterations, restarts } => {
            let est = Estimator::Direct(fit_config(cli, *iterations, *restarts)?);
            single(cli, "align", pair, eval, &est)
        }
        Command::Eval { manifest, eval, iterations, restarts } => {
            let est = Estimator::Direct(fit_config(cli, *iterations, *restarts)?);
            eval_manifest(cli, manifest, eval, &est)
        }
        Command::Synth { n, image_size, keypoints, magnitude } => synth(cli, *n, *image_size, *keypoints, *magnitude),
        Command::Train { manifest, epochs, batch, step, hidden } => {
            let cfg = TrainConfig {
                epochs: *epochs,
                batch: *batch,
                step: *step,
                seed: cli.seed,
                hidden: *hidden,
                family: cli.family,
                threshold: cli.t,
                ..TrainConfig::default()
            };
            train_cmd(cli, manifest, &cfg)
        }
        Command::Linedemo { points, mode, iterations, angle_steps, rho_step } => {
            let cfg = LineDemoConfig {
                t: cli.t.unwrap_or(0.5),
                mode: *mode,
                iterations: *iterations,
                seed: cli.seed,
                angle_steps: *angle_steps,
                rho_step: *rho_step,
                ..LineDemoConfig::default()
            };
            linedemo(points.as_deref(), &cfg)
        }
        Command::Score { pair, eval, transform } => {
            let text = fs::read_to_string(transform).map_err(|e| Error::io(transform, e))?;
            let rec: TransformRecord = serde_json::from_str(&text)
                .map_err(|e| Error::Parse { path: transform.display().to_string(), line: e.line(), msg: e.to_string() })?;
            single(cli, "score", pair, eval, &Estimator::Given(Transform::from_record(&rec)?))
        }
        Command::Ransac { pair, eval, iterations, min_score_ratio } => {
            let cfg = RansacConfig {
                family: cli.family,
                threshold: cli.t,
                iterations: *iterations,
                seed: cli.seed,
                min_score_ratio: *min_score_ratio,
            };
            single(cli, "ransac", pair, eval, &Estimator::Ransac(cfg))
        }
    }
}

fn fit_config(cli: &Cli, iterations: Option<usize>, restarts: Option<usize>) -> Result<FitConfig> {
    let mut cfg = FitConfig::for_family(cli.family);
    cfg.threshold = cli.t;
    cfg.seed = cli.seed;
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    if let Some(n) = restarts {
        cfg.restarts = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Descriptors of one input plus the image layout when it came from a PGM.
struct Side {
    grid: FeatureGrid,
    layout: Option<GridLayout>,
}

fn load_side(path: &Path, cli: &Cli) -> Result<Side> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => {
            let img = load_pgm(path)?;
            let (h, w) = cli.grid_dims()?;
            let layout = GridLayout::for_image(&img, h, w)?;
            Ok(Side { grid: extract_descriptors(&img, cli.descriptor, h, w)?, layout: Some(layout) })
        }
        Some("fgrid") => Ok(Side { grid: l2_normalize(&read_fgrid(path)?)?.grid, layout: None }),
        _ => Err(Error::InvalidInput(format!("{}: expected a .pgm or .fgrid file", path.display()))),
    }
}

enum Estimator {
    Direct(FitConfig),
    Ransac(RansacConfig),
    Given(Transform),
}

struct Fitted {
    transform: Transform,
    breakdown: ScoreBreakdown,
    threshold: f64,
    no_signal: Option<bool>,
    hard_inliers: Option<usize>,
}

fn estimate(s: &CorrelationTensor, est: &Estimator, t: Option<f64>) -> Result<Fitted> {
    let r = match est {
        Estimator::Direct(cfg) => fit_direct_scores(s, cfg)?,
        Estimator::Ransac(cfg) => fit_ransac(s, cfg)?,
        Estimator::Given(tr) => {
            let (h, w) = s.grid_dims();
            let threshold = t.unwrap_or_else(|| crate::default_threshold(h, w));
            let m = warp_mask(&identity_mask(h, w, threshold)?, tr)?;
            let breakdown = soft_inlier_count(s.scores(), &m)?;
            return Ok(Fitted { transform: tr.clone(), breakdown, threshold, no_signal: None, hard_inliers: None });
        }
    };
    Ok(Fitted {
        transform: r.transform,
        breakdown: r.breakdown,
        threshold: r.threshold,
        no_signal: Some(r.no_signal),
        hard_inliers: r.hard_inliers,
    })
}

struct PairInputs<'a> {
    id: &'a str,
    source: &'a Path,
    target: &'a Path,
    keypoints: Option<&'a Path>,
    src_mask: Option<&'a Path>,
    tgt_mask: Option<&'a Path>,
}

fn try_pair(cli: &Cli, p: &PairInputs, eval: &EvalArgs, est: &Estimator) -> Result<PairReport> {
    let start = now_ms();
    let src = load_side(p.source, cli)?;
    let tgt = load_side(p.target, cli)?;
    let s = correlate(&src.grid, &tgt.grid)?;
    let fit = estimate(&s, est, cli.t)?;

    // Keypoints and masks live in image frames when both inputs are images,
    // otherwise in the bare unit square of the feature grids.
    let (warp, sizes, framed): (Box<dyn PointWarp + Sync>, ImageSizes, bool) = match (src.layout, tgt.layout) {
        (Some(ls), Some(lt)) => (
            Box::new(FramedTransform::new(fit.transform.clone(), ls, lt)),
            ImageSizes { ws: ls.image_w, hs: ls.image_h, wt: lt.image_w, ht: lt.image_h },
            true,
        ),
        _ => (
            Box::new(fit.transform.clone()),
            ImageSizes { ws: src.grid.w(), hs: src.grid.h(), wt: tgt.grid.w(), ht: tgt.grid.h() },
            false,
        ),
    };

    let mut r = PairReport::empty(p.id, start);
    r.transform = Some(fit.transform.record());
    r.threshold = Some(fit.threshold);
    r.c = Some(fit.breakdown.c);
    r.no_signal = fit.no_signal;
    r.hard_inliers = fit.hard_inliers;
    let top = fit.breakdown.top(eval.top_k);
    r.inliers = top.inliers;
    r.contributions = Some(top.contributions);

    if let Some(path) = p.keypoints {
        let kps = read_keypoints_csv(path, sizes)?;
        let alpha = eval.alpha.unwrap_or(eval.protocol.default_alpha());
        let rep = evaluate(&kps, warp.as_ref(), eval.protocol, alpha)?;
        r.pck = Some(rep.pck);
        r.keypoints = Some(rep.errors.len());
        r.correct_keypoints = Some(rep.correct());
        r.eval = Some(rep);
    }
    match (p.src_mask, p.tgt_mask) {
        (Some(a), Some(b)) => {
            let iou = mask_iou(&load_pgm(a)?, &load_pgm(b)?, warp.as_ref(), framed.then_some(sizes))?;
            r.iou = Some(iou.iou);
            r.iou_both_empty = Some(iou.both_empty);
        }
        (None, None) => {}
        _ => return Err(Error::InvalidInput("mask IoU needs both --src-mask and --tgt-mask".into())),
    }
    r.timestamps = Timestamps { start_unix_ms: start, end_unix_ms: now_ms() };
    Ok(r)
}

fn echo(cli: &Cli, eval: &EvalArgs) -> Result<ConfigEcho> {
    let (h, w) = cli.grid_dims()?;
    Ok(ConfigEcho {
        seed: cli.seed,
        family: cli.family,
        t: cli.t,
        descriptor: cli.descriptor,
        grid: [h, w],
        protocol: eval.protocol,
        alpha: eval.alpha.unwrap_or(eval.protocol.default_alpha()),
        top_k: eval.top_k,
    })
}

fn single(cli: &Cli, command: &'static str, pair: &PairArgs, eval: &EvalArgs, est: &Estimator) -> Result<Option<String>> {
    let start = now_ms();
    let config = echo(cli, eval)?;
    let inputs = PairInputs {
        id: "pair",
        source: &pair.source,
        target: &pair.target,
        keypoints: pair.keypoints.as_deref(),
        src_mask: pair.src_mask.as_deref(),
        tgt_mask: pair.tgt_mask.as_deref(),
    };
    let r = try_pair(cli, &inputs, eval, est)?;
    to_json(&RunReport::new(command, config, vec![r], start)).map(Some)
}

fn eval_manifest(cli: &Cli, manifest: &Path, eval: &EvalArgs, est: &Estimator) -> Result<Option<String>> {
    let start = now_ms();
    let config = echo(cli, eval)?;
    let recs = read_manifest(manifest)?;
    if recs.is_empty() {
        return Err(Error::InvalidInput(format!("{}: manifest has no pairs", manifest.display())));
    }
    // collect() on an indexed parallel iterator keeps manifest order
    let pairs: Vec<PairReport> = recs
        .par_iter()
        .map(|rec| {
            let inputs = PairInputs {
                id: &rec.id,
                source: &rec.source,
                target: &rec.target,
                keypoints: rec.keypoints.as_deref(),
                src_mask: rec.src_mask.as_deref(),
                tgt_mask: rec.tgt_mask.as_deref(),
            };
            let t0 = now_ms();
            try_pair(cli, &inputs, eval, est).unwrap_or_else(|e| PairReport::failed(rec.id.clone(), t0, e.to_string()))
        })
        .collect();
    for p in pairs.iter().filter(|p| p.status == Status::Error) {
        eprintln!("warning: pair {}: {}", p.id, p.error.as_deref().unwrap_or(""));
    }
    if pairs.iter().all(|p| p.status == Status::Error) {
        return Err(Error::InvalidInput(format!("{}: no pair could be aligned", manifest.display())));
    }
    to_json(&RunReport::new("eval", config, pairs, start)).map(Some)
}

/// Centered disk covering the middle of a square image.
fn disk_mask(side: usize) -> Result<GrayImage> {
    let c = side as f64 / 2.0;
    let r2 = (0.3 * side as f64).powi(2);
    GrayImage::from_fn(side, side, |i, j| {
        let (y, x) = (i as f64 + 0.5 - c, j as f64 + 0.5 - c);
        (y * y + x * x < r2) as u8 as f64
    })
}

fn binary(img: &GrayImage) -> Result<GrayImage> {
    let bits = img.binarize();
    GrayImage::from_fn(img.height(), img.width(), |r, c| bits[r * img.width() + c] as u8 as f64)
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    family: Family,
    pairs: usize,
    manifest: &'a Path,
}

fn synth(cli: &Cli, n: usize, size: usize, n_kps: usize, magnitude: f64) -> Result<Option<String>> {
    let dir = cli.out.as_ref().ok_or_else(|| Error::InvalidInput("synth needs --out DIR".into()))?;
    if n == 0 {
        return Err(Error::InvalidInput("--n must be at least 1".into()));
    }
    let range = WarpRange::scaled(magnitude)?;
    let (gh, gw) = cli.grid_dims()?;
    let src_mask = disk_mask(size)?;
    let pairs = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = cli.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let img = procedural_texture(size, size, seed)?;
            let pair = synth_pair(&img, cli.family, &range, cli.descriptor, gh, gw, seed)?;
            let kps = synth_keypoints(&pair, n_kps, seed)?;
            let tgt_mask = binary(&render_warp(&src_mask, &pair.gt_warp())?)?;
            Ok((seed, pair, kps, tgt_mask))
        })
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut recs = Vec::with_capacity(n);
    for (i, (seed, pair, kps, tgt_mask)) in pairs.iter().enumerate() {
        let id = format!("pair{i:04}");
        let name = |suffix: &str| PathBuf::from(format!("{id}.{suffix}"));
        let rec = PairRecord {
            id: id.clone(),
            source: name("src.pgm"),
            target: name("tgt.pgm"),
            keypoints: Some(name("kps.csv")),
            src_mask: Some(name("src_mask.pgm")),
            tgt_mask: Some(name("tgt_mask.pgm")),
            source_fgrid: Some(name("src.fgrid")),
            target_fgrid: Some(name("tgt.fgrid")),
            gt_transform: Some(pair.gt.record()),
            seed: Some(*seed),
        };
        save_pgm(&pair.source_image, dir.join(&rec.source))?;
        save_pgm(&pair.target_image, dir.join(&rec.target))?;
        save_pgm(&src_mask, dir.join(name("src_mask.pgm")))?;
        save_pgm(tgt_mask, dir.join(name("tgt_mask.pgm")))?;
        write_fgrid(&pair.source, dir.join(name("src.fgrid")))?;
        write_fgrid(&pair.target, dir.join(name("tgt.fgrid")))?;
        let kp_path = dir.join(name("kps.csv"));
        fs::write(&kp_path, format_keypoints_csv(kps)).map_err(|e| Error::io(&kp_path, e))?;
        recs.push(rec);
    }
    let manifest = dir.join("manifest.jsonl");
    fs::write(&manifest, format_manifest(&recs)?).map_err(|e| Error::io(&manifest, e))?;
    let summary = SynthSummary {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "synth",
        seed: cli.seed,
        family: cli.family,
        pairs: n,
        manifest: &manifest,
    };
    to_json(&summary).map(Some)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    family: Family,
    t: Option<f64>,
    descriptor: crate::features::DescriptorKind,
    epochs: usize,
    batch: usize,
    step: f64,
    hidden: usize,
    pairs: usize,
    epoch_loss: &'a [f64],
    rejected_epochs: &'a [usize],
    checkpoint: &'a Path,
    timestamps: Timestamps,
}

fn train_cmd(cli: &Cli, manifest: &Path, cfg: &TrainConfig) -> Result<Option<String>> {
    let start = now_ms();
    let out = cli.out.as_ref().ok_or_else(|| Error::InvalidInput("train needs --out CHECKPOINT".into()))?;
    cfg.validate()?;
    let recs = read_manifest(manifest)?;
    if recs.is_empty() {
        return Err(Error::InvalidInput(format!("{}: manifest has no pairs", manifest.display())));
    }
    let pairs = recs
        .par_iter()
        .map(|r| Ok((load_side(&r.source, cli)?.grid, load_side(&r.target, cli)?.grid)))
        .collect::<Result<Vec<_>>>()?;
    let outcome = train(&pairs, cfg)?;
    outcome.model.save(out)?;
    let report = TrainReport {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "train",
        seed: cfg.seed,
        family: cfg.family,
        t: cfg.threshold,
        descriptor: cli.descriptor,
        epochs: cfg.epochs,
        batch: cfg.batch,
        step: cfg.step,
        hidden: cfg.hidden,
        pairs: pairs.len(),
        epoch_loss: &outcome.epoch_loss,
        rejected_epochs: &outcome.rejected_epochs,
        checkpoint: out,
        timestamps: Timestamps { start_unix_ms: start, end_unix_ms: now_ms() },
    };
    to_json(&report).map(Some)
}

#[derive(Debug, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
}

/// Reads `x,y` rows.
pub(crate) fn parse_points_csv(text: &str, origin: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse { path: origin.into(), line: 1, msg: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
        return Err(Error::Parse { path: origin.into(), line: 1, msg: "header must be x,y".into() });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<PointRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { path: origin.into(), line, msg: e.to_string() }
        })?;
        out.push((row.x, row.y));
    }
    Ok(out)
}

#[derive(Serialize)]
struct LineReport {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    t: f64,
    mode: LineMode,
    points: usize,
    theta: f64,
    rho: f64,
    count: f64,
    inliers: Vec<usize>,
    degenerate: bool,
}

fn linedemo(points: Option<&Path>, cfg: &LineDemoConfig) -> Result<Option<String>> {
    let pts = match points {
        Some(p) => parse_points_csv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?, &p.display().to_string())?,
        None => parse_points_csv(BUNDLED_LINE_POINTS, "<bundled linedemo.csv>")?,
    };
    let fit = fit_line_demo(&pts, cfg)?;
    to_json(&LineReport {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "linedemo",
        seed: cfg.seed,
        t: cfg.t,
        mode: fit.mode,
        points: pts.len(),
        theta: fit.line.theta,
        rho: fit.line.rho,
        count: fit.count,
        inliers: fit.inliers,
        degenerate: fit.degenerate,
    })
    .map(Some)
}
