//! Command-line front end: argument parsing, manifests and JSON reports.
//!
//! Every command is deterministic given `--seed`; only the `timestamps`
//! objects of a report change between identical runs. Reports are written
//! whole once the command has succeeded, so a failing run leaves no file.

mod commands;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evalkit::Protocol;
use crate::features::DescriptorKind;
use crate::fit::LineMode;
use crate::geometry::Family;

pub use manifest::{format_manifest, parse_manifest, read_manifest, PairRecord};
pub use report::{Aggregate, ConfigEcho, PairReport, RunReport, Status, Timestamps};

/// Line-fitting points shipped with the tool, used when `linedemo` gets no
/// `--points`.
pub const BUNDLED_LINE_POINTS: &str = include_str!("../../data/linedemo.csv");

#[derive(Debug, Parser)]
#[command(name = "softalign", version, about = "Dense alignment by differentiable soft-inlier scoring")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Feature grid size used when describing PGM images; one value means square.
    #[arg(long, global = true, num_args = 1..=2, value_names = ["H", "W"])]
    pub grid: Vec<usize>,

    /// Inlier threshold in grid units (default max(h, w) / 30; 0.5 for linedemo).
    #[arg(long = "t", global = true)]
    pub t: Option<f64>,

    #[arg(long, global = true, default_value = "affine")]
    pub family: Family,

    #[arg(long, global = true, default_value = "gradhist")]
    pub descriptor: DescriptorKind,

    /// Output file (reports, checkpoints) or directory (synth).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Keypoint CSV (xs,ys,xt,yt in [0, 1]).
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    #[arg(long)]
    pub src_mask: Option<PathBuf>,
    #[arg(long)]
    pub tgt_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "pfpascal")]
    pub protocol: Protocol,
    /// PCK threshold factor (default 0.1 pfpascal, 0.05 tss).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Strongest inlier matches kept per pair.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a transform between two images or feature grids by soft-inlier ascent.
    Align {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Align every pair of a JSONL manifest and aggregate the metrics.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Write synthetic pairs with keypoints, masks and a manifest to --out.
    Synth {
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Side of the square procedural images.
        #[arg(long, default_value_t = 128)]
        image_size: usize,
        #[arg(long, default_value_t = 20)]
        keypoints: usize,
        /// Scale of the default warp range, in [0, 1].
        #[arg(long, default_value_t = 1.0)]
        magnitude: f64,
    },
    /// Train the toy transform regressor on a manifest; writes a checkpoint to --out.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
    },
    /// Fit a line to 2-D points by RANSAC or by the soft rasterized count.
    Linedemo {
        /// CSV with header x,y; the bundled example when absent.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, default_value = "soft-grid")]
        mode: LineMode,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 180)]
        angle_steps: usize,
        #[arg(long, default_value_t = 0.5)]
        rho_step: f64,
    },
    /// Soft-inlier count of a given transform JSON ({family, params}).
    Score {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        transform: PathBuf,
    },
    /// Hard-inlier RANSAC baseline on the correlation's best matches.
    Ransac {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        /// Minimum match score relative to the strongest one.
        #[arg(long, default_value_t = 0.5)]
        min_score_ratio: f64,
    },
}

impl Cli {
    pub(crate) fn grid_dims(&self) -> Result<(usize, usize)> {
        let (h, w) = match self.grid.as_slice() {
            [] => (16, 16),
            [n] => (*n, *n),
            [h, w] => (*h, *w),
            _ => unreachable!("clap limits --grid to two values"),
        };
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!("--grid must be positive, got {h}x{w}")));
        }
        Ok((h, w))
    }
}

/// Runs a parsed command, writing its JSON to `--out` or to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    if let Some(t) = cli.t {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidInput(format!("--t must be positive, got {t}")));
        }
    }
    let text = commands::dispatch(cli)?;
    if let Some(text) = text {
        emit(cli, &text, stdout)?;
    }
    Ok(())
}

fn emit(cli: &Cli, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match (&cli.out, &cli.command) {
        (Some(path), Command::Align { .. } | Command::Eval { .. } | Command::Score { .. } | Command::Ransac { .. } | Command::Linedemo { .. }) => {
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        _ => stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Parses `args` and runs; returns the process exit code. Usage errors exit
/// with 2, input errors with 2 and broken invariants with 3.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
