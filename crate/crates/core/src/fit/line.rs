//! Line fitting with a RANSAC inlier count and with its discrete soft
//! counterpart, where points are rasterized to scores on a grid and a line
//! is scored by the scores inside its band.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineMode {
    Ransac,
    SoftGrid,
}

impl fmt::Display for LineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineMode::Ransac => "ransac",
            LineMode::SoftGrid => "soft-grid",
        })
    }
}

impl FromStr for LineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ransac" => Ok(LineMode::Ransac),
            "soft-grid" | "softgrid" | "soft_grid" => Ok(LineMode::SoftGrid),
            other => Err(Error::invalid(format!("unknown line mode {other:?}"))),
        }
    }
}

/// `x cos(theta) + y sin(theta) = rho`, with `theta` in `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub theta: f64,
    pub rho: f64,
}

impl Line {
    pub fn through(p: (f64, f64), q: (f64, f64)) -> Option<Line> {
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let len = dx.hypot(dy);
        if len == 0.0 {
            return None;
        }
        let (mut nx, mut ny) = (-dy / len, dx / len);
        let mut theta = ny.atan2(nx);
        if theta < 0.0 {
            theta += PI;
            nx = -nx;
            ny = -ny;
        }
        if theta >= PI {
            theta -= PI;
        }
        Some(Line { theta, rho: nx * p.0 + ny * p.1 })
    }

    pub fn distance(&self, p: (f64, f64)) -> f64 {
        (p.0 * self.theta.cos() + p.1 * self.theta.sin() - self.rho).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineDemoConfig {
    pub t: f64,
    pub mode: LineMode,
    /// Sampled point pairs, ransac mode.
    pub iterations: usize,
    pub seed: u64,
    /// Angles `a * pi / angle_steps` of the soft-grid hypothesis grid,
    /// `a` in `0..angle_steps`.
    pub angle_steps: usize,
    /// Offsets `b * rho_step` of the soft-grid hypothesis grid, `|b|` up to
    /// one step past the raster radius.
    pub rho_step: f64,
    /// Raster cell side.
    pub cell: f64,
}

impl Default for LineDemoConfig {
    fn default() -> Self {
        Self { t: 0.5, mode: LineMode::SoftGrid, iterations: 500, seed: 0, angle_steps: 180, rho_step: 0.5, cell: 1.0 }
    }
}

/// Point counts on a regular grid anchored at the lower-left cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub rows: usize,
    pub cols: usize,
    pub counts: Vec<f64>,
}

impl Raster {
    pub fn from_points(points: &[(f64, f64)], cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::invalid(format!("cell size must be positive, got {cell}")));
        }
        let x0 = points.iter().map(|p| (p.0 / cell).round()).fold(f64::INFINITY, f64::min) * cell;
        let y0 = points.iter().map(|p| (p.1 / cell).round()).fold(f64::INFINITY, f64::min) * cell;
        let idx: Vec<(usize, usize)> = points
            .iter()
            .map(|p| (((p.1 - y0) / cell).round() as usize, ((p.0 - x0) / cell).round() as usize))
            .collect();
        let rows = idx.iter().map(|p| p.0).max().unwrap_or(0) + 1;
        let cols = idx.iter().map(|p| p.1).max().unwrap_or(0) + 1;
        let mut counts = vec![0.0; rows * cols];
        for (i, j) in idx {
            counts[i * cols + j] += 1.0;
        }
        Ok(Self { x0, y0, cell, rows, cols, counts })
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + j as f64 * self.cell, self.y0 + i as f64 * self.cell)
    }

    /// Largest distance of a cell center from the origin.
    pub fn radius(&self) -> f64 {
        let corners = [(0, 0), (0, self.cols - 1), (self.rows - 1, 0), (self.rows - 1, self.cols - 1)];
        corners.iter().map(|&(i, j)| {
            let (x, y) = self.center(i, j);
            x.hypot(y)
        }).fold(0.0, f64::max)
    }
}

/// `sum_ij s_ij m_ij` with the band mask `m_ij = [d((i, j), line) < t]`.
pub fn line_demo_count(raster: &Raster, line: &Line, t: f64) -> f64 {
    band_score(raster, line, t).0
}

// count and the score-weighted squared distance inside the band
fn band_score(raster: &Raster, line: &Line, t: f64) -> (f64, f64) {
    let (mut c, mut r) = (0.0, 0.0);
    for i in 0..raster.rows {
        for j in 0..raster.cols {
            let s = raster.counts[i * raster.cols + j];
            if s == 0.0 {
                continue;
            }
            let d = line.distance(raster.center(i, j));
            if d < t {
                c += s;
                r += s * d * d;
            }
        }
    }
    (c, r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineFit {
    pub line: Line,
    pub count: f64,
    /// Indices of the input points within `t` of the line.
    pub inliers: Vec<usize>,
    /// All points coincide; every line through them scores the same.
    pub degenerate: bool,
    pub mode: LineMode,
}

fn inliers(points: &[(f64, f64)], line: &Line, t: f64) -> Vec<usize> {
    (0..points.len()).filter(|&p| line.distance(points[p]) < t).collect()
}

pub fn fit_line_demo(points: &[(f64, f64)], cfg: &LineDemoConfig) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("line fitting needs at least 2 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().position(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::NonFinite(format!("point {p}")));
    }
    if !(cfg.t > 0.0 && cfg.t.is_finite()) {
        return Err(Error::invalid(format!("threshold must be positive, got {}", cfg.t)));
    }
    if points.iter().all(|p| *p == points[0]) {
        let line = Line { theta: 0.0, rho: points[0].0 };
        return Ok(LineFit { line, count: points.len() as f64, inliers: (0..points.len()).collect(), degenerate: true, mode: cfg.mode });
    }
    let (line, count) = match cfg.mode {
        LineMode::Ransac => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut best: Option<(Line, usize)> = None;
            for _ in 0..cfg.iterations {
                let pair = sample(&mut rng, points.len(), 2);
                let Some(line) = Line::through(points[pair.index(0)], points[pair.index(1)]) else { continue };
                let n = inliers(points, &line, cfg.t).len();
                if best.is_none_or(|(_, b)| n > b) {
                    best = Some((line, n));
                }
            }
            let (line, n) = best.ok_or_else(|| Error::invalid("every sampled pair was degenerate"))?;
            (line, n as f64)
        }
        LineMode::SoftGrid => {
            if cfg.angle_steps == 0 || cfg.rho_step.is_nan() || cfg.rho_step <= 0.0 {
                return Err(Error::invalid("hypothesis grid needs angle_steps >= 1 and rho_step > 0"));
            }
            let raster = Raster::from_points(points, cfg.cell)?;
            let b_max = (raster.radius() / cfg.rho_step).ceil() as i64 + 1;
            // ties on the count go to the smaller in-band residual, then to
            // the first hypothesis in (angle, offset) order
            let mut best: Option<(Line, f64, f64)> = None;
            for a in 0..cfg.angle_steps {
                let theta = a as f64 * PI / cfg.angle_steps as f64;
                for b in -b_max..=b_max {
                    let line = Line { theta, rho: b as f64 * cfg.rho_step };
                    let (c, r) = band_score(&raster, &line, cfg.t);
                    if best.is_none_or(|(_, bc, br)| c > bc || (c == bc && r < br)) {
                        best = Some((line, c, r));
                    }
                }
            }
            let (line, c, _) = best.expect("non-empty hypothesis grid");
            (line, c)
        }
    };
    Ok(LineFit { inliers: inliers(points, &line, cfg.t), line, count, degenerate: false, mode: cfg.mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn line_through_two_points() {
        let l = Line::through((0.0, 1.0), (2.0, 1.0)).unwrap();
        assert!((l.theta - PI / 2.0).abs() < 1e-12 && (l.rho - 1.0).abs() < 1e-12);
        assert!(l.distance((5.0, 3.0)) - 2.0 < 1e-12);
        assert!(Line::through((1.0, 1.0), (1.0, 1.0)).is_none());
    }

    #[test]
    fn collinear_points_in_both_modes() {
        let pts: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, k as f64)).collect();
        for mode in [LineMode::Ransac, LineMode::SoftGrid] {
            let r = fit_line_demo(&pts, &LineDemoConfig { mode, ..Default::default() }).unwrap();
            assert_eq!(r.count, 10.0);
            assert_eq!(r.inliers.len(), 10);
            assert!(pts.iter().all(|&p| r.line.distance(p) < 1e-9));
        }
    }

    #[test]
    fn clustered_line_beats_lines_missing_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts: Vec<(f64, f64)> = (0..15).map(|k| (k as f64 + 2.0, 10.0)).collect();
        pts.extend((0..20).map(|_| (rng.random_range(0..25) as f64, rng.random_range(0..25) as f64)));
        let raster = Raster::from_points(&pts, 1.0).unwrap();
        let truth = line_demo_count(&raster, &Line { theta: PI / 2.0, rho: 10.0 }, 0.5);
        for a in 0..36 {
            for b in -40..40 {
                let l = Line { theta: a as f64 * PI / 36.0, rho: b as f64 * 0.5 };
                let misses = (0..15).all(|k| l.distance((k as f64 + 2.0, 10.0)) >= 0.5);
                if misses {
                    assert!(line_demo_count(&raster, &l, 0.5) < truth);
                }
            }
        }
        let fit = fit_line_demo(&pts, &LineDemoConfig::default()).unwrap();
        assert!(fit.count >= truth);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![(3.0, 4.0); 6];
        let r = fit_line_demo(&pts, &LineDemoConfig::default()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.count, 6.0);
        assert!(r.line.distance((3.0, 4.0)) < 1e-12);
    }

    #[test]
    fn needs_two_points() {
        assert!(fit_line_demo(&[(0.0, 0.0)], &LineDemoConfig::default()).is_err());
        assert!("soft-grid".parse::<LineMode>().is_ok());
        assert!("hough".parse::<LineMode>().is_err());
    }
}
