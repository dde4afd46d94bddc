//! Dense feature grids, 4-D score tensors and the coordinate conventions
//! shared by every other module.
//!
//! Grid coordinates are `(i, j)` = (row, column) in cell units, with cell
//! centers at integer positions. The normalized frame used by transforms puts
//! the extreme cell centers at -1 and +1:
//!
//! ```text
//! x = -1 + 2 j / (w - 1)      y = -1 + 2 i / (h - 1)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance on descriptor norms for a grid to count as L2-normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// An `h x w` grid of `d`-dimensional descriptors stored row-major in
/// `(i, j, channel)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!("grid must be at least 2x2, got {h}x{w}")));
        }
        if d < 1 {
            return Err(Error::invalid("descriptor dimension must be at least 1"));
        }
        if data.len() != h * w * d {
            return Err(Error::shape(format!(
                "expected {} values for a {h}x{w}x{d} grid, got {}",
                h * w * d,
                data.len()
            )));
        }
        Ok(Self { h, w, d, data })
    }

    pub fn zeros(h: usize, w: usize, d: usize) -> Result<Self> {
        Self::new(h, w, d, vec![0.0; h * w * d])
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.w + j) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (i * self.w + j) * self.d;
        &mut self.data[start..start + self.d]
    }

    /// Cell descriptor by flat cell index `i * w + j`.
    pub fn cell_flat(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.d..(idx + 1) * self.d]
    }

    pub fn is_empty_cell(&self, i: usize, j: usize) -> bool {
        self.cell(i, j).iter().all(|&v| v == 0.0)
    }

    /// Largest deviation of a non-empty cell norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        self.data
            .chunks_exact(self.d)
            .filter(|c| c.iter().any(|&v| v != 0.0))
            .map(|c| (norm(c) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.data.iter().all(|v| v.is_finite()) && self.max_norm_deviation() <= tol
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Output of [`l2_normalize`]: the normalized grid and the cells that were
/// all-zero on input.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub grid: FeatureGrid,
    pub empty_cells: Vec<(usize, usize)>,
}

/// Rescales every non-zero cell descriptor to unit L2 norm. All-zero cells
/// are left untouched and reported in [`Normalized::empty_cells`].
pub fn l2_normalize(grid: &FeatureGrid) -> Result<Normalized> {
    let mut out = grid.clone();
    let mut empty_cells = Vec::new();
    for i in 0..grid.h {
        for j in 0..grid.w {
            let cell = out.cell_mut(i, j);
            if let Some(c) = cell.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("cell ({i}, {j}) channel {c}")));
            }
            let n = norm(cell);
            if n == 0.0 {
                empty_cells.push((i, j));
            } else {
                cell.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    Ok(Normalized { grid: out, empty_cells })
}

/// Dense 4-D tensor indexed `(i, j, k, l)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!("tensor {dims:?} needs {n} values, got {}", data.len())));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {p}")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        let [_, w, h2, w2] = self.dims;
        ((i * w + j) * h2 + k) * w2 + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.index(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let idx = self.index(i, j, k, l);
        self.data[idx] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Continuous grid position: `i` is the row, `j` the column, in cell units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub i: f64,
    pub j: f64,
}

impl GridPoint {
    pub fn new(i: f64, j: f64) -> Self {
        Self { i, j }
    }
}

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("grid must be at least 2x2, got {h}x{w}")));
    }
    Ok(())
}

/// Maps a grid point to normalized `(x, y)` coordinates.
pub fn grid_to_normalized(p: GridPoint, h: usize, w: usize) -> Result<(f64, f64)> {
    check_dims(h, w)?;
    Ok((
        -1.0 + 2.0 * p.j / (w - 1) as f64,
        -1.0 + 2.0 * p.i / (h - 1) as f64,
    ))
}

/// Inverse of [`grid_to_normalized`].
pub fn normalized_to_grid(x: f64, y: f64, h: usize, w: usize) -> Result<GridPoint> {
    check_dims(h, w)?;
    Ok(GridPoint {
        i: (y + 1.0) * (h - 1) as f64 / 2.0,
        j: (x + 1.0) * (w - 1) as f64 / 2.0,
    })
}

/// Parses FGRID text. `origin` only labels error messages.
pub fn parse_fgrid(text: &str, origin: &str) -> Result<FeatureGrid> {
    let perr = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| perr(1, "missing FGRID header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "FGRID" {
        return Err(perr(hline, format!("malformed header {header:?}, expected `FGRID <h> <w> <d>`")));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| perr(hline, format!("bad dimension {s:?}")));
    let (h, w, d) = (dim(fields[1])?, dim(fields[2])?, dim(fields[3])?);
    if h < 2 || w < 2 || d < 1 {
        return Err(perr(hline, format!("invalid dimensions {h}x{w}x{d} (need h, w >= 2, d >= 1)")));
    }

    let mut data = Vec::with_capacity(h * w * d);
    let mut rows = 0;
    for (n, line) in lines {
        rows += 1;
        if rows > h * w {
            return Err(perr(n, format!("more than {} cell rows", h * w)));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| perr(n, format!("bad number {tok:?}")))?;
            if !v.is_finite() {
                return Err(perr(n, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(perr(n, format!("expected {d} values, found {}", data.len() - before)));
        }
    }
    if rows != h * w {
        return Err(perr(hline, format!("expected {} cell rows, found {rows}", h * w)));
    }
    FeatureGrid::new(h, w, d, data)
}

/// Serializes a grid as FGRID text. Values use the shortest decimal form that
/// reads back to the identical `f64`.
pub fn format_fgrid(grid: &FeatureGrid) -> String {
    let mut out = String::with_capacity(grid.data.len() * 12);
    let _ = writeln!(out, "FGRID {} {} {}", grid.h, grid.w, grid.d);
    for cell in grid.data.chunks_exact(grid.d) {
        for (c, v) in cell.iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn read_fgrid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fgrid(&text, &path.display().to_string())
}

pub fn write_fgrid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_fgrid(grid)).map_err(|e| Error::io(path, e))
}
