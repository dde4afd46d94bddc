//! Parametric target-to-source transforms on the normalized `[-1, 1]` frame.
//!
//! Parameter layouts:
//! - affine: `(a11, a12, tx, a21, a22, ty)`, `x' = a11 x + a12 y + tx`
//! - homography: row-major `(h11 .. h32)` with `h33 = 1`
//! - thin-plate spline: `(dx_p, dy_p)` per control point in row-major lattice
//!   order; all zeros is the identity.

pub mod sampling;
pub mod tps;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{grid_to_normalized, normalized_to_grid, GridPoint};
use tps::{TpsBasis, TpsModel};

pub use sampling::{bilinear_backward, bilinear_sample, sampling_grid, SamplingGrid};

/// Minimum `|det|` of the linear part (affine) or full matrix (homography).
pub const SINGULAR_TOL: f64 = 1e-9;

/// Default thin-plate spline control lattice (3x3, 18 parameters).
pub const DEFAULT_TPS_LATTICE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Affine,
    Homography,
    Tps,
}

impl Family {
    /// Parameter count; TPS assumes the default 3x3 lattice.
    pub fn dof(self) -> usize {
        match self {
            Family::Affine => 6,
            Family::Homography => 8,
            Family::Tps => 2 * DEFAULT_TPS_LATTICE * DEFAULT_TPS_LATTICE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Affine => "affine",
            Family::Homography => "homography",
            Family::Tps => "tps",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "affine" => Ok(Family::Affine),
            "homography" => Ok(Family::Homography),
            "tps" => Ok(Family::Tps),
            other => Err(Error::invalid(format!("unknown transform family {other:?}"))),
        }
    }
}

/// A validated transform. TPS transforms carry their solved spline.
#[derive(Debug, Clone)]
pub struct Transform {
    family: Family,
    params: Vec<f64>,
    tps: Option<Arc<TpsModel>>,
}

impl PartialEq for Transform {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.params == other.params
    }
}

/// JSON form: `{"family": ..., "params": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub family: Family,
    pub params: Vec<f64>,
}

impl Transform {
    pub fn new(family: Family, params: Vec<f64>) -> Result<Self> {
        if let Some(p) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{family} parameter {p}")));
        }
        match family {
            Family::Affine | Family::Homography => {
                if params.len() != family.dof() {
                    return Err(Error::invalid(format!(
                        "{family} needs {} parameters, got {}",
                        family.dof(),
                        params.len()
                    )));
                }
                let det = if family == Family::Affine {
                    params[0] * params[4] - params[1] * params[3]
                } else {
                    let h = &params;
                    h[0] * (h[4] - h[5] * h[7]) - h[1] * (h[3] - h[5] * h[6]) + h[2] * (h[3] * h[7] - h[4] * h[6])
                };
                if det.abs() <= SINGULAR_TOL {
                    return Err(Error::Singular(format!("{family} determinant {det:.3e}")));
                }
                Ok(Self { family, params, tps: None })
            }
            Family::Tps => {
                let n = lattice_for(params.len())?;
                let model = TpsModel::solve(TpsBasis::for_lattice(n)?, &params)?;
                Ok(Self { family, params, tps: Some(Arc::new(model)) })
            }
        }
    }

    pub fn identity(family: Family) -> Self {
        let params = match family {
            Family::Affine => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            Family::Homography => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            Family::Tps => vec![0.0; family.dof()],
        };
        Self::new(family, params).expect("identity parameters are valid")
    }

    pub fn affine(p: [f64; 6]) -> Result<Self> {
        Self::new(Family::Affine, p.to_vec())
    }

    /// Rotation by `angle` (radians, counter-clockwise in `(x, y)`), uniform
    /// `scale`, then translation.
    pub fn similarity(angle: f64, scale: f64, tx: f64, ty: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::affine([scale * c, -scale * s, tx, scale * s, scale * c, ty])
    }

    pub fn homography(p: [f64; 8]) -> Result<Self> {
        Self::new(Family::Homography, p.to_vec())
    }

    /// TPS on the default 3x3 lattice from per-control displacements.
    pub fn make_tps(displacements: &[(f64, f64)]) -> Result<Self> {
        let n = DEFAULT_TPS_LATTICE * DEFAULT_TPS_LATTICE;
        if displacements.len() != n {
            return Err(Error::invalid(format!("TPS needs {n} displacements, got {}", displacements.len())));
        }
        Self::new(Family::Tps, displacements.iter().flat_map(|&(dx, dy)| [dx, dy]).collect())
    }

    /// Identity TPS on an `n x n` lattice.
    pub fn tps_identity(lattice: usize) -> Result<Self> {
        Self::new(Family::Tps, vec![0.0; 2 * lattice * lattice])
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dof(&self) -> usize {
        self.params.len()
    }

    pub fn tps_model(&self) -> Option<&TpsModel> {
        self.tps.as_deref()
    }

    /// Same family and lattice, new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        Self::new(self.family, params)
    }

    pub fn record(&self) -> TransformRecord {
        TransformRecord { family: self.family, params: self.params.clone() }
    }

    pub fn from_record(r: &TransformRecord) -> Result<Self> {
        Self::new(r.family, r.params.clone())
    }

    /// Maps one normalized target point into the source frame.
    pub fn apply_point(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let g = &self.params;
        match self.family {
            Family::Affine => Ok((g[0] * x + g[1] * y + g[2], g[3] * x + g[4] * y + g[5])),
            Family::Homography => {
                let den = g[6] * x + g[7] * y + 1.0;
                if den.abs() < SINGULAR_TOL {
                    return Err(Error::Singular(format!(
                        "homography denominator {den:.3e} at point ({x}, {y})"
                    )));
                }
                Ok(((g[0] * x + g[1] * y + g[2]) / den, (g[3] * x + g[4] * y + g[5]) / den))
            }
            Family::Tps => Ok(self.tps.as_ref().expect("tps model").eval(x, y)),
        }
    }

    pub fn apply(&self, pts: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
        pts.iter().map(|&(x, y)| self.apply_point(x, y)).collect()
    }

    /// Rows `d(x', y') / d g_p` for every parameter `p`.
    pub fn jacobian(&self, x: f64, y: f64) -> Result<Vec<[f64; 2]>> {
        let g = &self.params;
        match self.family {
            Family::Affine => Ok(vec![
                [x, 0.0],
                [y, 0.0],
                [1.0, 0.0],
                [0.0, x],
                [0.0, y],
                [0.0, 1.0],
            ]),
            Family::Homography => {
                let den = g[6] * x + g[7] * y + 1.0;
                if den.abs() < SINGULAR_TOL {
                    return Err(Error::Singular(format!(
                        "homography denominator {den:.3e} at point ({x}, {y})"
                    )));
                }
                let xp = (g[0] * x + g[1] * y + g[2]) / den;
                let yp = (g[3] * x + g[4] * y + g[5]) / den;
                Ok(vec![
                    [x / den, 0.0],
                    [y / den, 0.0],
                    [1.0 / den, 0.0],
                    [0.0, x / den],
                    [0.0, y / den],
                    [0.0, 1.0 / den],
                    [-xp * x / den, -yp * x / den],
                    [-xp * y / den, -yp * y / den],
                ])
            }
            Family::Tps => {
                let weights = self.tps.as_ref().expect("tps model").basis().weights_at(x, y);
                Ok(weights.iter().flat_map(|&b| [[b, 0.0], [0.0, b]]).collect())
            }
        }
    }

    /// Maps target grid cell `(k, l)` of an `h x w` grid to continuous source
    /// grid coordinates `(u, v)` = (row, column).
    pub fn map_grid(&self, k: f64, l: f64, h: usize, w: usize) -> Result<(f64, f64)> {
        let (x, y) = grid_to_normalized(GridPoint::new(k, l), h, w)?;
        let (xs, ys) = self.apply_point(x, y)?;
        let p = normalized_to_grid(xs, ys, h, w)?;
        Ok((p.i, p.j))
    }

    /// Affine composition `self ∘ inner` (apply `inner` first).
    pub fn compose_affine(&self, inner: &Transform) -> Result<Transform> {
        if self.family != Family::Affine || inner.family != Family::Affine {
            return Err(Error::invalid("compose_affine requires two affine transforms"));
        }
        let (a, b) = (&self.params, &inner.params);
        Transform::affine([
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        ])
    }

    /// TPS whose control points move to where `self` sends them. Exact for
    /// affine maps.
    pub fn to_tps(&self, lattice: usize) -> Result<Transform> {
        let basis = TpsBasis::for_lattice(lattice)?;
        let mut params = Vec::with_capacity(2 * basis.controls().len());
        for &(cx, cy) in basis.controls() {
            let (x, y) = self.apply_point(cx, cy)?;
            params.extend([x - cx, y - cy]);
        }
        Transform::new(Family::Tps, params)
    }

    /// Homography with the same action as an affine transform.
    pub fn to_homography(&self) -> Result<Transform> {
        match self.family {
            Family::Homography => Ok(self.clone()),
            Family::Affine => {
                let mut p = self.params.clone();
                p.extend([0.0, 0.0]);
                Transform::new(Family::Homography, p)
            }
            Family::Tps => Err(Error::invalid("a thin-plate spline has no homography form")),
        }
    }
}

/// Maps target-image points to source-image points in unit coordinates
/// (`[0, 1]^2`, x to the right, y down).
pub trait PointWarp {
    fn warp_unit(&self, x: f64, y: f64) -> Result<(f64, f64)>;
}

/// A bare transform treats the unit square as its `[-1, 1]` frame.
impl PointWarp for Transform {
    fn warp_unit(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let (xs, ys) = self.apply_point(2.0 * x - 1.0, 2.0 * y - 1.0)?;
        Ok(((xs + 1.0) / 2.0, (ys + 1.0) / 2.0))
    }
}

fn lattice_for(k: usize) -> Result<usize> {
    let n = ((k / 2) as f64).sqrt().round() as usize;
    if !k.is_multiple_of(2) || n * n * 2 != k || n < 2 {
        return Err(Error::invalid(format!("{k} is not a valid TPS parameter count (2 n^2, n >= 2)")));
    }
    Ok(n)
}
