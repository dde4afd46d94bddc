//! Spatial-transformer building blocks: sampling-grid generation and
//! bilinear sampling with zero padding.
//!
//! Sampling uses the bilinear kernel `max(0, 1 - |u - a|) * max(0, 1 - |v - b|)`
//! summed over in-range nodes `(a, b)`, so nodes outside the image count as
//! zero and points one full cell or more outside the image sample exactly 0.
//! A coordinate on a knot belongs to the cell `[n, n + 1)`; derivatives
//! across a knot average the slopes on both sides.

use crate::error::Result;
use crate::geometry::Transform;

/// Generated coordinates closer than this to a lattice node are snapped onto
/// it, so that integer-valued warps sample nodes exactly.
pub const NODE_SNAP: f64 = 1e-9;

/// Row-major `h x w` array of continuous source coordinates `(u, v)`
/// (row, column) in grid units, one per output cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub h: usize,
    pub w: usize,
    pub coords: Vec<(f64, f64)>,
}

pub(crate) fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < NODE_SNAP {
        r
    } else {
        c
    }
}

/// Grid generation: maps every cell `(k, l)` of an `h x w` grid through `t`
/// (target to source) and returns the source coordinates in grid units.
pub fn sampling_grid(t: &Transform, h: usize, w: usize) -> Result<SamplingGrid> {
    let mut coords = Vec::with_capacity(h * w);
    for k in 0..h {
        for l in 0..w {
            let (u, v) = t.map_grid(k as f64, l as f64, h, w)?;
            coords.push((snap(u), snap(v)));
        }
    }
    Ok(SamplingGrid { h, w, coords })
}

#[inline]
fn corner(img: &[f64], h: usize, w: usize, a: i64, b: i64) -> f64 {
    if a < 0 || b < 0 || a >= h as i64 || b >= w as i64 {
        0.0
    } else {
        img[a as usize * w + b as usize]
    }
}

#[inline]
fn out_of_support(h: usize, w: usize, u: f64, v: f64) -> bool {
    !(u.is_finite() && v.is_finite()) || u <= -1.0 || v <= -1.0 || u >= h as f64 || v >= w as f64
}

/// Bilinear value of a row-major `h x w` image at `(u, v)`.
#[inline]
pub fn sample_point(img: &[f64], h: usize, w: usize, u: f64, v: f64) -> f64 {
    if out_of_support(h, w, u, v) {
        return 0.0;
    }
    let (a, b) = (u.floor(), v.floor());
    let (fu, fv) = (u - a, v - b);
    let (a, b) = (a as i64, b as i64);
    let top = (1.0 - fv) * corner(img, h, w, a, b) + fv * corner(img, h, w, a, b + 1);
    let bot = (1.0 - fv) * corner(img, h, w, a + 1, b) + fv * corner(img, h, w, a + 1, b + 1);
    (1.0 - fu) * top + fu * bot
}

/// Bilinear value and its partial derivatives `(d/du, d/dv)` at `(u, v)`.
///
/// On a knot the derivative across it is the mean of the two one-sided
/// slopes; elsewhere it is the ordinary bilinear derivative.
#[inline]
pub fn sample_point_grad(img: &[f64], h: usize, w: usize, u: f64, v: f64) -> (f64, f64, f64) {
    if out_of_support(h, w, u, v) {
        return (0.0, 0.0, 0.0);
    }
    let (a, b) = (u.floor(), v.floor());
    let (fu, fv) = (u - a, v - b);
    let (a, b) = (a as i64, b as i64);
    let p = |da: i64, db: i64| corner(img, h, w, a + da, b + db);
    // row value at offset da, interpolated along v
    let row = |da: i64| (1.0 - fv) * p(da, 0) + fv * p(da, 1);
    let (top, bot) = (row(0), row(1));
    let value = (1.0 - fu) * top + fu * bot;
    let du = if fu == 0.0 { (bot - row(-1)) / 2.0 } else { bot - top };
    let col_slope = |da: i64| if fv == 0.0 { (p(da, 1) - p(da, -1)) / 2.0 } else { p(da, 1) - p(da, 0) };
    let dv = (1.0 - fu) * col_slope(0) + fu * col_slope(1);
    (value, du, dv)
}

/// Samples a row-major `h x w` image at every grid coordinate.
pub fn bilinear_sample(img: &[f64], h: usize, w: usize, grid: &SamplingGrid) -> Vec<f64> {
    debug_assert_eq!(img.len(), h * w);
    grid.coords.iter().map(|&(u, v)| sample_point(img, h, w, u, v)).collect()
}

/// Backward pass of [`bilinear_sample`] for the loss `sum(upstream * out)`:
/// returns the gradient with respect to the image and to each coordinate.
pub fn bilinear_backward(
    img: &[f64],
    h: usize,
    w: usize,
    grid: &SamplingGrid,
    upstream: &[f64],
) -> (Vec<f64>, Vec<(f64, f64)>) {
    debug_assert_eq!(upstream.len(), grid.coords.len());
    let mut grad_img = vec![0.0; h * w];
    let mut grad_coords = Vec::with_capacity(grid.coords.len());
    for (&(u, v), &g) in grid.coords.iter().zip(upstream) {
        let (_, du, dv) = sample_point_grad(img, h, w, u, v);
        grad_coords.push((g * du, g * dv));
        if out_of_support(h, w, u, v) {
            continue;
        }
        let (a, b) = (u.floor(), v.floor());
        let (fu, fv) = (u - a, v - b);
        let (a, b) = (a as i64, b as i64);
        for (da, wa) in [(0, 1.0 - fu), (1, fu)] {
            for (db, wb) in [(0, 1.0 - fv), (1, fv)] {
                let (r, c) = (a + da, b + db);
                if r >= 0 && c >= 0 && r < h as i64 && c < w as i64 {
                    grad_img[r as usize * w + c as usize] += g * wa * wb;
                }
            }
        }
    }
    (grad_img, grad_coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_of(coords: Vec<(f64, f64)>) -> SamplingGrid {
        SamplingGrid { h: 1, w: coords.len(), coords }
    }

    #[test]
    fn integer_nodes_reproduce_image() {
        let img: Vec<f64> = (0..12).map(|v| v as f64 * 1.5 - 2.0).collect();
        let coords = (0..3).flat_map(|i| (0..4).map(move |j| (i as f64, j as f64))).collect();
        assert_eq!(bilinear_sample(&img, 3, 4, &grid_of(coords)), img);
    }

    #[test]
    fn cell_center_is_mean_of_corners() {
        let img = [1.0, 2.0, 3.0, 10.0];
        assert_eq!(sample_point(&img, 2, 2, 0.5, 0.5), 4.0);
    }

    #[test]
    fn zero_padding_outside() {
        let img = [1.0; 9];
        assert_eq!(sample_point(&img, 3, 3, -1.0, 1.0), 0.0);
        assert_eq!(sample_point(&img, 3, 3, 1.0, 3.0), 0.0);
        assert_eq!(sample_point(&img, 3, 3, 1e300, 0.0), 0.0);
        assert_eq!(sample_point(&img, 3, 3, f64::NAN, 0.0), 0.0);
        // half a cell outside keeps half of the border value
        assert!((sample_point(&img, 3, 3, -0.5, 1.0) - 0.5).abs() < 1e-15);
        assert!((sample_point(&img, 3, 3, 1.0, 2.25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn exact_on_bilinear_functions() {
        let (h, w) = (5, 7);
        let f = |i: f64, j: f64| 0.7 * i - 1.3 * j + 0.25;
        let img: Vec<f64> = (0..h * w).map(|p| f((p / w) as f64, (p % w) as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (u, v) = (rng.random_range(0.0..4.0), rng.random_range(0.0..6.0));
            assert!((sample_point(&img, h, w, u, v) - f(u, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn knot_gradient_averages_both_sides() {
        let img = [0.0, 1.0, 5.0, 0.0, 1.0, 5.0];
        // slopes 1 on the left of v = 1 and 4 on the right
        let (_, _, dv) = sample_point_grad(&img, 2, 3, 0.0, 1.0);
        assert_eq!(dv, 2.5);
        let (_, _, dv) = sample_point_grad(&img, 2, 3, 0.0, 1.5);
        assert_eq!(dv, 4.0);
        // a symmetric peak has zero derivative on its knot
        let peak = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(sample_point_grad(&peak, 2, 3, 0.0, 1.0).2, 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h, w) = (4, 5);
        let img: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut coords = Vec::new();
        while coords.len() < 30 {
            let (u, v) = (rng.random_range(-0.9..3.9), rng.random_range(-0.9..4.9));
            let clear = |c: f64| (c - c.round()).abs() >= 0.05;
            if clear(u) && clear(v) {
                coords.push((u, v));
            }
        }
        let grid = grid_of(coords.clone());
        let up: Vec<f64> = (0..coords.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gimg, gc) = bilinear_backward(&img, h, w, &grid, &up);
        let loss = |img: &[f64], coords: &[(f64, f64)]| -> f64 {
            coords.iter().zip(&up).map(|(&(u, v), g)| g * sample_point(img, h, w, u, v)).sum()
        };
        let step = 1e-5;
        for n in 0..coords.len() {
            for axis in 0..2 {
                let mut p = coords.clone();
                let mut m = coords.clone();
                if axis == 0 {
                    p[n].0 += step;
                    m[n].0 -= step;
                } else {
                    p[n].1 += step;
                    m[n].1 -= step;
                }
                let fd = (loss(&img, &p) - loss(&img, &m)) / (2.0 * step);
                let an = if axis == 0 { gc[n].0 } else { gc[n].1 };
                assert!((an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-6), "{an} vs {fd}");
            }
        }
        // the sampled values are linear in the image, so the image gradient is exact
        for p in 0..img.len() {
            let mut e = vec![0.0; img.len()];
            e[p] = 1.0;
            assert!((loss(&e, &coords) - gimg[p]).abs() < 1e-12);
        }
    }
}
