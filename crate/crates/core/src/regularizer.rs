//! Curvature regularization of displacement fields.
//!
//! `S(u) = 0.5 * cell_volume * sum_k sum_nodes (L u_k)^2` where `L` is the
//! discrete Laplacian with replicate (Neumann) padding. `L` is symmetric, so
//! the gradient is `cell_volume * L(L u_k)` and `S` is its own Gauss-Newton
//! model.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transform::DisplacementField;

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    pub alpha: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl RegularizerConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }
}

fn check_grid(grid: &Grid) -> Result<()> {
    if let Some(&m) = grid.dims().iter().find(|&&m| m < 3) {
        return Err(Error::InvalidGrid(format!(
            "curvature needs at least 3 nodes per axis, got {m}"
        )));
    }
    Ok(())
}

/// Replicate-padded Laplacian of one scalar component.
pub(crate) fn laplacian(grid: &Grid, values: &[f64]) -> Vec<f64> {
    let d = grid.ndim();
    let dims = grid.dims();
    let strides = grid.strides();
    let h = grid.spacing();
    let mut out = vec![0.0; values.len()];
    let mut idx = [0usize; 3];
    for (i, o) in out.iter_mut().enumerate() {
        grid.unravel(i, &mut idx[..d]);
        let c = values[i];
        let mut acc = 0.0;
        for k in 0..d {
            let lo = if idx[k] > 0 {
                values[i - strides[k]]
            } else {
                c
            };
            let hi = if idx[k] + 1 < dims[k] {
                values[i + strides[k]]
            } else {
                c
            };
            acc += (lo - 2.0 * c + hi) / (h[k] * h[k]);
        }
        *o = acc;
    }
    out
}

/// Curvature energy alone.
pub fn curvature_value(field: &DisplacementField) -> Result<f64> {
    let grid = field.grid();
    check_grid(grid)?;
    let mut value = 0.0;
    for k in 0..grid.ndim() {
        value += laplacian(grid, &field.component(k))
            .iter()
            .map(|x| x * x)
            .sum::<f64>();
    }
    Ok(0.5 * grid.cell_volume() * value)
}

/// Curvature energy and its gradient (node-major, same layout as the field).
pub fn curvature(field: &DisplacementField) -> Result<(f64, Vec<f64>)> {
    let grid = field.grid();
    check_grid(grid)?;
    let d = grid.ndim();
    let v = grid.cell_volume();
    let mut value = 0.0;
    let mut gradient = vec![0.0; field.values().len()];
    for k in 0..d {
        let lu = laplacian(grid, &field.component(k));
        value += lu.iter().map(|x| x * x).sum::<f64>();
        let llu = laplacian(grid, &lu);
        for (i, g) in llu.iter().enumerate() {
            gradient[i * d + k] = v * g;
        }
    }
    Ok((0.5 * v * value, gradient))
}

/// Hessian-vector product `cell_volume * L L v`, componentwise.
pub fn curvature_apply(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let d = grid.ndim();
    let vol = grid.cell_volume();
    let mut out = vec![0.0; v.len()];
    for k in 0..d {
        let comp: Vec<f64> = v.iter().skip(k).step_by(d).copied().collect();
        let llv = laplacian(grid, &laplacian(grid, &comp));
        for (i, g) in llv.iter().enumerate() {
            out[i * d + k] = vol * g;
        }
    }
    out
}

/// Orthonormal DCT-II matrix of size `m`, row `k` holding basis vector `k`.
fn dct_matrix(m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for k in 0..m {
        let scale = if k == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        for i in 0..m {
            c[k * m + i] =
                scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m as f64).cos();
        }
    }
    c
}

/// Apply `c` (or its transpose) along `axis` of a row-major array.
fn transform_axis(grid: &Grid, values: &mut [f64], axis: usize, c: &[f64], transpose: bool) {
    let dims = grid.dims();
    let m = dims[axis];
    let stride = grid.strides()[axis];
    let outer = values.len() / (m * stride);
    let mut line = vec![0.0; m];
    let mut out = vec![0.0; m];
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * m * stride + inner;
            for (i, l) in line.iter_mut().enumerate() {
                *l = values[base + i * stride];
            }
            for (k, v) in out.iter_mut().enumerate() {
                *v = (0..m)
                    .map(|i| if transpose { c[i * m + k] } else { c[k * m + i] } * line[i])
                    .sum();
            }
            for (i, v) in out.iter().enumerate() {
                values[base + i * stride] = *v;
            }
        }
    }
}

/// Solve `(L L + kappa2) x = v` componentwise, exactly, via the cosine basis
/// that diagonalizes the replicate-padded Laplacian.
pub fn solve_shifted_biharmonic(grid: &Grid, v: &[f64], kappa2: f64) -> Vec<f64> {
    let d = grid.ndim();
    let dims = grid.dims();
    let h = grid.spacing();
    let mats: Vec<Vec<f64>> = dims.iter().map(|&m| dct_matrix(m)).collect();
    let eig: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let m = dims[k] as f64;
            (0..dims[k])
                .map(|j| {
                    let s = (std::f64::consts::PI * j as f64 / (2.0 * m)).sin();
                    -4.0 * s * s / (h[k] * h[k])
                })
                .collect()
        })
        .collect();
    let mut out = vec![0.0; v.len()];
    let mut idx = [0usize; 3];
    for comp in 0..d {
        let mut c: Vec<f64> = v.iter().skip(comp).step_by(d).copied().collect();
        for axis in 0..d {
            transform_axis(grid, &mut c, axis, &mats[axis], false);
        }
        for (i, x) in c.iter_mut().enumerate() {
            grid.unravel(i, &mut idx[..d]);
            let lambda: f64 = (0..d).map(|k| eig[k][idx[k]]).sum();
            *x /= lambda * lambda + kappa2;
        }
        for axis in 0..d {
            transform_axis(grid, &mut c, axis, &mats[axis], true);
        }
        for (i, x) in c.iter().enumerate() {
            out[i * d + comp] = *x;
        }
    }
    out
}
