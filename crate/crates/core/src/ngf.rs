//! Finite-difference image gradients and edge-parameter normalization.

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, MAX_DIM};
use crate::schatten::GradientMatrix;

/// Default edge parameter for intensities in `[0, 256)`.
pub const DEFAULT_EDGE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * grid.ndim() {
            return Err(Error::InvalidParameter(format!(
                "vector field needs {} values, got {}",
                grid.len() * grid.ndim(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, index: usize) -> &[f64] {
        let d = self.grid.ndim();
        &self.values[index * d..(index + 1) * d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParameter(f64);

impl EdgeParameter {
    pub fn new(eta: f64) -> Result<Self> {
        if eta > 0.0 && eta.is_finite() {
            Ok(Self(eta))
        } else {
            Err(Error::InvalidParameter(format!(
                "edge parameter must be > 0, got {eta}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for EdgeParameter {
    fn default() -> Self {
        Self(DEFAULT_EDGE)
    }
}

/// Central differences inside, one-sided differences on the first and last
/// node of every axis. Output is node-major with `d` components.
pub fn gradient_values(grid: &Grid, values: &[f64]) -> Vec<f64> {
    let d = grid.ndim();
    let dims = grid.dims();
    let strides = grid.strides();
    let mut out = vec![0.0; values.len() * d];
    let mut idx = [0usize; MAX_DIM];
    for i in 0..values.len() {
        grid.unravel(i, &mut idx);
        for k in 0..d {
            let (m, s, h) = (dims[k], strides[k], grid.spacing()[k]);
            out[i * d + k] = if m < 2 {
                0.0
            } else if idx[k] == 0 {
                (values[i + s] - values[i]) / h
            } else if idx[k] == m - 1 {
                (values[i] - values[i - s]) / h
            } else {
                (values[i + s] - values[i - s]) / (2.0 * h)
            };
        }
    }
    out
}

/// Transpose of [`gradient_values`] applied to a node-major vector field.
pub fn gradient_adjoint(grid: &Grid, field: &[f64]) -> Vec<f64> {
    let d = grid.ndim();
    let n = grid.len();
    let dims = grid.dims();
    let strides = grid.strides();
    let mut out = vec![0.0; n];
    let mut idx = [0usize; MAX_DIM];
    for i in 0..n {
        grid.unravel(i, &mut idx);
        for k in 0..d {
            let g = field[i * d + k];
            if g == 0.0 {
                continue;
            }
            let (m, s, h) = (dims[k], strides[k], grid.spacing()[k]);
            if m < 2 {
                continue;
            } else if idx[k] == 0 {
                out[i + s] += g / h;
                out[i] -= g / h;
            } else if idx[k] == m - 1 {
                out[i] += g / h;
                out[i - s] -= g / h;
            } else {
                let c = g / (2.0 * h);
                out[i + s] += c;
                out[i - s] -= c;
            }
        }
    }
    out
}

pub fn gradient(image: &Image) -> VectorField {
    VectorField {
        grid: image.grid().clone(),
        values: gradient_values(image.grid(), image.values()),
    }
}

/// `g / sqrt(|g|^2 + eta^2)` for one node, written into `out`.
#[inline]
pub fn normalize_vector(g: &[f64], eta: f64, out: &mut [f64]) -> f64 {
    let s = (g.iter().map(|x| x * x).sum::<f64>() + eta * eta).sqrt();
    for (o, x) in out.iter_mut().zip(g) {
        *o = x / s;
    }
    s
}

/// Applies the (symmetric) Jacobian of [`normalize_vector`] at `g` to `v`:
/// `v / s - g (g.v) / s^3`.
#[inline]
pub fn normalize_jacobian_apply(g: &[f64], s: f64, v: &[f64], out: &mut [f64]) {
    let gv: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
    let s3 = s * s * s;
    for k in 0..g.len() {
        out[k] = v[k] / s - g[k] * gv / s3;
    }
}

pub fn normalize(field: &VectorField, eta: EdgeParameter) -> VectorField {
    let d = field.grid.ndim();
    let mut values = vec![0.0; field.values.len()];
    for (g, out) in field.values.chunks(d).zip(values.chunks_mut(d)) {
        normalize_vector(g, eta.value(), out);
    }
    VectorField {
        grid: field.grid.clone(),
        values,
    }
}

/// One `d x T` matrix per node whose column `t` is `fields[t]` at that node.
pub fn gradient_matrix(fields: &[VectorField]) -> Result<Vec<GradientMatrix>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidParameter("no vector fields given".into()))?;
    for (t, f) in fields.iter().enumerate().skip(1) {
        first
            .grid
            .ensure_same(&f.grid, &format!("vector field {t}"))?;
    }
    let d = first.grid.ndim();
    let cols = fields.len();
    (0..first.grid.len())
        .map(|i| {
            let mut entries = Vec::with_capacity(d * cols);
            for f in fields {
                entries.extend_from_slice(f.node(i));
            }
            GradientMatrix::new(d, cols, entries)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schatten::spectrum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior(grid: &Grid, i: usize) -> bool {
        let mut idx = [0; MAX_DIM];
        grid.unravel(i, &mut idx);
        (0..grid.ndim()).all(|k| idx[k] > 0 && idx[k] + 1 < grid.dims()[k])
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let img = Image::new(Grid::with_dims(&[4, 5]).unwrap(), vec![3.0; 20]).unwrap();
        assert!(gradient(&img).values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ramp_and_quadratic_are_exact() {
        let g = Grid::with_dims(&[6, 7]).unwrap();
        // axis 0 plays the role of x1
        let ramp = Image::from_fn(g.clone(), |p| 3.0 * p[0]).unwrap();
        let gr = gradient(&ramp);
        for i in 0..g.len() {
            assert_eq!(gr.node(i), [3.0, 0.0]);
        }
        let quad = Image::from_fn(g.clone(), |p| p[0] * p[0]).unwrap();
        let gq = gradient(&quad);
        let mut pos = [0.0; 2];
        for i in (0..g.len()).filter(|&i| interior(&g, i)) {
            g.node_position(i, &mut pos);
            assert_eq!(gq.node(i)[0], 2.0 * pos[0]);
        }
    }

    #[test]
    fn linear_image_has_constant_interior_gradient() {
        let g = Grid::new(vec![5, 6, 4], vec![0.5, 2.0, 1.0], vec![0.0; 3]).unwrap();
        let img = Image::from_fn(g.clone(), |p| 2.0 * p[0] - 0.5 * p[1] + 4.0 * p[2]).unwrap();
        let grad = gradient(&img);
        for i in (0..g.len()).filter(|&i| interior(&g, i)) {
            assert_eq!(grad.node(i), [2.0, -0.5, 4.0]);
        }
    }

    #[test]
    fn adjoint_is_the_transpose() {
        let g = Grid::new(vec![5, 4], vec![0.7, 1.9], vec![0.0; 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..2 * g.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let dv = gradient_values(&g, &v);
        let dtw = gradient_adjoint(&g, &w);
        let lhs: f64 = dv.iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(&dtw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn normalization_examples() {
        let mut out = [0.0; 2];
        normalize_vector(&[0.0, 0.0], 0.3, &mut out);
        assert_eq!(out, [0.0, 0.0]);
        normalize_vector(&[3.0, 4.0], 1e-5, &mut out);
        assert!((out[0] - 0.6).abs() < 1e-9 && (out[1] - 0.8).abs() < 1e-9);
        assert!(((out[0] * out[0] + out[1] * out[1]).sqrt() - 1.0).abs() < 1e-9);
        normalize_vector(&[1.0, 0.0], 1.0, &mut out);
        assert!((out[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(EdgeParameter::new(0.0).is_err());
    }

    #[test]
    fn normalize_jacobian_matches_finite_differences() {
        let g = [0.8, -1.7];
        let v = [0.3, 0.9];
        let eta = 0.4;
        let mut base = [0.0; 2];
        let s = normalize_vector(&g, eta, &mut base);
        let mut jv = [0.0; 2];
        normalize_jacobian_apply(&g, s, &v, &mut jv);
        let h = 1e-6;
        let mut p = [0.0; 2];
        let mut m = [0.0; 2];
        normalize_vector(&[g[0] + h * v[0], g[1] + h * v[1]], eta, &mut p);
        normalize_vector(&[g[0] - h * v[0], g[1] - h * v[1]], eta, &mut m);
        for k in 0..2 {
            assert!(((p[k] - m[k]) / (2.0 * h) - jv[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_matrix_examples() {
        let g = Grid::with_dims(&[2, 2]).unwrap();
        let field = |v: [f64; 2]| VectorField::new(g.clone(), v.repeat(4)).unwrap();

        let same =
            gradient_matrix(&[field([0.6, 0.8]), field([0.6, 0.8]), field([0.6, 0.8])]).unwrap();
        for a in &same {
            assert_eq!(a.column(0), a.column(2));
            let s = spectrum(a);
            assert!(s.values()[1] < 1e-12);
        }
        let orth = gradient_matrix(&[field([1.0, 0.0]), field([0.0, 1.0])]).unwrap();
        let s = spectrum(&orth[0]);
        assert!((s.values()[0] - 1.0).abs() < 1e-15 && (s.values()[1] - 1.0).abs() < 1e-15);

        let col = gradient_matrix(&[field([0.6, 0.8]), field([0.6, 0.8])]).unwrap();
        let s = spectrum(&col[0]);
        assert!((s.values()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.values()[1], 0.0);

        let other = VectorField::new(Grid::with_dims(&[2, 3]).unwrap(), vec![0.0; 12]).unwrap();
        assert!(gradient_matrix(&[field([1.0, 0.0]), other]).is_err());
    }

    #[test]
    fn norms_stay_below_one_and_scale_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let g = [rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)];
            let eta = rng.random_range(1e-3..10.0);
            let c = rng.random_range(0.1..10.0);
            let mut a = [0.0; 2];
            let mut b = [0.0; 2];
            normalize_vector(&g, eta, &mut a);
            normalize_vector(&[c * g[0], c * g[1]], c * eta, &mut b);
            assert!(a[0].hypot(a[1]) < 1.0);
            for k in 0..2 {
                assert!((a[k] - b[k]).abs() <= 4.0 * f64::EPSILON);
            }
        }
    }
}
