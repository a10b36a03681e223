//! Schatten-q (quasi)norms `sum_i sigma_i^q` of small `d x T` matrices and
//! their derivatives.
//!
//! Singular values come from the eigenvalues of the smaller Gram matrix
//! (`A A^T` when `d <= T`, otherwise `A^T A`), which is at most 3x3, so the
//! per-matrix cost is `O(d^2 T)` regardless of the image size. For `q < 2`
//! the quasinorm is smoothed as `sum_i (lambda_i + eps^2)^(q/2)`.
//!
//! Columns are visited in a canonical (sorted) order, which makes every
//! result bitwise invariant under column permutations.

use crate::eigen::{sym2_eigenvalues, sym2_major_axis, sym3_eigen, sym3_eigenvalues};
use crate::error::{Error, Result};

/// Dense `rows x cols` matrix, column-major (column `t` is contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl GradientMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&rows.min(cols)) {
            return Err(Error::InvalidParameter(format!(
                "{rows}x{cols}: the smaller side must be between 1 and 3"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "{rows}x{cols} matrix given {} entries",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Builds a matrix from its columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidParameter("ragged columns".into()));
        }
        Self::new(rows, columns.len(), columns.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.entries[col * self.rows..(col + 1) * self.rows]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchattenConfig {
    pub q: f64,
    pub epsilon: f64,
}

impl Default for SchattenConfig {
    fn default() -> Self {
        Self {
            q: 0.5,
            epsilon: 1e-6,
        }
    }
}

impl SchattenConfig {
    /// Accepts any `q >= 0` and `eps >= 0`; see [`Self::check_differentiable`].
    pub fn new(q: f64, epsilon: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be >= 0, got {q}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self { q, epsilon })
    }

    /// The smoothed quasinorm is differentiable everywhere iff `q >= 2` or
    /// `eps > 0`; `q = 0` is a rank count and never differentiable.
    pub fn check_differentiable(&self) -> Result<()> {
        if self.q == 0.0 {
            return Err(Error::InvalidParameter(
                "q = 0 counts the rank and has no derivative".into(),
            ));
        }
        if self.q < 2.0 && self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "q = {} < 2 needs epsilon > 0 for derivatives",
                self.q
            )));
        }
        Ok(())
    }
}

/// Singular values in nonincreasing order, `min(rows, cols)` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Column order used for every reduction over columns.
pub(crate) fn canonical_order(rows: usize, entries: &[f64], order: &mut Vec<usize>) {
    let cols = entries.len() / rows;
    order.clear();
    order.extend(0..cols);
    order.sort_by(|&a, &b| {
        let ca = &entries[a * rows..(a + 1) * rows];
        let cb = &entries[b * rows..(b + 1) * rows];
        ca.iter()
            .zip(cb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// Symmetric Gram matrix of the smaller side (upper 3x3 block used).
struct Gram {
    size: usize,
    /// `true` for `A A^T`, `false` for `A^T A`.
    row_side: bool,
    m: [[f64; 3]; 3],
    /// Determinant for the 2x2 case, via Cauchy-Binet.
    det2: f64,
}

fn gram(rows: usize, entries: &[f64], order: &[usize]) -> Gram {
    let cols = order.len();
    let at = |r: usize, c: usize| entries[c * rows + r];
    let mut m = [[0.0; 3]; 3];
    let mut det2 = 0.0;
    if rows <= cols {
        for i in 0..rows {
            for j in i..rows {
                let s: f64 = order.iter().map(|&t| at(i, t) * at(j, t)).sum();
                m[i][j] = s;
                m[j][i] = s;
            }
        }
        if rows == 2 {
            for (a, &ta) in order.iter().enumerate() {
                for &tb in &order[a + 1..] {
                    let minor = at(0, ta) * at(1, tb) - at(0, tb) * at(1, ta);
                    det2 += minor * minor;
                }
            }
        }
        Gram {
            size: rows,
            row_side: true,
            m,
            det2,
        }
    } else {
        // cols < rows <= 3, so cols <= 2; `order` indexes columns.
        for a in 0..cols {
            for b in a..cols {
                let s: f64 = (0..rows).map(|r| at(r, order[a]) * at(r, order[b])).sum();
                m[a][b] = s;
                m[b][a] = s;
            }
        }
        if cols == 2 {
            for r in 0..rows {
                for s in r + 1..rows {
                    let minor =
                        at(r, order[0]) * at(s, order[1]) - at(s, order[0]) * at(r, order[1]);
                    det2 += minor * minor;
                }
            }
        }
        Gram {
            size: cols,
            row_side: false,
            m,
            det2,
        }
    }
}

fn gram_eigenvalues(g: &Gram) -> [f64; 3] {
    let mut l = match g.size {
        1 => [g.m[0][0], 0.0, 0.0],
        2 => {
            let [a, b] = sym2_eigenvalues(g.m[0][0], g.m[0][1], g.m[1][1], g.det2);
            [a, b, 0.0]
        }
        _ => sym3_eigenvalues(&g.m),
    };
    for v in l.iter_mut() {
        *v = v.max(0.0);
    }
    l
}

pub(crate) fn eigenvalues_of(
    rows: usize,
    entries: &[f64],
    order: &mut Vec<usize>,
) -> ([f64; 3], usize) {
    canonical_order(rows, entries, order);
    let g = gram(rows, entries, order);
    (gram_eigenvalues(&g), g.size)
}

pub fn spectrum(a: &GradientMatrix) -> SingularSpectrum {
    let mut order = Vec::with_capacity(a.cols);
    let (l, k) = eigenvalues_of(a.rows, &a.entries, &mut order);
    SingularSpectrum(l[..k].iter().map(|v| v.sqrt()).collect())
}

fn value_from_eigenvalues(l: &[f64], cfg: &SchattenConfig) -> f64 {
    if cfg.q == 0.0 && cfg.epsilon == 0.0 {
        let largest = l.first().copied().unwrap_or(0.0).sqrt();
        let tol = largest * 3.0 * f64::EPSILON * (l.len() as f64).max(1.0);
        return l.iter().filter(|v| v.sqrt() > tol).count() as f64;
    }
    let e2 = cfg.epsilon * cfg.epsilon;
    let half_q = 0.5 * cfg.q;
    l.iter()
        .map(|&v| {
            if cfg.q == 2.0 {
                v + e2
            } else {
                (v + e2).powf(half_q)
            }
        })
        .sum()
}

/// `sum_i (sigma_i^2 + eps^2)^(q/2)`; the plain `sum_i sigma_i^q` when
/// `eps = 0`, the rank when additionally `q = 0`.
pub fn schatten_value(a: &GradientMatrix, cfg: &SchattenConfig) -> f64 {
    let mut order = Vec::with_capacity(a.cols);
    let (l, k) = eigenvalues_of(a.rows, &a.entries, &mut order);
    value_from_eigenvalues(&l[..k], cfg)
}

/// Value and (optionally) gradient for a column-major `rows x cols` slice.
/// `grad` must hold `rows * cols` entries. Used by the per-node loops.
pub(crate) fn value_and_grad(
    rows: usize,
    entries: &[f64],
    cfg: &SchattenConfig,
    order: &mut Vec<usize>,
    grad: Option<&mut [f64]>,
) -> f64 {
    canonical_order(rows, entries, order);
    let g = gram(rows, entries, order);
    let l = gram_eigenvalues(&g);
    let value = value_from_eigenvalues(&l[..g.size], cfg);
    let Some(grad) = grad else {
        return value;
    };
    let cols = order.len();
    if cfg.q == 2.0 {
        for (o, a) in grad.iter_mut().zip(entries) {
            *o = 2.0 * a;
        }
        return value;
    }
    // W = V diag(q (lambda + eps^2)^(q/2 - 1)) V^T on the Gram side.
    let e2 = cfg.epsilon * cfg.epsilon;
    let weight = |v: f64| cfg.q * (v + e2).powf(0.5 * cfg.q - 1.0);
    let mut w = [[0.0; 3]; 3];
    match g.size {
        1 => w[0][0] = weight(l[0]),
        2 => {
            let [c, s] = sym2_major_axis(g.m[0][0], g.m[0][1], g.m[1][1]);
            let (w1, w2) = (weight(l[0]), weight(l[1]));
            w[0][0] = w1 * c * c + w2 * s * s;
            w[1][1] = w1 * s * s + w2 * c * c;
            w[0][1] = (w1 - w2) * c * s;
            w[1][0] = w[0][1];
        }
        _ => {
            let (vals, vecs) = sym3_eigen(&g.m);
            let ws = vals.map(|v| weight(v.max(0.0)));
            for i in 0..3 {
                for j in 0..3 {
                    w[i][j] = (0..3).map(|k| ws[k] * vecs[i][k] * vecs[j][k]).sum();
                }
            }
        }
    }
    let at = |r: usize, c: usize| entries[c * rows + r];
    if g.row_side {
        // G = W A
        for c in 0..cols {
            for r in 0..rows {
                grad[c * rows + r] = (0..rows).map(|k| w[r][k] * at(k, c)).sum();
            }
        }
    } else {
        // G = A W with W indexed in canonical column order.
        for (a, &ca) in order.iter().enumerate() {
            for r in 0..rows {
                grad[ca * rows + r] = order
                    .iter()
                    .enumerate()
                    .map(|(b, &cb)| at(r, cb) * w[b][a])
                    .sum();
            }
        }
    }
    value
}

/// Derivative of [`schatten_value`] with respect to the matrix entries.
pub fn schatten_grad(a: &GradientMatrix, cfg: &SchattenConfig) -> Result<GradientMatrix> {
    cfg.check_differentiable()?;
    let mut order = Vec::with_capacity(a.cols);
    let mut grad = vec![0.0; a.entries.len()];
    value_and_grad(a.rows, &a.entries, cfg, &mut order, Some(&mut grad));
    GradientMatrix::new(a.rows, a.cols, grad)
}
