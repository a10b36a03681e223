//! Similarity measures: the groupwise SqN measure and the pairwise NGF, SSD
//! and MI baselines.
//!
//! All distances are discretized as `cell_volume * sum over nodes`, and
//! smaller always means more similar. Gradients are taken with respect to
//! the displacement field(s) in the same node-major layout as
//! [`DisplacementField::values`]. The finite-difference gradient stencil
//! enters as a linear operator whose transpose is applied explicitly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Image, ImageStack};
use crate::ngf::{
    gradient_adjoint, gradient_values, normalize_jacobian_apply, normalize_vector, EdgeParameter,
};
use crate::schatten::{value_and_grad, SchattenConfig};
use crate::transform::{warp, DisplacementField, Warped};

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureResult {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub cell_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqnConfig {
    pub schatten: SchattenConfig,
    pub eta: EdgeParameter,
}

impl Default for SqnConfig {
    fn default() -> Self {
        Self {
            schatten: SchattenConfig::default(),
            eta: EdgeParameter::default(),
        }
    }
}

impl SqnConfig {
    pub fn new(q: f64, eta: f64, epsilon: f64) -> Result<Self> {
        Ok(Self {
            schatten: SchattenConfig::new(q, epsilon)?,
            eta: EdgeParameter::new(eta)?,
        })
    }
}

/// Which distance to use, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureConfig {
    Sqn(SqnConfig),
    Ngf { eta: EdgeParameter },
    Ssd,
    Mi { bins: usize },
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            MeasureConfig::Mi { bins } if *bins < 2 => Err(Error::InvalidParameter(format!(
                "MI needs at least 2 bins, got {bins}"
            ))),
            _ => Ok(()),
        }
    }

    /// Short label, e.g. `sqn_q0.5`, `ngf`, `ssd`, `mi`.
    pub fn label(&self) -> String {
        match self {
            MeasureConfig::Sqn(c) => format!("sqn_q{}", c.schatten.q),
            MeasureConfig::Ngf { .. } => "ngf".into(),
            MeasureConfig::Ssd => "ssd".into(),
            MeasureConfig::Mi { .. } => "mi".into(),
        }
    }
}

fn check_fields(stack: &ImageStack, fields: &[DisplacementField]) -> Result<()> {
    if fields.len() != stack.len() {
        return Err(Error::InvalidParameter(format!(
            "{} fields for {} frames",
            fields.len(),
            stack.len()
        )));
    }
    for (t, f) in fields.iter().enumerate() {
        stack.grid().ensure_same(f.grid(), &format!("field {t}"))?;
    }
    Ok(())
}

/// Per-frame quantities shared by the SqN value and gradient.
struct FrameState {
    warped: Warped,
    grad: Vec<f64>,
    eta_vec: Vec<f64>,
    norm: Vec<f64>,
}

fn frame_state(image: &Image, field: &DisplacementField, eta: f64) -> Result<FrameState> {
    let grid = image.grid();
    let d = grid.ndim();
    let warped = warp(image, field)?;
    let grad = gradient_values(grid, &warped.values);
    let mut eta_vec = vec![0.0; grad.len()];
    let norm = grad
        .chunks(d)
        .zip(eta_vec.chunks_mut(d))
        .map(|(g, out)| normalize_vector(g, eta, out))
        .collect();
    Ok(FrameState {
        warped,
        grad,
        eta_vec,
        norm,
    })
}

fn sqn_impl(
    stack: &ImageStack,
    fields: &[DisplacementField],
    cfg: &SqnConfig,
    want_gradient: bool,
) -> Result<MeasureResult> {
    check_fields(stack, fields)?;
    if want_gradient {
        cfg.schatten.check_differentiable()?;
    }
    let grid = stack.grid();
    let d = grid.ndim();
    let n = grid.len();
    let frames = stack.len();
    let cell_volume = grid.cell_volume();
    let eta = cfg.eta.value();

    let states = stack
        .frames()
        .par_iter()
        .zip(fields.par_iter())
        .map(|(img, f)| frame_state(img, f, eta))
        .collect::<Result<Vec<_>>>()?;

    // Per node: value and, if requested, d(value)/d(A) as a d x T matrix.
    let block = d * frames;
    let mut node_values = vec![0.0; n];
    let mut node_grads = if want_gradient {
        vec![0.0; n * block]
    } else {
        Vec::new()
    };
    let schatten = cfg.schatten;
    let node_kernel = |i: usize,
                       value: &mut f64,
                       g: Option<&mut [f64]>,
                       a: &mut Vec<f64>,
                       order: &mut Vec<usize>| {
        a.clear();
        for s in &states {
            a.extend_from_slice(&s.eta_vec[i * d..(i + 1) * d]);
        }
        *value = value_and_grad(d, a, &schatten, order, g);
    };
    if want_gradient {
        node_values
            .par_iter_mut()
            .zip(node_grads.par_chunks_mut(block))
            .enumerate()
            .for_each_init(
                || (Vec::with_capacity(block), Vec::with_capacity(frames)),
                |(a, order), (i, (v, g))| node_kernel(i, v, Some(g), a, order),
            );
    } else {
        node_values.par_iter_mut().enumerate().for_each_init(
            || (Vec::with_capacity(block), Vec::with_capacity(frames)),
            |(a, order), (i, v)| node_kernel(i, v, None, a, order),
        );
    }
    let value = cell_volume * node_values.iter().sum::<f64>();
    if !value.is_finite() {
        return Err(Error::NonFinite("SqN value".into()));
    }
    if !want_gradient {
        return Ok(MeasureResult {
            value,
            gradient: Vec::new(),
            cell_volume,
        });
    }

    // Chain rule per frame: normalization, stencil transpose, interpolation.
    let per_frame: Vec<Vec<f64>> = states
        .par_iter()
        .enumerate()
        .map(|(t, s)| {
            let mut dg = vec![0.0; n * d];
            for i in 0..n {
                let upstream: [f64; 3] = std::array::from_fn(|k| {
                    if k < d {
                        cell_volume * node_grads[i * block + t * d + k]
                    } else {
                        0.0
                    }
                });
                normalize_jacobian_apply(
                    &s.grad[i * d..(i + 1) * d],
                    s.norm[i],
                    &upstream[..d],
                    &mut dg[i * d..(i + 1) * d],
                );
            }
            let dw = gradient_adjoint(grid, &dg);
            let mut du = vec![0.0; n * d];
            for i in 0..n {
                for k in 0..d {
                    du[i * d + k] = dw[i] * s.warped.jacobians[i * d + k];
                }
            }
            du
        })
        .collect();
    Ok(MeasureResult {
        value,
        gradient: per_frame.concat(),
        cell_volume,
    })
}

/// SqN of the warped stack with its gradient with respect to all fields
/// (frame-major concatenation).
pub fn sqn(
    stack: &ImageStack,
    fields: &[DisplacementField],
    cfg: &SqnConfig,
) -> Result<MeasureResult> {
    sqn_impl(stack, fields, cfg, true)
}

/// SqN value only; allows non-differentiable settings such as `eps = 0`.
pub fn sqn_value(stack: &ImageStack, fields: &[DisplacementField], cfg: &SqnConfig) -> Result<f64> {
    sqn_impl(stack, fields, cfg, false).map(|r| r.value)
}

/// Which pairwise residual model to linearize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairKind {
    Ngf { eta: EdgeParameter },
    Ssd,
}

/// Linearization of a pairwise distance at the current field, exposing a
/// Gauss-Newton approximation of its Hessian.
pub struct PairLinearization {
    kind: PairKind,
    cell_volume: f64,
    grid: crate::grid::Grid,
    jacobians: Vec<f64>,
    /// NGF only: derivatives of the residuals with respect to the warped
    /// template gradient, `rows` vectors of length `d` per node.
    dr: Vec<f64>,
    rows: usize,
}

impl PairLinearization {
    pub fn len(&self) -> usize {
        self.jacobians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }

    /// `H v` with `H = J^T W J` for the residual jacobian `J`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.grid.ndim();
        let n = self.grid.len();
        let jv: Vec<f64> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| self.jacobians[i * d + k] * v[i * d + k])
                    .sum()
            })
            .collect();
        let back = match self.kind {
            PairKind::Ssd => jv.iter().map(|x| self.cell_volume * x).collect::<Vec<_>>(),
            PairKind::Ngf { .. } => {
                let dg = gradient_values(&self.grid, &jv);
                let mut b = vec![0.0; n * d];
                for i in 0..n {
                    let dgi = &dg[i * d..(i + 1) * d];
                    let base = i * self.rows * d;
                    for row in self.dr[base..base + self.rows * d].chunks(d) {
                        let w = 2.0
                            * self.cell_volume
                            * row.iter().zip(dgi).map(|(a, c)| a * c).sum::<f64>();
                        for k in 0..d {
                            b[i * d + k] += row[k] * w;
                        }
                    }
                }
                gradient_adjoint(&self.grid, &b)
            }
        };
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                out[i * d + k] = back[i] * self.jacobians[i * d + k];
            }
        }
        out
    }
}

fn check_pair(reference: &Image, template: &Image, field: &DisplacementField) -> Result<()> {
    reference
        .grid()
        .ensure_same(template.grid(), "reference/template")?;
    template.grid().ensure_same(field.grid(), "template/field")
}

/// Value, gradient with respect to the template's field, and the
/// Gauss-Newton linearization.
pub fn pair_linearize(
    kind: PairKind,
    reference: &Image,
    template: &Image,
    field: &DisplacementField,
) -> Result<(MeasureResult, PairLinearization)> {
    check_pair(reference, template, field)?;
    let grid = template.grid().clone();
    let d = grid.ndim();
    let n = grid.len();
    let cell_volume = grid.cell_volume();
    let warped = warp(template, field)?;
    let (value, dw, dr, rows) = match kind {
        PairKind::Ssd => {
            let res: Vec<f64> = warped
                .values
                .iter()
                .zip(reference.values())
                .map(|(w, r)| w - r)
                .collect();
            let value = 0.5 * cell_volume * res.iter().map(|r| r * r).sum::<f64>();
            let dw: Vec<f64> = res.iter().map(|r| cell_volume * r).collect();
            (value, dw, Vec::new(), 0)
        }
        PairKind::Ngf { eta } => {
            let eta = eta.value();
            let e2 = eta * eta;
            let gr = gradient_values(&grid, reference.values());
            let gt = gradient_values(&grid, &warped.values);
            // 1 - r^2 = sum over k < l of ((a_k b_l - a_l b_k) / p)^2
            //         + sum over k of (eta (a_k - b_k) / p)^2,  p = |a|_eta |b|_eta,
            // so the Gauss-Newton model is built from these residuals.
            let rows = d * (d - 1) / 2 + d;
            let mut dr = vec![0.0; n * rows * d];
            let mut dg = vec![0.0; n * d];
            let mut total = 0.0;
            for i in 0..n {
                let a = &gr[i * d..(i + 1) * d];
                let b = &gt[i * d..(i + 1) * d];
                let na = (a.iter().map(|x| x * x).sum::<f64>() + e2).sqrt();
                let nb2 = b.iter().map(|x| x * x).sum::<f64>() + e2;
                let nb = nb2.sqrt();
                let p = na * nb;
                let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let r = (ab + e2) / p;
                total += 1.0 - r * r;
                for k in 0..d {
                    dg[i * d + k] = -2.0 * cell_volume * r * (a[k] / p - r * b[k] / nb2);
                }
                let mut slot = i * rows * d;
                for k in 0..d {
                    for l in k + 1..d {
                        let rho = (a[k] * b[l] - a[l] * b[k]) / p;
                        for j in 0..d {
                            dr[slot + j] = -rho * b[j] / nb2;
                        }
                        dr[slot + l] += a[k] / p;
                        dr[slot + k] -= a[l] / p;
                        slot += d;
                    }
                }
                for k in 0..d {
                    let rho = eta * (a[k] - b[k]) / p;
                    for j in 0..d {
                        dr[slot + j] = -rho * b[j] / nb2;
                    }
                    dr[slot + k] -= eta / p;
                    slot += d;
                }
            }
            (cell_volume * total, gradient_adjoint(&grid, &dg), dr, rows)
        }
    };
    let mut gradient = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..d {
            gradient[i * d + k] = dw[i] * warped.jacobians[i * d + k];
        }
    }
    let result = MeasureResult {
        value,
        gradient,
        cell_volume,
    };
    let lin = PairLinearization {
        kind,
        cell_volume,
        grid,
        jacobians: warped.jacobians,
        dr,
        rows,
    };
    Ok((result, lin))
}

/// Pairwise NGF distance `sum (1 - r^2)` with `r` the eta-regularized
/// cosine between the reference and warped template gradients.
pub fn ngf_pair(
    reference: &Image,
    template: &Image,
    field: &DisplacementField,
    eta: EdgeParameter,
) -> Result<MeasureResult> {
    pair_linearize(PairKind::Ngf { eta }, reference, template, field).map(|(r, _)| r)
}

/// `0.5 * cell_volume * sum (template(y) - reference)^2`.
pub fn ssd_pair(
    reference: &Image,
    template: &Image,
    field: &DisplacementField,
) -> Result<MeasureResult> {
    pair_linearize(PairKind::Ssd, reference, template, field).map(|(r, _)| r)
}

/// Negated mutual information (nats) of the joint histogram of reference
/// and warped template, equal-width bins over `[0, 256)`.
pub fn mi_pair(
    reference: &Image,
    template: &Image,
    field: &DisplacementField,
    bins: usize,
) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "MI needs at least 2 bins, got {bins}"
        )));
    }
    check_pair(reference, template, field)?;
    let warped = warp(template, field)?;
    let bin = |v: f64| ((v.clamp(0.0, 255.0) * bins as f64 / 256.0) as usize).min(bins - 1);
    let mut joint = vec![0usize; bins * bins];
    for (&r, &t) in reference.values().iter().zip(&warped.values) {
        joint[bin(r) * bins + bin(t)] += 1;
    }
    let total = reference.values().len() as f64;
    let mut pr = vec![0.0; bins];
    let mut pt = vec![0.0; bins];
    for a in 0..bins {
        for b in 0..bins {
            let p = joint[a * bins + b] as f64 / total;
            pr[a] += p;
            pt[b] += p;
        }
    }
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let p = c as f64 / total;
                mi += p * (p / (pr[a] * pt[b])).ln();
            }
        }
    }
    Ok(-mi)
}

/// Value of any configured measure for a reference/template pair; SqN is
/// evaluated on the two-frame stack with the reference unwarped.
pub fn pair_value(
    cfg: &MeasureConfig,
    reference: &Image,
    template: &Image,
    field: &DisplacementField,
) -> Result<f64> {
    cfg.validate()?;
    match cfg {
        MeasureConfig::Sqn(c) => {
            let stack = ImageStack::new(vec![reference.clone(), template.clone()])?;
            let fields = [
                DisplacementField::zeros(reference.grid().clone()),
                field.clone(),
            ];
            sqn_value(&stack, &fields, c)
        }
        MeasureConfig::Ngf { eta } => ngf_pair(reference, template, field, *eta).map(|r| r.value),
        MeasureConfig::Ssd => ssd_pair(reference, template, field).map(|r| r.value),
        MeasureConfig::Mi { bins } => mi_pair(reference, template, field, *bins),
    }
}
