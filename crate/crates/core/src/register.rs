//! Multi-level registration drivers.
//!
//! `register_global` minimizes `SqN(I_1(u_1), ..., I_T(u_T)) + alpha * sum S(u_t)`
//! over all frames at once with frame 1 frozen at zero. `register_sequential`
//! minimizes `sum_t D(I_t(u_t), I_{t+1}(u_{t+1})) + alpha * sum S(u_t)` for a
//! pairwise distance `D` by alternating forward-backward sweeps, each
//! subproblem updating one frame with all others fixed.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{build_pyramid, Grid, Image, ImageStack, PyramidLevel};
use crate::measures::{pair_linearize, sqn, sqn_value, PairKind, PairLinearization, SqnConfig};
use crate::optimize::{minimize, sorted_sum, Evaluation, Objective, OptimizerConfig, TraceEntry};
use crate::regularizer::{
    curvature, curvature_apply, curvature_value, solve_shifted_biharmonic, RegularizerConfig,
};
use crate::transform::{prolong, warp_image, DisplacementField};

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub fields: Vec<DisplacementField>,
    pub trace: Vec<TraceEntry>,
    /// Wall-clock seconds per pyramid level, coarsest first.
    pub stage_seconds: Vec<(usize, f64)>,
    pub converged: bool,
    /// Objective at the returned fields on the finest level.
    pub objective: f64,
}

fn finest_levels(stack: &ImageStack, cfg: &OptimizerConfig) -> Result<Vec<PyramidLevel>> {
    cfg.validate()?;
    let mut pyramid = build_pyramid(stack, cfg.min_level_dim)?;
    pyramid.truncate(cfg.levels);
    pyramid.reverse();
    Ok(pyramid)
}

fn level_config(cfg: &OptimizerConfig, grid: &Grid) -> OptimizerConfig {
    let h = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut c = cfg.clone();
    c.initial_step.get_or_insert(h);
    c.max_step.get_or_insert(2.0 * h);
    c
}

fn split(grid: &Grid, x: &[f64]) -> Result<Vec<DisplacementField>> {
    let block = grid.len() * grid.ndim();
    x.chunks(block)
        .map(|c| DisplacementField::new(grid.clone(), c.to_vec()))
        .collect()
}

fn prolong_all(fields: &[DisplacementField], grid: &Grid) -> Result<Vec<DisplacementField>> {
    fields.iter().map(|f| prolong(f, grid)).collect()
}

struct GlobalObjective<'a> {
    stack: &'a ImageStack,
    sqn: SqnConfig,
    alpha: f64,
}

impl GlobalObjective<'_> {
    fn fields(&self, x: &[f64]) -> Result<Vec<DisplacementField>> {
        let grid = self.stack.grid();
        let mut fields = vec![DisplacementField::zeros(grid.clone())];
        fields.extend(split(grid, x)?);
        Ok(fields)
    }

    fn regularization(&self, fields: &[DisplacementField]) -> Result<f64> {
        let terms = fields
            .iter()
            .map(curvature_value)
            .collect::<Result<Vec<_>>>()?;
        Ok(self.alpha * sorted_sum(terms))
    }
}

impl Objective for GlobalObjective<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let fields = self.fields(x)?;
        let data = sqn(self.stack, &fields, &self.sqn)?;
        let block = self.stack.grid().len() * self.stack.grid().ndim();
        let mut gradient = data.gradient[block..].to_vec();
        let mut terms = Vec::with_capacity(fields.len());
        for (t, f) in fields.iter().enumerate().skip(1) {
            let (v, g) = curvature(f)?;
            terms.push(v);
            for (o, gi) in gradient[(t - 1) * block..t * block].iter_mut().zip(&g) {
                *o += self.alpha * gi;
            }
        }
        terms.push(curvature_value(&fields[0])?);
        Ok(Evaluation {
            value: data.value + self.alpha * sorted_sum(terms),
            gradient,
            hessian: None,
        })
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let fields = self.fields(x)?;
        Ok(sqn_value(self.stack, &fields, &self.sqn)? + self.regularization(&fields)?)
    }

    fn block_len(&self) -> Option<usize> {
        Some(self.stack.grid().len() * self.stack.grid().ndim())
    }

    fn precondition(&self, v: &[f64]) -> Option<Vec<f64>> {
        let grid = self.stack.grid();
        let block = grid.len() * grid.ndim();
        let kappa2 = smoothing_shift(grid);
        Some(
            v.chunks(block)
                .flat_map(|c| solve_shifted_biharmonic(grid, c, kappa2))
                .collect(),
        )
    }
}

/// Cutoff of the smoothing preconditioner relative to the largest grid
/// extent: displacement modes with longer wavelengths are treated alike.
const PRECONDITIONER_WAVELENGTH: f64 = 4.0;

fn smoothing_shift(grid: &Grid) -> f64 {
    let extent = grid
        .dims()
        .iter()
        .zip(grid.spacing())
        .map(|(&m, &h)| m as f64 * h)
        .fold(0.0, f64::max);
    let k = 2.0 * std::f64::consts::PI / (PRECONDITIONER_WAVELENGTH * extent);
    k.powi(4)
}

/// Value of the global objective for the given fields (frame 1 included as given).
pub fn global_objective(
    stack: &ImageStack,
    fields: &[DisplacementField],
    sqn_cfg: &SqnConfig,
    reg: &RegularizerConfig,
) -> Result<f64> {
    let terms = fields
        .iter()
        .map(curvature_value)
        .collect::<Result<Vec<_>>>()?;
    Ok(sqn_value(stack, fields, sqn_cfg)? + reg.alpha * sorted_sum(terms))
}

/// Groupwise SqN registration of all frames; frame 1 stays at zero.
pub fn register_global(
    stack: &ImageStack,
    sqn_cfg: &SqnConfig,
    reg: &RegularizerConfig,
    cfg: &OptimizerConfig,
) -> Result<RegistrationResult> {
    sqn_cfg.schatten.check_differentiable()?;
    let levels = finest_levels(stack, cfg)?;
    let mut fields: Vec<DisplacementField> = Vec::new();
    let mut trace = Vec::new();
    let mut stage_seconds = Vec::new();
    let mut converged = true;
    for level in &levels {
        let start = Instant::now();
        let grid = level.stack.grid();
        fields = if fields.is_empty() {
            (0..stack.len())
                .map(|_| DisplacementField::zeros(grid.clone()))
                .collect()
        } else {
            prolong_all(&fields, grid)?
        };
        let objective = GlobalObjective {
            stack: &level.stack,
            sqn: *sqn_cfg,
            alpha: reg.alpha,
        };
        let x0: Vec<f64> = fields[1..]
            .iter()
            .flat_map(|f| f.values().iter().copied())
            .collect();
        let out = minimize(&objective, x0, &level_config(cfg, grid), level.level)?;
        converged = out.converged;
        fields = objective.fields(&out.x)?;
        trace.extend(out.trace);
        stage_seconds.push((level.level, start.elapsed().as_secs_f64()));
    }
    let objective = global_objective(stack, &fields, sqn_cfg, reg)?;
    Ok(RegistrationResult {
        fields,
        trace,
        stage_seconds,
        converged,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialConfig {
    pub kind: PairKind,
    /// Number of forward-backward sweeps per level.
    pub sweeps: usize,
    pub freeze_first: bool,
    pub freeze_last: bool,
}

impl SequentialConfig {
    pub fn new(kind: PairKind) -> Self {
        Self {
            kind,
            sweeps: 1,
            freeze_first: false,
            freeze_last: false,
        }
    }
}

/// Subproblem for one frame: its pair terms against the warped neighbors.
struct FrameObjective<'a> {
    kind: PairKind,
    references: Vec<Image>,
    template: &'a Image,
    alpha: f64,
}

impl Objective for FrameObjective<'_> {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let grid = self.template.grid().clone();
        let field = DisplacementField::new(grid.clone(), x.to_vec())?;
        let (reg, mut gradient) = curvature(&field)?;
        for g in gradient.iter_mut() {
            *g *= self.alpha;
        }
        let mut value = self.alpha * reg;
        let mut models: Vec<PairLinearization> = Vec::with_capacity(self.references.len());
        for r in &self.references {
            let (res, lin) = pair_linearize(self.kind, r, self.template, &field)?;
            value += res.value;
            for (o, g) in gradient.iter_mut().zip(&res.gradient) {
                *o += g;
            }
            models.push(lin);
        }
        let alpha = self.alpha;
        let hessian = move |v: &[f64]| {
            let mut out = curvature_apply(&grid, v);
            for o in out.iter_mut() {
                *o *= alpha;
            }
            for m in &models {
                for (o, h) in out.iter_mut().zip(m.apply(v)) {
                    *o += h;
                }
            }
            out
        };
        Ok(Evaluation {
            value,
            gradient,
            hessian: Some(Box::new(hessian)),
        })
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let field = DisplacementField::new(self.template.grid().clone(), x.to_vec())?;
        let mut value = self.alpha * curvature_value(&field)?;
        for r in &self.references {
            value += pair_linearize(self.kind, r, self.template, &field)?.0.value;
        }
        Ok(value)
    }
}

/// Chain objective `sum_t D(I_t(u_t), I_{t+1}(u_{t+1})) + alpha * sum_t S(u_t)`.
pub fn sequential_objective(
    stack: &ImageStack,
    fields: &[DisplacementField],
    kind: PairKind,
    reg: &RegularizerConfig,
) -> Result<f64> {
    if fields.len() != stack.len() {
        return Err(Error::InvalidParameter(format!(
            "{} fields for {} frames",
            fields.len(),
            stack.len()
        )));
    }
    let frames = stack.frames();
    let mut value = 0.0;
    for t in 0..frames.len() - 1 {
        let reference = warp_image(&frames[t], &fields[t])?;
        value += pair_linearize(kind, &reference, &frames[t + 1], &fields[t + 1])?
            .0
            .value;
    }
    let terms = fields
        .iter()
        .map(curvature_value)
        .collect::<Result<Vec<_>>>()?;
    Ok(value + reg.alpha * sorted_sum(terms))
}

/// Visiting order of one forward-backward sweep: `0..T`, then `T-2..=0`.
pub fn sweep_order(frames: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..frames).collect();
    order.extend((0..frames.saturating_sub(1)).rev());
    order
}

/// Alternating pairwise registration along the frame chain.
pub fn register_sequential(
    stack: &ImageStack,
    seq: &SequentialConfig,
    reg: &RegularizerConfig,
    cfg: &OptimizerConfig,
) -> Result<RegistrationResult> {
    if seq.sweeps == 0 {
        return Err(Error::InvalidParameter("sweeps must be positive".into()));
    }
    let levels = finest_levels(stack, cfg)?;
    let frames = stack.len();
    let frozen = |t: usize| (seq.freeze_first && t == 0) || (seq.freeze_last && t == frames - 1);
    let mut fields: Vec<DisplacementField> = Vec::new();
    let mut trace = Vec::new();
    let mut stage_seconds = Vec::new();
    let mut converged = true;
    for level in &levels {
        let start = Instant::now();
        let grid = level.stack.grid();
        let images = level.stack.frames();
        fields = if fields.is_empty() {
            (0..frames)
                .map(|_| DisplacementField::zeros(grid.clone()))
                .collect()
        } else {
            prolong_all(&fields, grid)?
        };
        let lcfg = level_config(cfg, grid);
        let mut current = sequential_objective(&level.stack, &fields, seq.kind, reg)?;
        trace.push(TraceEntry {
            level: level.level,
            iteration: 0,
            value: current,
            grad_norm: f64::NAN,
            step: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            armijo_slack: 0.0,
        });
        converged = true;
        let mut iteration = 0;
        for _ in 0..seq.sweeps {
            for t in sweep_order(frames) {
                if frozen(t) {
                    continue;
                }
                let mut references = Vec::with_capacity(2);
                if t > 0 {
                    references.push(warp_image(&images[t - 1], &fields[t - 1])?);
                }
                if t + 1 < frames {
                    references.push(warp_image(&images[t + 1], &fields[t + 1])?);
                }
                let objective = FrameObjective {
                    kind: seq.kind,
                    references,
                    template: &images[t],
                    alpha: reg.alpha,
                };
                let out = minimize(&objective, fields[t].values().to_vec(), &lcfg, level.level)?;
                converged &= out.converged;
                fields[t] = DisplacementField::new(grid.clone(), out.x)?;
                let value = sequential_objective(&level.stack, &fields, seq.kind, reg)?;
                assert!(
                    value <= current + 1e-12 * current.abs(),
                    "chain objective increased during a sweep"
                );
                current = value;
                iteration += 1;
                trace.push(TraceEntry {
                    level: level.level,
                    iteration,
                    value,
                    grad_norm: out.grad_norm,
                    step: out.trace.last().map(|e| e.step).unwrap_or(0.0),
                    seconds: start.elapsed().as_secs_f64(),
                    armijo_slack: out
                        .trace
                        .iter()
                        .map(|e| e.armijo_slack)
                        .fold(f64::INFINITY, f64::min),
                });
            }
        }
        stage_seconds.push((level.level, start.elapsed().as_secs_f64()));
    }
    let objective = sequential_objective(stack, &fields, seq.kind, reg)?;
    Ok(RegistrationResult {
        fields,
        trace,
        stage_seconds,
        converged,
        objective,
    })
}
