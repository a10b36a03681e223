//! Descent drivers with Armijo backtracking.
//!
//! Objectives that expose a Gauss-Newton model get directions from a few
//! conjugate-gradient steps on the model; all others use L-BFGS.

use std::time::Instant;

use crate::error::{Error, Result};

/// Symmetric positive semidefinite model of the Hessian, applied to a vector.
pub type HessianModel = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<HessianModel>,
}

pub trait Objective {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x).map(|e| e.value)
    }

    /// Length of the exchangeable blocks of the unknown (one per frame),
    /// used for order-independent reductions in deterministic mode.
    fn block_len(&self) -> Option<usize> {
        None
    }

    /// Symmetric positive definite approximation of the inverse Hessian,
    /// used as the initial matrix of the quasi-Newton recursion.
    fn precondition(&self, _v: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop once the gradient norm falls below this fraction of the initial one.
    pub gradient_tolerance: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub history: usize,
    /// Largest component of the first steepest-descent step; `None` lets the
    /// caller choose (the registration drivers use the grid spacing).
    pub initial_step: Option<f64>,
    /// Largest change of any unknown in one iteration; longer directions are
    /// shortened. `None` lets the caller choose (twice the grid spacing in
    /// the registration drivers, unlimited otherwise).
    pub max_step: Option<f64>,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
    pub levels: usize,
    pub min_level_dim: usize,
    pub deterministic: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            gradient_tolerance: 1e-3,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 20,
            history: 5,
            initial_step: None,
            max_step: None,
            cg_max_iterations: 50,
            cg_tolerance: 0.1,
            levels: 3,
            min_level_dim: 8,
            deterministic: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient_tolerance must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if self.max_backtracks == 0 || self.history == 0 || self.cg_max_iterations == 0 {
            return bad("max_backtracks, history and cg_max_iterations must be positive");
        }
        if !(self.cg_tolerance > 0.0) {
            return bad("cg_tolerance must be positive");
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0 && s.is_finite()) {
                return bad("initial_step must be positive");
            }
        }
        if let Some(s) = self.max_step {
            if !(s > 0.0) {
                return bad("max_step must be positive");
            }
        }
        if self.levels == 0 {
            return bad("levels must be positive");
        }
        if self.min_level_dim < 4 {
            return bad("min_level_dim must be at least 4");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub level: usize,
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub seconds: f64,
    /// `f(x) + c t g^T d - f(x + t d)` at the accepted step; never negative.
    pub armijo_slack: f64,
}

/// Wall-clock times stay out of the CSV so identical runs give identical files.
pub const TRACE_HEADER: &str = "iteration,level,value,grad_norm,step,armijo_slack";

impl TraceEntry {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.iteration, self.level, self.value, self.grad_norm, self.step, self.armijo_slack
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub step: f64,
    pub value: f64,
    pub slack: f64,
    pub stalled: bool,
}

pub(crate) struct Reducer {
    block: Option<usize>,
}

impl Reducer {
    pub(crate) fn new(block: Option<usize>, deterministic: bool) -> Self {
        Self {
            block: if deterministic {
                block.filter(|&b| b > 0)
            } else {
                None
            },
        }
    }

    pub(crate) fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.block {
            None => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Some(len) => {
                let parts: Vec<f64> = a
                    .chunks(len)
                    .zip(b.chunks(len))
                    .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
                    .collect();
                sorted_sum(parts)
            }
        }
    }

    fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}

/// Sum that does not depend on the order of its terms.
pub fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Backtracking along `direction` from `x`, trying `t = 1, b, b^2, ...`.
pub fn armijo(
    objective: &dyn Objective,
    x: &[f64],
    direction: &[f64],
    value: f64,
    gradient: &[f64],
    cfg: &OptimizerConfig,
) -> Result<LineSearch> {
    let slope: f64 = gradient.iter().zip(direction).map(|(g, d)| g * d).sum();
    line_search(objective, x, direction, value, slope, cfg)
}

fn line_search(
    objective: &dyn Objective,
    x: &[f64],
    direction: &[f64],
    value: f64,
    slope: f64,
    cfg: &OptimizerConfig,
) -> Result<LineSearch> {
    if !(slope < 0.0) {
        return Err(Error::NotDescent(slope));
    }
    let mut t = 1.0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..=cfg.max_backtracks {
        for ((o, xi), di) in trial.iter_mut().zip(x).zip(direction) {
            *o = xi + t * di;
        }
        if let Ok(f) = objective.value(&trial) {
            let bound = value + cfg.armijo_c * t * slope;
            if f.is_finite() && f <= bound {
                let slack = bound - f;
                assert!(slack >= 0.0, "Armijo inequality violated");
                return Ok(LineSearch {
                    step: t,
                    value: f,
                    slack,
                    stalled: false,
                });
            }
        }
        t *= cfg.backtrack_factor;
    }
    Ok(LineSearch {
        step: 0.0,
        value,
        slack: 0.0,
        stalled: true,
    })
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub stalled: bool,
}

struct History {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
    capacity: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, sy: f64) {
        if self.s.len() == self.capacity {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.s.push(s);
        self.y.push(y);
        self.rho.push(1.0 / sy);
    }

    fn direction(&self, g: &[f64], red: &Reducer, objective: &dyn Objective) -> Vec<f64> {
        let mut q = g.to_vec();
        let m = self.s.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = self.rho[i] * red.dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let last = m - 1;
        let sy = red.dot(&self.s[last], &self.y[last]);
        q = match (
            objective.precondition(&q),
            objective.precondition(&self.y[last]),
        ) {
            (Some(mq), Some(my)) => {
                let gamma = sy / red.dot(&self.y[last], &my);
                mq.iter().map(|v| gamma * v).collect()
            }
            _ => {
                let gamma = sy / red.dot(&self.y[last], &self.y[last]);
                q.iter().map(|v| gamma * v).collect()
            }
        };
        for i in 0..m {
            let beta = self.rho[i] * red.dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter().map(|v| -v).collect()
    }
}

fn conjugate_gradient(
    h: &HessianModel,
    g: &[f64],
    cfg: &OptimizerConfig,
    red: &Reducer,
) -> Vec<f64> {
    let mut d = vec![0.0; g.len()];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut rr = red.dot(&r, &r);
    let stop = cfg.cg_tolerance * rr.sqrt();
    for _ in 0..cfg.cg_max_iterations {
        if rr.sqrt() <= stop {
            break;
        }
        let hp = h(&p);
        let php = red.dot(&p, &hp);
        if !(php > 0.0) {
            break;
        }
        let a = rr / php;
        for i in 0..d.len() {
            d[i] += a * p[i];
            r[i] -= a * hp[i];
        }
        let rr_new = red.dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    d
}

/// Preconditioned steepest descent whose largest component is `scale`.
fn steepest(g: &[f64], scale: f64, objective: &dyn Objective) -> Vec<f64> {
    let p = objective.precondition(g).unwrap_or_else(|| g.to_vec());
    let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if pmax > 0.0 {
        p.iter().map(|v| -v * scale / pmax).collect()
    } else {
        p.iter().map(|v| -v).collect()
    }
}

/// Minimize from `x0`; trace entries are tagged with `level`.
pub fn minimize(
    objective: &dyn Objective,
    x0: Vec<f64>,
    cfg: &OptimizerConfig,
    level: usize,
) -> Result<MinimizeOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let red = Reducer::new(objective.block_len(), cfg.deterministic);
    let mut x = x0;
    let mut eval = objective.evaluate(&x)?;
    if !eval.value.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let g0 = red.norm(&eval.gradient);
    let mut grad_norm = g0;
    let mut trace = vec![TraceEntry {
        level,
        iteration: 0,
        value: eval.value,
        grad_norm,
        step: 0.0,
        seconds: start.elapsed().as_secs_f64(),
        armijo_slack: 0.0,
    }];
    let initial_step = cfg.initial_step.unwrap_or(1.0);
    let mut history = History {
        s: Vec::new(),
        y: Vec::new(),
        rho: Vec::new(),
        capacity: cfg.history,
    };
    let mut converged = g0 == 0.0;
    let mut stalled = false;
    let mut iteration = 0;
    while !converged && iteration < cfg.max_iterations {
        iteration += 1;
        let mut direction = match &eval.hessian {
            Some(h) => conjugate_gradient(h, &eval.gradient, cfg, &red),
            None if history.s.is_empty() => steepest(&eval.gradient, initial_step, objective),
            None => history.direction(&eval.gradient, &red, objective),
        };
        if !(red.dot(&eval.gradient, &direction) < 0.0) {
            history.s.clear();
            history.y.clear();
            history.rho.clear();
            direction = steepest(&eval.gradient, initial_step, objective);
        }
        if let Some(limit) = cfg.max_step {
            let largest = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if largest > limit {
                let scale = limit / largest;
                direction.iter_mut().for_each(|v| *v *= scale);
            }
        }
        let slope = red.dot(&eval.gradient, &direction);
        let ls = line_search(objective, &x, &direction, eval.value, slope, cfg)?;
        if ls.stalled {
            stalled = true;
            break;
        }
        let x_new: Vec<f64> = x
            .iter()
            .zip(&direction)
            .map(|(a, d)| a + ls.step * d)
            .collect();
        let eval_new = objective.evaluate(&x_new)?;
        let s: Vec<f64> = direction.iter().map(|d| ls.step * d).collect();
        let y: Vec<f64> = eval_new
            .gradient
            .iter()
            .zip(&eval.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let sy = red.dot(&s, &y);
        if sy > 1e-10 * red.norm(&s) * red.norm(&y) {
            history.push(s, y, sy);
        }
        x = x_new;
        eval = eval_new;
        grad_norm = red.norm(&eval.gradient);
        let prev = trace.last().map(|e| e.value).unwrap_or(f64::INFINITY);
        assert!(eval.value <= prev, "objective increased within a level");
        trace.push(TraceEntry {
            level,
            iteration,
            value: eval.value,
            grad_norm,
            step: ls.step,
            seconds: start.elapsed().as_secs_f64(),
            armijo_slack: ls.slack,
        });
        converged = grad_norm <= cfg.gradient_tolerance * g0;
    }
    Ok(MinimizeOutcome {
        x,
        value: eval.value,
        grad_norm,
        trace,
        converged,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Plain<F>(F);

    impl<F: std::ops::Fn(&[f64]) -> (f64, Vec<f64>)> Objective for Plain<F> {
        fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
            let (value, gradient) = (self.0)(x);
            Ok(Evaluation {
                value,
                gradient,
                hessian: None,
            })
        }
    }

    fn half_norm(x: &[f64]) -> (f64, Vec<f64>) {
        (0.5 * x.iter().map(|v| v * v).sum::<f64>(), x.to_vec())
    }

    fn quartic(x: &[f64]) -> (f64, Vec<f64>) {
        let n2: f64 = x.iter().map(|v| v * v).sum();
        (n2 * n2, x.iter().map(|v| 4.0 * n2 * v).collect())
    }

    #[test]
    fn armijo_accepts_unit_step_on_quadratic() {
        let f = Plain(half_norm);
        let x = [3.0, -4.0];
        let (v, g) = half_norm(&x);
        let d: Vec<f64> = x.iter().map(|v| -v).collect();
        let ls = armijo(&f, &x, &d, v, &g, &OptimizerConfig::default()).unwrap();
        assert_eq!(ls.step, 1.0);
        assert!(!ls.stalled);
    }

    #[test]
    fn armijo_backtracks_on_quartic() {
        let f = Plain(quartic);
        let cfg = OptimizerConfig::default();
        let x = [10.0, 5.0];
        let (v, g) = quartic(&x);
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let ls = armijo(&f, &x, &d, v, &g, &cfg).unwrap();
        assert!(ls.step < 1.0 && ls.step > 0.0);
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        assert!(ls.value <= v + cfg.armijo_c * ls.step * slope);
    }

    #[test]
    fn armijo_rejects_ascent() {
        let f = Plain(half_norm);
        let x = [1.0, 1.0];
        let (v, g) = half_norm(&x);
        assert!(matches!(
            armijo(&f, &x, &g, v, &g, &OptimizerConfig::default()),
            Err(Error::NotDescent(_))
        ));
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = Plain(|_: &[f64]| (f64::NAN, vec![0.0]));
        assert!(matches!(
            minimize(&f, vec![0.0], &OptimizerConfig::default(), 0),
            Err(Error::NonFiniteObjective)
        ));
    }

    #[test]
    fn sorted_sum_ignores_order() {
        let a = vec![1e16, 1.0, -1e16, 3.5, 1e-3];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(sorted_sum(a), sorted_sum(b));
    }
}
