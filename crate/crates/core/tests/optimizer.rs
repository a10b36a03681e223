//! Descent drivers on closed-form problems.

use sqn_core::optimize::{armijo, minimize, Evaluation, Objective, OptimizerConfig};
use sqn_core::{Error, Result};

struct Quadratic {
    a: Vec<[f64; 5]>,
    b: [f64; 5],
}

impl Quadratic {
    fn new() -> Self {
        // diagonally dominant, condition number around 10
        let mut a = vec![[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                a[i][j] = if i == j {
                    2.0 + 4.0 * i as f64
                } else {
                    0.3 / (1.0 + (i + j) as f64)
                };
            }
        }
        Self {
            a,
            b: [1.0, -2.0, 0.5, 3.0, -1.0],
        }
    }

    fn solution(&self) -> Vec<f64> {
        // Gaussian elimination on a copy
        let mut m: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let mut row = self.a[i].to_vec();
                row.push(self.b[i]);
                row
            })
            .collect();
        for c in 0..5 {
            for r in c + 1..5 {
                let f = m[r][c] / m[c][c];
                for k in c..6 {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; 5];
        for r in (0..5).rev() {
            let s: f64 = (r + 1..5).map(|k| m[r][k] * x[k]).sum();
            x[r] = (m[r][5] - s) / m[r][r];
        }
        x
    }
}

impl Objective for Quadratic {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let ax: Vec<f64> = self
            .a
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, v)| a * v).sum())
            .collect();
        let value = 0.5 * ax.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            - self.b.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        let gradient = ax.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        Ok(Evaluation {
            value,
            gradient,
            hessian: None,
        })
    }
}

struct Rosenbrock;

impl Objective for Rosenbrock {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let (a, b) = (x[0], x[1]);
        let value = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let gradient = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok(Evaluation {
            value,
            gradient,
            hessian: None,
        })
    }
}

#[test]
fn lbfgs_solves_a_quadratic() {
    let q = Quadratic::new();
    let cfg = OptimizerConfig {
        max_iterations: 25,
        gradient_tolerance: 1e-12,
        ..OptimizerConfig::default()
    };
    let out = minimize(&q, vec![0.0; 5], &cfg, 0).unwrap();
    let want = q.solution();
    for (x, w) in out.x.iter().zip(&want) {
        assert!((x - w).abs() < 1e-8, "{x} vs {w}");
    }
    assert!(out.trace.windows(2).all(|w| w[1].value <= w[0].value));
    assert!(out.trace.iter().all(|e| e.armijo_slack >= 0.0));
}

#[test]
fn lbfgs_solves_rosenbrock() {
    let cfg = OptimizerConfig {
        max_iterations: 200,
        gradient_tolerance: 1e-12,
        ..OptimizerConfig::default()
    };
    let out = minimize(&Rosenbrock, vec![-1.2, 1.0], &cfg, 0).unwrap();
    assert!(out.value < 1e-6, "f = {}", out.value);
}

#[test]
fn gauss_newton_direction_solves_a_quadratic_in_one_step() {
    struct WithModel(Quadratic);
    impl Objective for WithModel {
        fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
            let mut e = self.0.evaluate(x)?;
            let a = self.0.a.clone();
            e.hessian = Some(Box::new(move |v: &[f64]| {
                a.iter()
                    .map(|row| row.iter().zip(v).map(|(p, q)| p * q).sum())
                    .collect()
            }));
            Ok(e)
        }
    }
    let q = Quadratic::new();
    let want = q.solution();
    let cfg = OptimizerConfig {
        max_iterations: 1,
        cg_tolerance: 1e-14,
        gradient_tolerance: 1e-14,
        ..OptimizerConfig::default()
    };
    let out = minimize(&WithModel(q), vec![0.0; 5], &cfg, 0).unwrap();
    for (x, w) in out.x.iter().zip(&want) {
        assert!((x - w).abs() < 1e-10);
    }
}

#[test]
fn armijo_rejects_ascent_directions() {
    let q = Quadratic::new();
    let x = vec![0.0; 5];
    let e = q.evaluate(&x).unwrap();
    let uphill = e.gradient.clone();
    let cfg = OptimizerConfig::default();
    assert!(matches!(
        armijo(&q, &x, &uphill, e.value, &e.gradient, &cfg),
        Err(Error::NotDescent(_))
    ));
    let downhill: Vec<f64> = e.gradient.iter().map(|g| -g).collect();
    let ls = armijo(&q, &x, &downhill, e.value, &e.gradient, &cfg).unwrap();
    assert!(!ls.stalled && ls.slack >= 0.0 && ls.value < e.value);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        OptimizerConfig {
            max_iterations: 0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            armijo_c: 1.0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            levels: 0,
            ..OptimizerConfig::default()
        },
        OptimizerConfig {
            max_step: Some(-1.0),
            ..OptimizerConfig::default()
        },
    ];
    for cfg in bad {
        assert!(minimize(&Rosenbrock, vec![0.0, 0.0], &cfg, 0).is_err());
    }
}
