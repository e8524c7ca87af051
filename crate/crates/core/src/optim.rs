//! Unconstrained first-order minimizers: limited-memory BFGS with Armijo
//! backtracking, and fixed-step gradient descent.
//!
//! Every accepted step strictly decreases the objective (L-BFGS) or is only
//! taken when it does not increase it (gradient descent), so the recorded
//! history is non-increasing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Optimizer {
    /// Quasi-Newton with `memory` secant pairs and backtracking line search.
    Lbfgs { memory: usize },
    /// Fixed step; a step that would increase the objective ends the stage.
    GradientDescent { step: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Lbfgs { memory: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    /// No descent step could be found along the search direction or the
    /// negative gradient.
    Stalled,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after each accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

/// Failure raised by the objective callback, tagged with the iteration it
/// occurred in.
#[derive(Debug)]
pub struct Failure<E> {
    pub iteration: usize,
    pub error: E,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl Memory {
    fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        // Curvature condition; skipping keeps the implicit Hessian positive definite.
        if !(sy > 1e-12 * norm(&s) * norm(&y)) {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient; an `Err`
/// aborts the run. A non-finite value at a trial point is treated as a
/// failed trial, while a non-finite value at `x0` is reported through
/// `non_finite`.
pub fn minimize<E, F, N>(
    mut f: F,
    x0: Vec<f64>,
    optimizer: Optimizer,
    grad_tol: f64,
    max_iters: usize,
    non_finite: N,
) -> Result<Outcome, Failure<E>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    N: Fn(f64) -> E,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x).map_err(|error| Failure { iteration: 0, error })?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Failure {
            iteration: 0,
            error: non_finite(fx),
        });
    }
    let mut history = vec![fx];
    let mut memory = match optimizer {
        Optimizer::Lbfgs { memory } => Memory::new(memory.max(1)),
        Optimizer::GradientDescent { .. } => Memory::new(1),
    };

    for iter in 0..max_iters {
        if norm(&g) <= grad_tol {
            return Ok(Outcome {
                x,
                value: fx,
                iterations: iter,
                termination: Termination::GradientTolerance,
                history,
            });
        }
        let tag = |error| Failure {
            iteration: iter + 1,
            error,
        };

        let accepted = match optimizer {
            Optimizer::GradientDescent { step } => {
                let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
                let (ft, gt) = f(&trial).map_err(tag)?;
                (ft.is_finite() && ft <= fx).then_some((trial, ft, gt))
            }
            Optimizer::Lbfgs { .. } => {
                let mut found = None;
                for attempt in 0..2 {
                    let use_memory = attempt == 0 && !memory.pairs.is_empty();
                    let mut d = if use_memory {
                        memory.direction(&g)
                    } else {
                        g.iter().map(|v| -v).collect()
                    };
                    let mut slope = dot(&g, &d);
                    if !(slope < 0.0) {
                        d = g.iter().map(|v| -v).collect();
                        slope = dot(&g, &d);
                    }
                    // Without curvature information, start with a unit-length step.
                    let mut t = if use_memory { 1.0 } else { 1.0f64.min(1.0 / norm(&d)) };
                    for _ in 0..MAX_BACKTRACKS {
                        let trial: Vec<f64> =
                            x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
                        let (ft, gt) = f(&trial).map_err(tag)?;
                        if ft.is_finite()
                            && gt.iter().all(|v| v.is_finite())
                            && ft <= fx + ARMIJO_C1 * t * slope
                            && ft < fx
                        {
                            found = Some((trial, ft, gt));
                            break;
                        }
                        t *= 0.5;
                    }
                    if found.is_some() {
                        break;
                    }
                    memory.pairs.clear();
                    if !use_memory {
                        break;
                    }
                }
                found
            }
        };

        match accepted {
            Some((xn, fn_, gn)) => {
                if matches!(optimizer, Optimizer::Lbfgs { .. }) {
                    let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                    memory.push(s, y);
                }
                x = xn;
                fx = fn_;
                g = gn;
                history.push(fx);
            }
            None => {
                return Ok(Outcome {
                    x,
                    value: fx,
                    iterations: iter,
                    termination: Termination::Stalled,
                    history,
                });
            }
        }
    }
    let termination = if norm(&g) <= grad_tol {
        Termination::GradientTolerance
    } else {
        Termination::IterationLimit
    };
    Ok(Outcome {
        x,
        value: fx,
        iterations: max_iters,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>), String> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    fn nf(v: f64) -> String {
        format!("non-finite {v}")
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let out = minimize(rosenbrock, vec![-1.2, 1.0], Optimizer::default(), 1e-8, 1000, nf).unwrap();
        assert_eq!(out.termination, Termination::GradientTolerance);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn lbfgs_solves_quadratic_exactly() {
        // f = ½ xᵀ diag(1, 10, 100) x − (1, 1, 1)ᵀx; minimizer (1, 0.1, 0.01).
        let d = [1.0, 10.0, 100.0];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), String> {
            let v = x.iter().zip(&d).map(|(xi, di)| 0.5 * di * xi * xi - xi).sum();
            Ok((v, x.iter().zip(&d).map(|(xi, di)| di * xi - 1.0).collect()))
        };
        let out = minimize(f, vec![0.0; 3], Optimizer::default(), 1e-10, 200, nf).unwrap();
        for (xi, expect) in out.x.iter().zip([1.0, 0.1, 0.01]) {
            assert!((xi - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn kink_ends_in_stall_with_monotone_history() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), String> { Ok((x[0].abs(), vec![x[0].signum()])) };
        let out = minimize(f, vec![0.3], Optimizer::default(), 1e-12, 500, nf).unwrap();
        assert_ne!(out.termination, Termination::GradientTolerance);
        assert!(out.value < 1e-6);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gradient_descent_fallback() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), String> { Ok(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])) };
        let out = minimize(f, vec![0.0], Optimizer::GradientDescent { step: 0.25 }, 1e-9, 1000, nf).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_start_is_reported() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>), String> { Ok((f64::NAN, vec![0.0])) };
        let err = minimize(f, vec![0.0], Optimizer::default(), 1e-6, 10, nf).unwrap_err();
        assert_eq!(err.iteration, 0);
        assert!(err.error.contains("non-finite"));
    }

    #[test]
    fn callback_errors_carry_iteration() {
        let mut calls = 0;
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), String> {
            calls += 1;
            if calls > 1 {
                return Err("boom".into());
            }
            Ok(((x[0] - 5.0).powi(2), vec![2.0 * (x[0] - 5.0)]))
        };
        let err = minimize(f, vec![0.0], Optimizer::default(), 1e-9, 100, nf).unwrap_err();
        assert!(err.iteration >= 1);
        assert_eq!(err.error, "boom");
    }
}
