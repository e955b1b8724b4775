//! Limited-memory BFGS with a backtracking Armijo line search.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub memory: usize,
    /// Converged when the gradient infinity norm drops below this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iterations: 500, memory: 10, gradient_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("objective is not finite at iteration {iteration}")]
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start point and at every accepted iterate.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the objective and its gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, config: &LbfgsConfig) -> Result<Minimum, OptimError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFinite { iteration: 0 });
    }
    let mut history = alloc::vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if inf_norm(&g) < config.gradient_tolerance {
            return Ok(Minimum { x, value: fx, history, iterations, converged: true });
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // Not a descent direction; restart from steepest descent.
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut step = if pairs.is_empty() { 1.0 / inf_norm(&g).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + ARMIJO_C1 * step * slope {
                if gn.iter().any(|v| !v.is_finite()) {
                    return Err(OptimError::NonFinite { iteration: iterations + 1 });
                }
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No progress possible at machine precision.
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) {
            if pairs.len() == config.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let stalled = fx - fn_ <= f64::EPSILON * fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        iterations += 1;
        if stalled {
            break;
        }
    }
    let converged = inf_norm(&g) < config.gradient_tolerance;
    Ok(Minimum { x, value: fx, history, iterations, converged })
}
