//! BFGS ascent with a backtracking Armijo line search.
//!
//! Objectives here are small (tens of coordinates) and smooth, so a dense
//! inverse-Hessian approximation is used. Trial points where the objective
//! cannot be evaluated count as rejected steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{EtprError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    /// Converged when the max-abs gradient falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Largest allowed max-abs step in a single line search.
    pub max_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            grad_tol: 1e-5,
            max_iter: 500,
            max_step: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// (iteration, objective) at every accepted iterate, starting with the initial point.
    pub trace: Vec<(usize, f64)>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Maximizes `f`, which returns the objective and its gradient.
pub fn maximize<F>(mut f: F, theta0: DVector<f64>, opts: &OptimOptions) -> Result<OptimOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = theta0.len();
    let mut eval = |t: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        match f(t) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Some((v, g)),
            _ => None,
        }
    };
    let (mut value, mut grad) = eval(&theta0).ok_or_else(|| {
        EtprError::OptimizationFailed("objective is not finite at the starting point".into())
    })?;
    let mut theta = theta0;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![(0, value)];
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if grad.amax() < opts.grad_tol {
            break;
        }
        // ascent direction
        let mut dir = &h_inv * &grad;
        if dir.dot(&grad) <= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            dir = grad.clone();
        }
        let longest = dir.amax();
        let mut step = if longest > opts.max_step { opts.max_step / longest } else { 1.0 };
        let slope = dir.dot(&grad);

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &theta + &dir * step;
            if let Some((v, g)) = eval(&trial) {
                if v >= value + ARMIJO_C1 * step * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((new_theta, new_value, new_grad)) = accepted else {
            if fresh {
                break;
            }
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };

        iterations += 1;
        let s = &new_theta - &theta;
        // gradient of the minimized function −f changes by −(g_new − g_old)
        let yv = &grad - &new_grad;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                let scale = sy / yv.norm_squared();
                h_inv = DMatrix::identity(n, n) * scale;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh = false;
        }
        let improvement = new_value - value;
        theta = new_theta;
        value = new_value;
        grad = new_grad;
        trace.push((iterations, value));
        if improvement.abs() <= 1e-15 * value.abs().max(1.0) && grad.amax() < 1e3 * opts.grad_tol {
            break;
        }
    }

    let grad_norm = grad.amax();
    Ok(OptimOutcome {
        theta,
        value,
        grad_norm,
        iterations,
        converged: grad_norm < opts.grad_tol,
        trace,
    })
}
