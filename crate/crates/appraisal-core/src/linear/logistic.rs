//! L2-regularized logistic regression trainer.
//!
//! Minimizes `0.5 ||w||^2 + C * sum_i log(1 + exp(-y_i (w.x_i + b)))`
//! (bias unregularized) with L-BFGS and Armijo backtracking. The line
//! search only accepts decreasing steps, so the per-iteration objective
//! history is monotone.

use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::linear::{LinearModel, LossKind, TrainLinearConfig, TrainOutcome};

const HISTORY: usize = 8;

/// ln(1 + exp(-t)) without overflow for large |t|.
fn log1p_exp_neg(t: f64) -> f64 {
    if t >= 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// sigma(-t) = 1 / (1 + exp(t)), computed stably.
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

struct Problem<'a> {
    x: &'a [SparseVector],
    y: &'a [f64],
    c: f64,
    dim: usize,
}

impl Problem<'_> {
    /// Objective and gradient over theta = [w..., b].
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = theta.split_at(self.dim);
        let b = b[0];
        let mut objective = 0.5 * w.iter().map(|&v| v * v).sum::<f64>();
        let mut grad = vec![0.0; self.dim + 1];
        grad[..self.dim].copy_from_slice(w);
        for (v, &yi) in self.x.iter().zip(self.y) {
            let t = yi * (v.dot_dense(w) + b);
            objective += self.c * log1p_exp_neg(t);
            let coeff = -self.c * yi * sigmoid_neg(t);
            for &(f, value) in v.entries() {
                grad[f as usize] += coeff * value;
            }
            grad[self.dim] += coeff;
        }
        (objective, grad)
    }
}

pub fn train_logistic(
    x: &[SparseVector],
    y: &[f64],
    config: &TrainLinearConfig,
) -> Result<TrainOutcome> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Usage(format!(
            "{} feature vectors against {} labels",
            n,
            y.len()
        )));
    }
    if y.iter().any(|&l| l != 1.0 && l != -1.0) {
        return Err(Error::Data("labels must be +1/-1".into()));
    }
    let n_pos = y.iter().filter(|&&l| l > 0.0).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::Train(
            "logistic trainer needs both classes in the training set".into(),
        ));
    }
    if config.c <= 0.0 {
        return Err(Error::Config(format!("C = {} must be > 0", config.c)));
    }
    let dim = x[0].dim();
    if x.iter().any(|v| v.dim() != dim) {
        return Err(Error::Shape("inconsistent feature dimensions".into()));
    }

    let problem = Problem {
        x,
        y,
        c: config.c,
        dim,
    };
    let mut theta = vec![0.0f64; dim + 1];
    let (mut objective, mut grad) = problem.eval(&theta);
    let mut history = vec![objective];

    let mut s_list: Vec<Vec<f64>> = Vec::new();
    let mut y_list: Vec<Vec<f64>> = Vec::new();
    let mut rho_list: Vec<f64> = Vec::new();

    let mut converged = false;
    let mut achieved_gap = inf_norm(&grad);

    for _ in 0..config.max_epochs.max(1) {
        achieved_gap = inf_norm(&grad);
        if achieved_gap <= config.tol * objective.abs().max(1.0) {
            converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        let mut direction: Vec<f64> = grad.iter().map(|&g| -g).collect();
        let mut alphas = vec![0.0; s_list.len()];
        for k in (0..s_list.len()).rev() {
            let a = rho_list[k] * dot(&s_list[k], &direction);
            alphas[k] = a;
            axpy(&mut direction, -a, &y_list[k]);
        }
        if let (Some(s), Some(yv)) = (s_list.last(), y_list.last()) {
            let gamma = dot(s, yv) / dot(yv, yv).max(f64::MIN_POSITIVE);
            for d in &mut direction {
                *d *= gamma;
            }
        }
        for k in 0..s_list.len() {
            let beta = rho_list[k] * dot(&y_list[k], &direction);
            axpy(&mut direction, alphas[k] - beta, &s_list[k]);
        }
        let mut descent = dot(&grad, &direction);
        if descent >= 0.0 {
            direction = grad.iter().map(|&g| -g).collect();
            descent = dot(&grad, &direction);
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(&t, &d)| t + step * d)
                .collect();
            let (obj_new, grad_new) = problem.eval(&candidate);
            if obj_new.is_finite() && obj_new <= objective + 1e-4 * step * descent {
                accepted = Some((candidate, obj_new, grad_new));
                break;
            }
            step *= 0.5;
        }
        let Some((theta_new, obj_new, grad_new)) = accepted else {
            // Step size underflow: no further float-representable progress.
            break;
        };

        let s: Vec<f64> = theta_new
            .iter()
            .zip(&theta)
            .map(|(&a, &b)| a - b)
            .collect();
        let yv: Vec<f64> = grad_new.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if s_list.len() == HISTORY {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
            rho_list.push(1.0 / sy);
            s_list.push(s);
            y_list.push(yv);
        }

        theta = theta_new;
        objective = obj_new;
        grad = grad_new;
        history.push(objective);
    }

    if !converged {
        log::warn!(
            "logistic trainer stopped before tolerance: |grad| {achieved_gap:.3e} > {:.3e}",
            config.tol
        );
    }

    let bias = theta[dim];
    theta.truncate(dim);
    Ok(TrainOutcome {
        model: LinearModel {
            weights: theta,
            bias,
            loss: LossKind::Logistic,
            c: config.c,
        },
        converged,
        achieved_gap,
        objective_history: history,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, &v| m.max(v.abs()))
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}
