//! L2-regularized hinge-loss trainer.
//!
//! Minimizes `0.5 ||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))` via
//! deterministic SMO on the dual: each step picks the maximal violating
//! pair, solves the two-variable subproblem analytically, and maintains
//! `w` and all margins incrementally through an inverted feature index.
//! The bias is not regularized; it is recovered as the exact minimizer of
//! the hinge sum given `w` (a 1-D breakpoint scan). After every sweep the
//! primal objective is evaluated and the best-so-far parameters are kept,
//! so the reported objective history is non-increasing by construction.

use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::linear::{LinearModel, LossKind, TrainLinearConfig, TrainOutcome};

/// Exact minimizer of `sum_i max(0, 1 - y_i (m_i + b))` over `b`,
/// midpoint of the optimal interval. Requires both classes present.
pub(crate) fn optimal_hinge_bias(margins: &[f64], y: &[f64]) -> f64 {
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    let mut breakpoints: Vec<f64> = margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| if yi > 0.0 { 1.0 - m } else { -1.0 - m })
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    // Slope after passing k breakpoints is C*(k - n_pos); it crosses zero
    // between the n_pos-th and (n_pos+1)-th breakpoint.
    0.5 * (breakpoints[n_pos - 1] + breakpoints[n_pos])
}

pub(crate) fn hinge_objective(
    weights: &[f64],
    bias: f64,
    margins: &[f64],
    y: &[f64],
    c: f64,
) -> f64 {
    let reg: f64 = 0.5 * weights.iter().map(|&w| w * w).sum::<f64>();
    let loss: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| (1.0 - yi * (m + bias)).max(0.0))
        .sum();
    reg + c * loss
}

fn sparse_dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (ae, be) = (a.entries(), b.entries());
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < ae.len() && j < be.len() {
        match ae[i].0.cmp(&be[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += ae[i].1 * be[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

pub fn train_hinge(
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
            "hinge trainer needs both classes in the training set".into(),
        ));
    }
    let c = config.c;
    if c <= 0.0 {
        return Err(Error::Config(format!("C = {c} must be > 0")));
    }
    let dim = x[0].dim();
    if x.iter().any(|v| v.dim() != dim) {
        return Err(Error::Shape("inconsistent feature dimensions".into()));
    }

    // Inverted index: feature -> (document, value).
    let mut index: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
    for (doc, v) in x.iter().enumerate() {
        for &(f, value) in v.entries() {
            index[f as usize].push((doc as u32, value));
        }
    }
    let norms_sq: Vec<f64> = x.iter().map(|v| sparse_dot(v, v)).collect();

    let mut alpha = vec![0.0f64; n];
    let mut weights = vec![0.0f64; dim];
    let mut margins = vec![0.0f64; n];

    let mut best_weights = weights.clone();
    let mut best_bias = optimal_hinge_bias(&margins, y);
    let mut best_objective = hinge_objective(&weights, best_bias, &margins, y, c);
    let mut history = vec![best_objective];

    let mut converged = false;
    let mut achieved_gap = f64::INFINITY;
    let sweeps = config.max_epochs.max(1);

    'outer: for sweep in 0..sweeps {
        for _ in 0..n {
            // Maximal violating pair over the dual KKT conditions.
            let mut m_up = f64::NEG_INFINITY;
            let mut m_low = f64::INFINITY;
            let mut i_sel = usize::MAX;
            let mut j_sel = usize::MAX;
            for k in 0..n {
                let g = y[k] * margins[k] - 1.0;
                let v = -y[k] * g;
                let positive = y[k] > 0.0;
                let in_up = (positive && alpha[k] < c) || (!positive && alpha[k] > 0.0);
                let in_low = (positive && alpha[k] > 0.0) || (!positive && alpha[k] < c);
                if in_up && v > m_up {
                    m_up = v;
                    i_sel = k;
                }
                if in_low && v < m_low {
                    m_low = v;
                    j_sel = k;
                }
            }
            achieved_gap = m_up - m_low;
            if achieved_gap <= config.tol || i_sel == usize::MAX || j_sel == usize::MAX {
                converged = achieved_gap <= config.tol;
                break 'outer;
            }
            let (i, j) = (i_sel, j_sel);

            // Two-variable subproblem along alpha_i += y_i*d, alpha_j -= y_j*d.
            let slope = (y[i] * margins[i] - 1.0) * y[i] - (y[j] * margins[j] - 1.0) * y[j];
            let eta = norms_sq[i] + norms_sq[j] - 2.0 * sparse_dot(&x[i], &x[j]);
            let (lo_i, hi_i) = if y[i] > 0.0 {
                (-alpha[i], c - alpha[i])
            } else {
                (alpha[i] - c, alpha[i])
            };
            let (lo_j, hi_j) = if y[j] > 0.0 {
                (alpha[j] - c, alpha[j])
            } else {
                (-alpha[j], c - alpha[j])
            };
            let lo = lo_i.max(lo_j);
            let hi = hi_i.min(hi_j);
            let step = if eta > 0.0 {
                (-slope / eta).clamp(lo, hi)
            } else if slope < 0.0 {
                hi
            } else {
                lo
            };
            if step == 0.0 {
                // Numerically stuck pair; nothing can improve further.
                converged = false;
                break 'outer;
            }

            alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, c);
            alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, c);

            // w += step * (x_i - x_j), margins follow via the index.
            for &(f, value) in x[i].entries() {
                let dw = step * value;
                weights[f as usize] += dw;
                for &(doc, xv) in &index[f as usize] {
                    margins[doc as usize] += dw * xv;
                }
            }
            for &(f, value) in x[j].entries() {
                let dw = -step * value;
                weights[f as usize] += dw;
                for &(doc, xv) in &index[f as usize] {
                    margins[doc as usize] += dw * xv;
                }
            }
        }

        // Periodically recompute margins exactly to cancel incremental drift.
        if sweep % 16 == 15 {
            for (m, v) in margins.iter_mut().zip(x) {
                *m = v.dot_dense(&weights);
            }
        }

        let bias = optimal_hinge_bias(&margins, y);
        let objective = hinge_objective(&weights, bias, &margins, y, c);
        if objective < best_objective {
            best_objective = objective;
            best_weights.copy_from_slice(&weights);
            best_bias = bias;
        }
        history.push(best_objective);
    }

    // Final exact evaluation of the last iterate.
    for (m, v) in margins.iter_mut().zip(x) {
        *m = v.dot_dense(&weights);
    }
    let bias = optimal_hinge_bias(&margins, y);
    let objective = hinge_objective(&weights, bias, &margins, y, c);
    if objective < best_objective {
        best_objective = objective;
        best_weights = weights;
        best_bias = bias;
    }
    history.push(best_objective);

    if !converged {
        log::warn!(
            "hinge trainer stopped before tolerance: violating-pair gap {achieved_gap:.3e} > {:.3e}",
            config.tol
        );
    }

    Ok(TrainOutcome {
        model: LinearModel {
            weights: best_weights,
            bias: best_bias,
            loss: LossKind::Hinge,
            c,
        },
        converged,
        achieved_gap,
        objective_history: history,
    })
}
