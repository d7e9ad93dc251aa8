//! Multinomial Naive Bayes with Laplace-style smoothing.
//!
//! Works on raw counts or on fractional values (tf-idf); the generative
//! story only needs non-negative feature mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::linear::Prediction;

/// Per-class log-priors and per-feature log-likelihoods.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    pub log_prior_pos: f64,
    pub log_prior_neg: f64,
    pub log_likelihood_pos: Vec<f64>,
    pub log_likelihood_neg: Vec<f64>,
}

impl NaiveBayesModel {
    pub fn dim(&self) -> usize {
        self.log_likelihood_pos.len()
    }

    /// Posterior log-odds of the positive class; label is positive iff
    /// the positive posterior strictly exceeds the negative one.
    pub fn predict(&self, x: &SparseVector) -> Result<Prediction> {
        if x.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "input of dim {} against model of {}",
                x.dim(),
                self.dim()
            )));
        }
        let mut pos = self.log_prior_pos;
        let mut neg = self.log_prior_neg;
        for &(i, v) in x.entries() {
            pos += v * self.log_likelihood_pos[i as usize];
            neg += v * self.log_likelihood_neg[i as usize];
        }
        let score = pos - neg;
        Ok(Prediction {
            label: score > 0.0,
            score,
        })
    }
}

/// Fit class priors and smoothed per-class feature distributions.
///
/// log-prior = ln(count_c / N); log-likelihood(t|c) =
/// ln((mass(t,c) + alpha) / (mass(c) + alpha * V)).
pub fn train_naive_bayes(
    x: &[SparseVector],
    y: &[bool],
    alpha: f64,
) -> Result<NaiveBayesModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Usage(format!(
            "{} feature vectors against {} labels",
            x.len(),
            y.len()
        )));
    }
    if alpha <= 0.0 {
        return Err(Error::Config(format!("smoothing alpha {alpha} must be > 0")));
    }
    let dim = x[0].dim();
    let n_pos = y.iter().filter(|&&l| l).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Train(
            "naive bayes needs both classes in the training set".into(),
        ));
    }

    let mut mass = [vec![0.0f64; dim], vec![0.0f64; dim]];
    for (v, &label) in x.iter().zip(y) {
        if v.dim() != dim {
            return Err(Error::Shape("inconsistent feature dimensions".into()));
        }
        let class = usize::from(label);
        for &(i, value) in v.entries() {
            if value < 0.0 {
                return Err(Error::Data(format!(
                    "negative feature value {value} at index {i}"
                )));
            }
            mass[class][i as usize] += value;
        }
    }

    let v_count = dim as f64;
    let log_lik = |class: usize| -> Vec<f64> {
        let total: f64 = mass[class].iter().sum();
        let denom = total + alpha * v_count;
        mass[class]
            .iter()
            .map(|&m| ((m + alpha) / denom).ln())
            .collect()
    };

    Ok(NaiveBayesModel {
        alpha,
        log_prior_pos: (n_pos as f64 / y.len() as f64).ln(),
        log_prior_neg: (n_neg as f64 / y.len() as f64).ln(),
        log_likelihood_pos: log_lik(1),
        log_likelihood_neg: log_lik(0),
    })
}
