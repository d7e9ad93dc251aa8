//! Linear classifiers on sparse features: multinomial Naive Bayes,
//! L2-regularized hinge (linear SVM) and logistic regression trainers, a
//! majority-class baseline, and a majority-vote ensemble.
//!
//! The convex trainers minimize
//! `0.5 ||w||^2 + C * sum_i loss(y_i, w.x_i + b)` with an unregularized
//! bias; `C` defaults to 1.0 and Naive Bayes smoothing to 1.0.

mod logistic;
mod naive_bayes;
mod svm;

pub use logistic::train_logistic;
pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};
pub use svm::train_hinge;

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

use crate::container::Container;
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, SparseVector};
use crate::tensor::Tensor;

/// Label plus the real-valued score backing it (margin, log-odds, or
/// vote fraction); scores feed AUC computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Logistic,
}

/// Weight vector, unregularized bias, and the training hyperparameters.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss: LossKind,
    pub c: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &SparseVector) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }

    /// Raw margin as score; label is positive iff the margin is
    /// strictly positive.
    pub fn predict(&self, x: &SparseVector) -> Result<Prediction> {
        if x.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "input of dim {} against model of {}",
                x.dim(),
                self.dim()
            )));
        }
        let score = self.decision(x);
        Ok(Prediction {
            label: score > 0.0,
            score,
        })
    }
}

/// Convex trainer settings. `tol` is the KKT violating-pair gap for hinge
/// and the relative gradient infinity-norm for logistic; `max_epochs` is
/// sweeps (hinge) or L-BFGS iterations (logistic).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainLinearConfig {
    pub c: f64,
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for TrainLinearConfig {
    fn default() -> Self {
        TrainLinearConfig {
            c: 1.0,
            tol: 1e-8,
            max_epochs: 1000,
        }
    }
}

/// Trainer result: the model, whether the tolerance was met, the achieved
/// optimality gap, and the per-epoch objective of the retained parameters
/// (non-increasing).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub converged: bool,
    pub achieved_gap: f64,
    pub objective_history: Vec<f64>,
}

/// Train a linear model with the requested loss on +1/-1 labels.
pub fn train_linear(
    x: &[SparseVector],
    y: &[f64],
    loss: LossKind,
    config: &TrainLinearConfig,
) -> Result<TrainOutcome> {
    match loss {
        LossKind::Hinge => train_hinge(x, y, config),
        LossKind::Logistic => train_logistic(x, y, config),
    }
}

/// Regularized primal objective of a linear model on a dataset.
pub fn linear_objective(model: &LinearModel, x: &[SparseVector], y: &[f64]) -> f64 {
    let reg: f64 = 0.5 * model.weights.iter().map(|&w| w * w).sum::<f64>();
    let loss_sum: f64 = x
        .iter()
        .zip(y)
        .map(|(v, &yi)| {
            let t = yi * model.decision(v);
            match model.loss {
                LossKind::Hinge => (1.0 - t).max(0.0),
                LossKind::Logistic => {
                    if t >= 0.0 {
                        (-t).exp().ln_1p()
                    } else {
                        -t + t.exp().ln_1p()
                    }
                }
            }
        })
        .sum();
    reg + model.c * loss_sum
}

/// Constant predictor emitting the training majority class.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MajorityModel {
    pub positive: bool,
}

impl MajorityModel {
    /// Majority label of a labeled dataset (ties go positive).
    pub fn fit(labels: &[bool]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Usage("majority fit on empty labels".into()));
        }
        let pos = labels.iter().filter(|&&l| l).count();
        Ok(MajorityModel {
            positive: 2 * pos >= labels.len(),
        })
    }

    pub fn predict(&self) -> Prediction {
        // Constant score: every pair ties, so AUC comes out at 0.5.
        Prediction {
            label: self.positive,
            score: 0.0,
        }
    }
}

/// Most frequent label; exact ties resolve to the first prediction in
/// member order.
pub fn majority_vote(predictions: &[bool]) -> Result<bool> {
    if predictions.is_empty() {
        return Err(Error::Usage("majority_vote of zero predictions".into()));
    }
    let yes = predictions.iter().filter(|&&p| p).count();
    let no = predictions.len() - yes;
    if yes == no {
        Ok(predictions[0])
    } else {
        Ok(yes > no)
    }
}

/// Any trainable sparse-feature classifier, including an ensemble of the
/// other kinds.
#[derive(Clone, Debug)]
pub enum SparseClassifier {
    NaiveBayes(NaiveBayesModel),
    Linear(LinearModel),
    Majority(MajorityModel),
    /// Ordered members; the vote-fraction of positive labels is the score.
    Ensemble(Vec<SparseClassifier>),
}

impl SparseClassifier {
    pub fn kind(&self) -> &'static str {
        match self {
            SparseClassifier::NaiveBayes(_) => "naive_bayes",
            SparseClassifier::Linear(m) => match m.loss {
                LossKind::Hinge => "svm",
                LossKind::Logistic => "logreg",
            },
            SparseClassifier::Majority(_) => "majority",
            SparseClassifier::Ensemble(_) => "ensemble",
        }
    }

    pub fn predict(&self, x: &SparseVector) -> Result<Prediction> {
        match self {
            SparseClassifier::NaiveBayes(m) => m.predict(x),
            SparseClassifier::Linear(m) => m.predict(x),
            SparseClassifier::Majority(m) => Ok(m.predict()),
            SparseClassifier::Ensemble(members) => {
                if members.is_empty() {
                    return Err(Error::Usage("ensemble with no members".into()));
                }
                let labels = members
                    .iter()
                    .map(|m| m.predict(x).map(|p| p.label))
                    .collect::<Result<Vec<bool>>>()?;
                let label = majority_vote(&labels)?;
                let score = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
                Ok(Prediction { label, score })
            }
        }
    }
}

/// A trained linear classifier bundled with everything inference needs:
/// the feature pipeline and the task it was trained for.
#[derive(Clone, Debug)]
pub struct LinearBundle {
    pub task: Task,
    pub features: FeaturePipeline,
    pub classifier: SparseClassifier,
}

impl LinearBundle {
    pub fn predict_text(&self, text: &str) -> Result<Prediction> {
        let v = self.features.transform_one(text)?;
        self.classifier.predict(&v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    fn to_container(&self) -> Result<Container> {
        let features = serde_json::to_value(&self.features)
            .map_err(|e| Error::Data(format!("unencodable feature pipeline: {e}")))?;
        let mut container = Container::new(
            "linear-bundle",
            json!({
                "task": self.task.name(),
                "vocab_hash": self.features.vocab.content_hash(),
                "features": features,
            }),
        );
        container.push_bytes("classifier", encode_classifier(&self.classifier)?);
        Ok(container)
    }

    fn from_container(container: &Container) -> Result<Self> {
        if container.kind != "linear-bundle" {
            return Err(Error::Data(format!(
                "expected a linear-bundle model file, found `{}`",
                container.kind
            )));
        }
        let task: Task = container.meta["task"]
            .as_str()
            .ok_or_else(|| Error::Data("model file lacks task".into()))?
            .parse()?;
        let features: FeaturePipeline =
            serde_json::from_value(container.meta["features"].clone())
                .map_err(|e| Error::Data(format!("bad feature pipeline in model file: {e}")))?;
        let stored_hash = container.meta["vocab_hash"].as_str().unwrap_or_default();
        if stored_hash != features.vocab.content_hash() {
            return Err(Error::Data(
                "vocabulary hash mismatch in model file".into(),
            ));
        }
        let classifier = decode_classifier(container.byte_blob("classifier")?)?;
        Ok(LinearBundle {
            task,
            features,
            classifier,
        })
    }
}

fn encode_classifier(classifier: &SparseClassifier) -> Result<Vec<u8>> {
    let container = match classifier {
        SparseClassifier::NaiveBayes(m) => {
            let mut c = Container::new(
                "naive_bayes",
                json!({
                    "alpha": m.alpha,
                    "log_prior_pos": m.log_prior_pos,
                    "log_prior_neg": m.log_prior_neg,
                }),
            );
            c.push_tensor("log_likelihood_pos", Tensor::vector(m.log_likelihood_pos.clone()));
            c.push_tensor("log_likelihood_neg", Tensor::vector(m.log_likelihood_neg.clone()));
            c
        }
        SparseClassifier::Linear(m) => {
            let mut c = Container::new(
                "linear",
                json!({
                    "loss": match m.loss { LossKind::Hinge => "hinge", LossKind::Logistic => "logistic" },
                    "c": m.c,
                    "bias": m.bias,
                }),
            );
            c.push_tensor("weights", Tensor::vector(m.weights.clone()));
            c
        }
        SparseClassifier::Majority(m) => {
            Container::new("majority", json!({ "positive": m.positive }))
        }
        SparseClassifier::Ensemble(members) => {
            let mut c = Container::new("ensemble", json!({ "members": members.len() }));
            for (i, member) in members.iter().enumerate() {
                c.push_bytes(&format!("member_{i}"), encode_classifier(member)?);
            }
            c
        }
    };
    container.to_bytes()
}

fn decode_classifier(bytes: &[u8]) -> Result<SparseClassifier> {
    let c = Container::from_bytes(bytes)?;
    let meta_f64 = |key: &str| -> Result<f64> {
        c.meta[key]
            .as_f64()
            .ok_or_else(|| Error::Data(format!("model file lacks `{key}`")))
    };
    match c.kind.as_str() {
        "naive_bayes" => Ok(SparseClassifier::NaiveBayes(NaiveBayesModel {
            alpha: meta_f64("alpha")?,
            log_prior_pos: meta_f64("log_prior_pos")?,
            log_prior_neg: meta_f64("log_prior_neg")?,
            log_likelihood_pos: c.tensor("log_likelihood_pos")?.as_slice().to_vec(),
            log_likelihood_neg: c.tensor("log_likelihood_neg")?.as_slice().to_vec(),
        })),
        "linear" => Ok(SparseClassifier::Linear(LinearModel {
            weights: c.tensor("weights")?.as_slice().to_vec(),
            bias: meta_f64("bias")?,
            loss: match c.meta["loss"].as_str() {
                Some("hinge") => LossKind::Hinge,
                Some("logistic") => LossKind::Logistic,
                other => {
                    return Err(Error::Data(format!("unknown loss kind {other:?}")));
                }
            },
            c: meta_f64("c")?,
        })),
        "majority" => Ok(SparseClassifier::Majority(MajorityModel {
            positive: c.meta["positive"].as_bool().unwrap_or(true),
        })),
        "ensemble" => {
            let count = c.meta["members"].as_u64().unwrap_or(0) as usize;
            let members = (0..count)
                .map(|i| decode_classifier(c.byte_blob(&format!("member_{i}"))?))
                .collect::<Result<Vec<_>>>()?;
            Ok(SparseClassifier::Ensemble(members))
        }
        other => Err(Error::Data(format!("unknown classifier kind `{other}`"))),
    }
}

/// +1/-1 view of boolean labels for the convex trainers.
pub fn signed_labels(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect()
}
