//! LSTM / BiLSTM classifiers with optional additive self-attention,
//! their training loop, and the layers-by-hidden grid search.

mod lstm;
mod train;

pub use lstm::{AttentionParams, GateParams, HeadParams, LstmCellParams, LstmLayerParams, NeuralParams};
pub use train::{grid_search, train, Adam, EpochReport, GridResult, GridRow};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

use crate::container::Container;
use crate::corpus::{Moment, Task};
use crate::embeddings::{embed_sequence, ContextualSequenceFile, EmbeddingTable};
use crate::error::{Error, Result};
use crate::features::tokenize;
use crate::linear::Prediction;
use crate::tensor::{Tape, Tensor, ValueId};

/// The four encoder variants of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Lstm,
    BiLstm,
    LstmAttention,
    BiLstmAttention,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Lstm,
        Architecture::BiLstm,
        Architecture::LstmAttention,
        Architecture::BiLstmAttention,
    ];

    pub fn bidirectional(&self) -> bool {
        matches!(self, Architecture::BiLstm | Architecture::BiLstmAttention)
    }

    pub fn attention(&self) -> bool {
        matches!(
            self,
            Architecture::LstmAttention | Architecture::BiLstmAttention
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::BiLstm => "bilstm",
            Architecture::LstmAttention => "lstm-a",
            Architecture::BiLstmAttention => "bilstm-a",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(Architecture::Lstm),
            "bilstm" => Ok(Architecture::BiLstm),
            "lstm-a" | "lstm_a" => Ok(Architecture::LstmAttention),
            "bilstm-a" | "bilstm_a" => Ok(Architecture::BiLstmAttention),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Encoder topology and the dropout applied to the pooled vector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    pub attention: bool,
    pub dropout_p: f64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, layers: usize, hidden: usize) -> Self {
        ModelConfig {
            layers,
            hidden,
            bidirectional: architecture.bidirectional(),
            attention: architecture.attention(),
            dropout_p: 0.75,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match (self.bidirectional, self.attention) {
            (false, false) => Architecture::Lstm,
            (true, false) => Architecture::BiLstm,
            (false, true) => Architecture::LstmAttention,
            (true, true) => Architecture::BiLstmAttention,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("layers and hidden must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Optimization settings: mini-batch size, epoch count, adaptive-moment
/// learning rate, the run seed, and the sequence-length cap.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 20,
            learning_rate: 1e-3,
            seed: 42,
            max_tokens: 128,
        }
    }
}

/// Where token vectors come from. Static tables are frozen lookups;
/// contextual files carry pre-exported per-sentence matrices keyed by
/// moment id.
pub enum EmbeddingSource {
    Static { table: EmbeddingTable, id: String },
    Contextual { file: ContextualSequenceFile, id: String },
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Static { table, .. } => table.dim(),
            EmbeddingSource::Contextual { file, .. } => file.dim(),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            EmbeddingSource::Static { id, .. } => id,
            EmbeddingSource::Contextual { id, .. } => id,
        }
    }

    /// Tokens and the input matrix for one moment, truncated to
    /// `max_tokens`. Empty tokenizations are a data error for the caller
    /// to handle.
    pub fn embed(
        &self,
        moment: &Moment,
        lowercase: bool,
        max_tokens: usize,
    ) -> Result<(Vec<String>, Tensor)> {
        let mut tokens = tokenize(&moment.text, lowercase);
        if tokens.is_empty() {
            return Err(Error::Data(format!(
                "moment `{}` tokenizes to nothing",
                moment.id
            )));
        }
        match self {
            EmbeddingSource::Static { table, .. } => {
                tokens.truncate(max_tokens);
                let matrix = embed_sequence(&tokens, table);
                Ok((tokens, matrix))
            }
            EmbeddingSource::Contextual { file, .. } => {
                let stored = file.sequence(&moment.id)?;
                if stored.rows() != tokens.len() {
                    return Err(Error::Data(format!(
                        "moment `{}` has {} tokens but the contextual file stores {} rows",
                        moment.id,
                        tokens.len(),
                        stored.rows()
                    )));
                }
                tokens.truncate(max_tokens);
                let matrix = if stored.rows() > max_tokens {
                    let cols = stored.cols();
                    let data = stored.as_slice()[..max_tokens * cols].to_vec();
                    Tensor::matrix(max_tokens, cols, data)?
                } else {
                    stored.clone()
                };
                Ok((tokens, matrix))
            }
        }
    }
}

/// A trained classifier plus the preprocessing metadata inference needs.
#[derive(Clone, Debug)]
pub struct NeuralModel {
    pub config: ModelConfig,
    pub params: NeuralParams,
    pub task: Task,
    pub lowercase: bool,
    pub max_tokens: usize,
    pub input_dim: usize,
    pub embedding_source_id: String,
}

/// Label, positive-class probability, and per-token attention weights.
#[derive(Clone, Debug)]
pub struct AttentionPrediction {
    pub label: bool,
    pub probability: f64,
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
}

pub(crate) struct ForwardOutput {
    pub logits: ValueId,
    pub weights: Option<ValueId>,
}

impl NeuralModel {
    /// Build the forward graph for one sequence on `tape`. Rows past
    /// `valid_len` are never touched, so trailing padding cannot change
    /// the logits. Dropout applies to the pooled vector only when
    /// `training`.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        param_ids: &lstm::ParamIds,
        input: ValueId,
        valid_len: usize,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutput> {
        let encoded = lstm::run_stack(
            tape,
            &param_ids.layers,
            self.config.hidden,
            input,
            valid_len,
        )?;
        let (pooled, weights) = match &param_ids.attention {
            Some(att) => {
                let mask = vec![true; valid_len];
                let (context, weights) =
                    lstm::attention_pool(tape, &encoded.step_rows, &mask, att)?;
                (context, Some(weights))
            }
            None => {
                let pooled = match encoded.bwd_last {
                    Some(bwd) => tape.concat(encoded.fwd_last, bwd)?,
                    None => encoded.fwd_last,
                };
                (pooled, None)
            }
        };
        let dropped = tape.dropout(pooled, self.config.dropout_p, training, rng)?;
        let logits = lstm::classify(tape, dropped, &param_ids.head)?;
        Ok(ForwardOutput { logits, weights })
    }

    /// Logits for an input matrix, dropout off.
    pub fn example_logits(&self, input: &Tensor, valid_len: usize) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let param_ids = lstm::ParamIds::insert(&mut tape, &self.params)?;
        let input_id = tape.leaf(input.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &param_ids, input_id, valid_len, false, &mut rng)?;
        let logits = tape.value(out.logits).as_slice();
        Ok((logits[0], logits[1]))
    }

    /// Cross-entropy loss of one example, dropout off.
    pub fn example_loss(&self, input: &Tensor, valid_len: usize, target: bool) -> Result<f64> {
        let mut tape = Tape::new();
        let param_ids = lstm::ParamIds::insert(&mut tape, &self.params)?;
        let input_id = tape.leaf(input.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &param_ids, input_id, valid_len, false, &mut rng)?;
        let loss = tape.cross_entropy_with_logits(out.logits, usize::from(target))?;
        tape.value(loss).item()
    }

    /// Analytic parameter gradients of `example_loss`, in
    /// `named_tensors` order.
    pub fn example_gradients(
        &self,
        input: &Tensor,
        valid_len: usize,
        target: bool,
    ) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let param_ids = lstm::ParamIds::insert(&mut tape, &self.params)?;
        let input_id = tape.leaf(input.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &param_ids, input_id, valid_len, false, &mut rng)?;
        let loss = tape.cross_entropy_with_logits(out.logits, usize::from(target))?;
        let grads = tape.backward(loss)?;
        Ok(param_ids.flat.iter().map(|&id| grads.get(id)).collect())
    }

    /// Deterministic prediction for one moment.
    pub fn predict_moment(
        &self,
        moment: &Moment,
        source: &EmbeddingSource,
    ) -> Result<Prediction> {
        let (_, input) = self.prepare_input(moment, source)?;
        let (z_no, z_yes) = self.example_logits(&input, input.rows())?;
        Ok(logits_to_prediction(z_no, z_yes))
    }

    /// Prediction plus attention weights over the tokenized input.
    /// Requires a model trained with attention.
    pub fn predict_with_attention(
        &self,
        moment: &Moment,
        source: &EmbeddingSource,
    ) -> Result<AttentionPrediction> {
        if !self.config.attention {
            return Err(Error::Usage(
                "predict_with_attention on an attention-free model".into(),
            ));
        }
        let (tokens, input) = self.prepare_input(moment, source)?;
        let mut tape = Tape::new();
        let param_ids = lstm::ParamIds::insert(&mut tape, &self.params)?;
        let input_id = tape.leaf(input.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &param_ids, input_id, input.rows(), false, &mut rng)?;
        let logits = tape.value(out.logits).as_slice();
        let prediction = logits_to_prediction(logits[0], logits[1]);
        let weights = tape
            .value(out.weights.expect("attention model emits weights"))
            .as_slice()
            .to_vec();
        Ok(AttentionPrediction {
            label: prediction.label,
            probability: positive_probability(logits[0], logits[1]),
            tokens,
            weights,
        })
    }

    fn prepare_input(
        &self,
        moment: &Moment,
        source: &EmbeddingSource,
    ) -> Result<(Vec<String>, Tensor)> {
        if source.dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "embedding source of dim {} against model input of {}",
                source.dim(),
                self.input_dim
            )));
        }
        source.embed(moment, self.lowercase, self.max_tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut container = Container::new(
            "neural-checkpoint",
            json!({
                "config": serde_json::to_value(self.config)
                    .map_err(|e| Error::Data(e.to_string()))?,
                "task": self.task.name(),
                "lowercase": self.lowercase,
                "max_tokens": self.max_tokens,
                "input_dim": self.input_dim,
                "embedding_source_id": self.embedding_source_id,
            }),
        );
        for (name, tensor) in self.params.named_tensors() {
            container.push_tensor(&name, tensor.clone());
        }
        container.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let container = Container::load(path)?;
        if container.kind != "neural-checkpoint" {
            return Err(Error::Data(format!(
                "expected a neural-checkpoint model file, found `{}`",
                container.kind
            )));
        }
        let config: ModelConfig = serde_json::from_value(container.meta["config"].clone())
            .map_err(|e| Error::Data(format!("bad model config in checkpoint: {e}")))?;
        let task: Task = container.meta["task"]
            .as_str()
            .ok_or_else(|| Error::Data("checkpoint lacks task".into()))?
            .parse()?;
        let input_dim = container.meta["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::Data("checkpoint lacks input_dim".into()))?
            as usize;

        // Rebuild a parameter skeleton, then overwrite every tensor from
        // the checkpoint by name.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = NeuralParams::init(
            input_dim,
            config.hidden,
            config.layers,
            config.bidirectional,
            config.attention,
            &mut rng,
        );
        {
            let names: Vec<String> = params
                .named_tensors()
                .iter()
                .map(|(n, _)| n.clone())
                .collect();
            let mut slots = params.tensors_mut();
            for (name, slot) in names.iter().zip(&mut slots) {
                let stored = container.tensor(name)?;
                if stored.shape() != slot.shape() {
                    return Err(Error::Shape(format!(
                        "checkpoint tensor `{name}` has {} but the config implies {}",
                        stored.shape(),
                        slot.shape()
                    )));
                }
                **slot = stored.clone();
            }
        }

        Ok(NeuralModel {
            config,
            params,
            task,
            lowercase: container.meta["lowercase"].as_bool().unwrap_or(true),
            max_tokens: container.meta["max_tokens"].as_u64().unwrap_or(128) as usize,
            input_dim,
            embedding_source_id: container.meta["embedding_source_id"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
        })
    }
}

pub(crate) fn logits_to_prediction(z_no: f64, z_yes: f64) -> Prediction {
    let score = z_yes - z_no;
    Prediction {
        label: score > 0.0,
        score: positive_probability(z_no, z_yes),
    }
}

/// softmax(logits)[yes] = sigmoid(z_yes - z_no).
pub(crate) fn positive_probability(z_no: f64, z_yes: f64) -> f64 {
    let d = z_yes - z_no;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn tiny_model(attention: bool, bidirectional: bool) -> NeuralModel {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = ModelConfig {
            layers: 2,
            hidden: 3,
            bidirectional,
            attention,
            dropout_p: 0.5,
        };
        let params = NeuralParams::init(4, 3, 2, bidirectional, attention, &mut rng);
        NeuralModel {
            config,
            params,
            task: Task::Agency,
            lowercase: true,
            max_tokens: 128,
            input_dim: 4,
            embedding_source_id: "test".into(),
        }
    }

    fn input(t: usize) -> Tensor {
        Tensor::new(
            Shape::Matrix(t, 4),
            (0..t * 4).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn softmax_probability_example() {
        // logits (ln 3, 0) for (yes, no) -> P(yes) = 0.75
        assert!((positive_probability(0.0, 3f64.ln()) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_predict_no() {
        let p = logits_to_prediction(0.0, 0.0);
        assert!(!p.label);
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn padding_rows_never_change_logits() {
        for (attention, bidirectional) in
            [(false, false), (true, false), (false, true), (true, true)]
        {
            let model = tiny_model(attention, bidirectional);
            let base = input(3);
            let (a0, a1) = model.example_logits(&base, 3).unwrap();

            let mut padded_rows: Vec<Vec<f64>> =
                (0..3).map(|r| base.row(r).to_vec()).collect();
            padded_rows.push(vec![9.9, -9.9, 5.5, -5.5]);
            padded_rows.push(vec![1e3, 1e3, 1e3, 1e3]);
            let padded = Tensor::from_rows(&padded_rows).unwrap();
            let (b0, b1) = model.example_logits(&padded, 3).unwrap();
            assert_eq!(a0.to_bits(), b0.to_bits());
            assert_eq!(a1.to_bits(), b1.to_bits());
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let model = tiny_model(true, true);
        let file = tempfile::NamedTempFile::new().unwrap();
        model.save(file.path()).unwrap();
        let loaded = NeuralModel::load(file.path()).unwrap();
        let x = input(4);
        let (a0, a1) = model.example_logits(&x, 4).unwrap();
        let (b0, b1) = loaded.example_logits(&x, 4).unwrap();
        assert_eq!(a0.to_bits(), b0.to_bits());
        assert_eq!(a1.to_bits(), b1.to_bits());
        assert_eq!(loaded.task, Task::Agency);
        assert_eq!(loaded.embedding_source_id, "test");
    }

    #[test]
    fn attention_required_for_weighted_prediction() {
        let model = tiny_model(false, false);
        let table = EmbeddingTable::from_rows(vec![
            ("hello".into(), vec![0.1, 0.2, 0.3, 0.4]),
        ])
        .unwrap();
        let source = EmbeddingSource::Static {
            table,
            id: "toy".into(),
        };
        let moment = Moment {
            id: "m".into(),
            text: "hello".into(),
            agency: None,
            social: None,
        };
        assert!(matches!(
            model.predict_with_attention(&moment, &source),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn empty_tokenization_is_rejected() {
        let model = tiny_model(true, false);
        let table = EmbeddingTable::from_rows(vec![
            ("hello".into(), vec![0.1, 0.2, 0.3, 0.4]),
        ])
        .unwrap();
        let source = EmbeddingSource::Static {
            table,
            id: "toy".into(),
        };
        let moment = Moment {
            id: "m".into(),
            text: "!!!".into(),
            agency: None,
            social: None,
        };
        assert!(model.predict_with_attention(&moment, &source).is_err());
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let model = tiny_model(true, true);
        let table = EmbeddingTable::from_rows(vec![
            ("one".into(), vec![0.5, -0.5, 0.25, 0.0]),
            ("two".into(), vec![-1.0, 0.75, 0.0, 0.5]),
            ("three".into(), vec![0.0, 0.1, -0.2, 0.9]),
        ])
        .unwrap();
        let source = EmbeddingSource::Static {
            table,
            id: "toy".into(),
        };
        for text in ["one", "one two", "one two three two one"] {
            let moment = Moment {
                id: text.replace(' ', "-"),
                text: text.into(),
                agency: None,
                social: None,
            };
            let out = model.predict_with_attention(&moment, &source).unwrap();
            assert_eq!(out.weights.len(), out.tokens.len());
            let sum: f64 = out.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            if text == "one" {
                assert_eq!(out.weights, vec![1.0]);
            }
        }
    }
}
