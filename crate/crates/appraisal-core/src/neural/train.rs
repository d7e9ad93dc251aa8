//! Mini-batch training with adaptive-moment gradient descent, per-epoch
//! dev evaluation with best-epoch model selection, and the grid search
//! over layers and hidden sizes.
//!
//! Everything downstream of `TrainConfig::seed` is deterministic: batch
//! order, parameter init, and dropout masks all draw from one seeded
//! stream, so equal seeds reproduce identical trajectories bit for bit.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Task};
use crate::error::{Error, Result};
use crate::features::tokenize;
use crate::neural::lstm::ParamIds;
use crate::neural::{
    logits_to_prediction, Architecture, EmbeddingSource, ModelConfig, NeuralModel, NeuralParams,
    TrainConfig,
};
use crate::tensor::{Tape, Tensor};

/// Adaptive-moment optimizer over a flat tensor list.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// One update. `params` and `grads` must stay in the same order
    /// across calls.
    pub fn step(&mut self, mut params: Vec<&mut Tensor>, grads: &[Tensor]) {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            let p = param.as_mut_slice();
            for (((pi, &gi), mi), vi) in p
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Training progress of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

/// Write `epoch,train_loss,dev_accuracy` rows.
pub fn write_epoch_csv(path: &Path, reports: &[EpochReport]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,dev_accuracy")?;
    for r in reports {
        writeln!(out, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.dev_accuracy)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) struct PreparedExample {
    pub input: Tensor,
    pub target: bool,
}

/// Embed a labeled dataset once. Moments that tokenize to nothing are
/// skipped with a warning; anything else that fails to embed is an error.
pub(crate) fn prepare_examples(
    dataset: &Dataset,
    task: Task,
    source: &EmbeddingSource,
    lowercase: bool,
    max_tokens: usize,
) -> Result<Vec<PreparedExample>> {
    let mut out = Vec::with_capacity(dataset.len());
    let mut skipped = 0usize;
    for moment in dataset.moments() {
        let target = moment.label(task).ok_or_else(|| {
            Error::Data(format!("moment `{}` has no {} label", moment.id, task.name()))
        })?;
        if tokenize(&moment.text, lowercase).is_empty() {
            skipped += 1;
            continue;
        }
        let (_, input) = source.embed(moment, lowercase, max_tokens)?;
        out.push(PreparedExample { input, target });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} moment(s) with empty tokenization");
    }
    if out.is_empty() {
        return Err(Error::Usage("no usable examples after tokenization".into()));
    }
    Ok(out)
}

fn batch_loss_and_step(
    model: &mut NeuralModel,
    optimizer: &mut Adam,
    batch: &[&PreparedExample],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let param_ids = ParamIds::insert(&mut tape, &model.params)?;
    let mut total: Option<crate::tensor::ValueId> = None;
    for example in batch {
        let input = tape.leaf(example.input.clone())?;
        let out = model.forward(
            &mut tape,
            &param_ids,
            input,
            example.input.rows(),
            true,
            rng,
        )?;
        let loss = tape.cross_entropy_with_logits(out.logits, usize::from(example.target))?;
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let total = total.expect("non-empty batch");
    let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
    let loss_value = tape.value(mean).item()?;
    let grads = tape.backward(mean)?;
    let grad_tensors: Vec<Tensor> = param_ids.flat.iter().map(|&id| grads.get(id)).collect();
    optimizer.step(model.params.tensors_mut(), &grad_tensors);
    Ok(loss_value)
}

pub(crate) fn accuracy_on(model: &NeuralModel, examples: &[PreparedExample]) -> Result<f64> {
    let outcomes = crate::par::map(examples, |example| {
        model
            .example_logits(&example.input, example.input.rows())
            .map(|(z_no, z_yes)| logits_to_prediction(z_no, z_yes).label == example.target)
    });
    let mut hits = 0usize;
    for outcome in outcomes {
        if outcome? {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

pub(crate) fn train_prepared(
    train_examples: &[PreparedExample],
    dev_examples: &[PreparedExample],
    task: Task,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    input_dim: usize,
    source_id: &str,
    lowercase: bool,
) -> Result<(NeuralModel, Vec<EpochReport>)> {
    if train_examples.is_empty() || dev_examples.is_empty() {
        return Err(Error::Usage("empty train or dev split".into()));
    }
    if train_config.batch_size == 0 || train_config.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let params = NeuralParams::init(
        input_dim,
        model_config.hidden,
        model_config.layers,
        model_config.bidirectional,
        model_config.attention,
        &mut rng,
    );
    let mut model = NeuralModel {
        config: model_config,
        params,
        task,
        lowercase,
        max_tokens: train_config.max_tokens,
        input_dim,
        embedding_source_id: source_id.to_string(),
    };
    let mut optimizer = Adam::new(train_config.learning_rate);

    let mut best_params: Option<NeuralParams> = None;
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut reports = Vec::with_capacity(train_config.epochs);
    let mut order: Vec<usize> = (0..train_examples.len()).collect();

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<&PreparedExample> =
                chunk.iter().map(|&i| &train_examples[i]).collect();
            let loss =
                batch_loss_and_step(&mut model, &mut optimizer, &batch, &mut rng).map_err(
                    |e| match e {
                        Error::NonFinite { op } => Error::Train(format!(
                            "non-finite loss in {op} at epoch {epoch}, batch {batch_index}"
                        )),
                        other => other,
                    },
                )?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_examples.len() as f64;
        let dev_accuracy = accuracy_on(&model, dev_examples)?;
        reports.push(EpochReport {
            epoch,
            train_loss,
            dev_accuracy,
        });
        if dev_accuracy > best_accuracy {
            best_accuracy = dev_accuracy;
            best_params = Some(model.params.clone());
        }
    }

    model.params = best_params.expect("at least one epoch ran");
    Ok((model, reports))
}

/// Train one configuration, returning the parameters from the epoch with
/// the best dev accuracy plus the per-epoch report.
pub fn train(
    train_set: &Dataset,
    dev_set: &Dataset,
    task: Task,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    source: &EmbeddingSource,
) -> Result<(NeuralModel, Vec<EpochReport>)> {
    model_config.validate()?;
    let lowercase = true;
    let train_examples = prepare_examples(
        train_set,
        task,
        source,
        lowercase,
        train_config.max_tokens,
    )?;
    let dev_examples =
        prepare_examples(dev_set, task, source, lowercase, train_config.max_tokens)?;
    train_prepared(
        &train_examples,
        &dev_examples,
        task,
        model_config,
        train_config,
        source.dim(),
        source.id(),
        lowercase,
    )
}

/// One grid cell outcome.
#[derive(Clone, Copy, Debug)]
pub struct GridCell {
    pub architecture: Architecture,
    pub layers: usize,
    pub hidden: usize,
    pub dev_accuracy: f64,
}

/// One (layers, hidden) row across all requested architectures.
#[derive(Clone, Debug)]
pub struct GridRow {
    pub layers: usize,
    pub hidden: usize,
    pub cells: Vec<GridCell>,
}

/// Full grid outcome, rows in (layers, hidden) order.
#[derive(Clone, Debug)]
pub struct GridResult {
    pub architectures: Vec<Architecture>,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    /// Best cell per architecture (highest dev accuracy; earlier rows win
    /// ties).
    pub fn best_cells(&self) -> Vec<GridCell> {
        self.architectures
            .iter()
            .enumerate()
            .map(|(i, _)| {
                self.rows
                    .iter()
                    .map(|r| r.cells[i])
                    .reduce(|best, cell| {
                        if cell.dev_accuracy > best.dev_accuracy {
                            cell
                        } else {
                            best
                        }
                    })
                    .expect("non-empty grid")
            })
            .collect()
    }

    /// CSV mirroring the experiment tables: one row per (layers, hidden),
    /// one column per architecture, 4-decimal accuracy.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let names: Vec<&str> = self.architectures.iter().map(|a| a.name()).collect();
        writeln!(out, "layers,hidden,{}", names.join(","))?;
        for row in &self.rows {
            let values: Vec<String> = row
                .cells
                .iter()
                .map(|c| format!("{:.4}", c.dev_accuracy))
                .collect();
            writeln!(out, "{},{},{}", row.layers, row.hidden, values.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Deterministic per-cell seed derivation (splitmix64 over the cell
/// coordinates).
pub fn derive_cell_seed(base: u64, architecture: Architecture, layers: usize, hidden: usize) -> u64 {
    let mut state = base;
    for part in [
        Architecture::ALL
            .iter()
            .position(|a| a == &architecture)
            .unwrap_or(0) as u64,
        layers as u64,
        hidden as u64,
    ] {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Train every (architecture, layers, hidden) cell and tabulate dev
/// accuracy. Cells are independent jobs with derived seeds; with the
/// `parallel` feature they fan out across the rayon pool (capped by
/// `APPRAISAL_LAB_THREADS`).
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    train_set: &Dataset,
    dev_set: &Dataset,
    task: Task,
    architectures: &[Architecture],
    layers_grid: &[usize],
    hidden_grid: &[usize],
    train_config: &TrainConfig,
    source: &EmbeddingSource,
) -> Result<GridResult> {
    if architectures.is_empty() || layers_grid.is_empty() || hidden_grid.is_empty() {
        return Err(Error::Usage("empty grid".into()));
    }
    let lowercase = true;
    let train_examples = prepare_examples(
        train_set,
        task,
        source,
        lowercase,
        train_config.max_tokens,
    )?;
    let dev_examples =
        prepare_examples(dev_set, task, source, lowercase, train_config.max_tokens)?;

    let mut cells: Vec<(Architecture, usize, usize)> = Vec::new();
    for &layers in layers_grid {
        for &hidden in hidden_grid {
            for &arch in architectures {
                cells.push((arch, layers, hidden));
            }
        }
    }

    let outcomes: Vec<Result<GridCell>> = crate::par::with_thread_cap(|| {
        crate::par::map(&cells, |&(arch, layers, hidden)| {
            let mut per_cell = *train_config;
            per_cell.seed = derive_cell_seed(train_config.seed, arch, layers, hidden);
            let model_config = ModelConfig::new(arch, layers, hidden);
            let (_, reports) = train_prepared(
                &train_examples,
                &dev_examples,
                task,
                model_config,
                &per_cell,
                source.dim(),
                source.id(),
                lowercase,
            )?;
            let dev_accuracy = reports
                .iter()
                .map(|r| r.dev_accuracy)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(GridCell {
                architecture: arch,
                layers,
                hidden,
                dev_accuracy,
            })
        })
    });

    let mut flat = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        flat.push(outcome?);
    }

    let mut rows = Vec::new();
    let mut cursor = 0;
    for &layers in layers_grid {
        for &hidden in hidden_grid {
            let cells = flat[cursor..cursor + architectures.len()].to_vec();
            cursor += architectures.len();
            rows.push(GridRow {
                layers,
                hidden,
                cells,
            });
        }
    }
    Ok(GridResult {
        architectures: architectures.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_moves_against_gradient() {
        let mut param = Tensor::vector(vec![1.0, -2.0]);
        let grad = Tensor::vector(vec![0.5, -0.5]);
        let mut adam = Adam::new(0.1);
        adam.step(vec![&mut param], std::slice::from_ref(&grad));
        assert!(param.as_slice()[0] < 1.0);
        assert!(param.as_slice()[1] > -2.0);
    }

    #[test]
    fn adam_step_magnitude_is_bounded_by_lr() {
        // With bias correction the first step is close to lr in magnitude.
        let mut param = Tensor::vector(vec![0.0]);
        let grad = Tensor::vector(vec![1e-3]);
        let mut adam = Adam::new(0.01);
        adam.step(vec![&mut param], std::slice::from_ref(&grad));
        assert!(param.as_slice()[0].abs() <= 0.0101);
    }

    #[test]
    fn cell_seeds_differ_across_cells_and_bases() {
        let a = derive_cell_seed(1, Architecture::Lstm, 1, 128);
        let b = derive_cell_seed(1, Architecture::Lstm, 1, 256);
        let c = derive_cell_seed(1, Architecture::BiLstm, 1, 128);
        let d = derive_cell_seed(2, Architecture::Lstm, 1, 128);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_cell_seed(1, Architecture::Lstm, 1, 128));
    }

    #[test]
    fn epoch_csv_format() {
        let reports = vec![
            EpochReport {
                epoch: 1,
                train_loss: 0.693147,
                dev_accuracy: 0.5,
            },
            EpochReport {
                epoch: 2,
                train_loss: 0.5,
                dev_accuracy: 0.75,
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_epoch_csv(f.path(), &reports).unwrap();
        let content = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(
            content,
            "epoch,train_loss,dev_accuracy\n1,0.693147,0.500000\n2,0.500000,0.750000\n"
        );
    }
}
