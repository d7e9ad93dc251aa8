//! LSTM cell parameters and tape-graph builders for the sequence
//! encoders: unidirectional and bidirectional stacks, additive
//! self-attention pooling, and the classifier head.
//!
//! Builders append ops to a caller-owned [`Tape`], so one tape can hold a
//! whole mini-batch of sequences sharing the same parameter leaves.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tape, Tensor, ValueId};

/// One gate: input-to-hidden weights, hidden-to-hidden weights, bias.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
}

/// The four gates of one LSTM cell.
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub cell: GateParams,
    pub output: GateParams,
}

/// Per-layer parameters: forward cell, plus a backward cell when
/// bidirectional.
#[derive(Clone, Debug)]
pub struct LstmLayerParams {
    pub fwd: LstmCellParams,
    pub bwd: Option<LstmCellParams>,
}

/// Additive self-attention parameters over encoder outputs.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

/// Affine map from the pooled vector to 2 logits (index 0 = no, 1 = yes).
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// All trainable parameters of one classifier.
#[derive(Clone, Debug)]
pub struct NeuralParams {
    pub layers: Vec<LstmLayerParams>,
    pub attention: Option<AttentionParams>,
    pub head: HeadParams,
}

fn uniform_tensor(shape: Shape, k: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.len())
        .map(|_| rng.random_range(-k..k))
        .collect();
    Tensor::new(shape, data).expect("shape matches generated data")
}

fn init_gate(d_in: usize, hidden: usize, k: f64, rng: &mut ChaCha8Rng) -> GateParams {
    GateParams {
        w_x: uniform_tensor(Shape::Matrix(d_in, hidden), k, rng),
        w_h: uniform_tensor(Shape::Matrix(hidden, hidden), k, rng),
        b: uniform_tensor(Shape::Vector(hidden), k, rng),
    }
}

fn init_cell(d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LstmCellParams {
    let k = 1.0 / (hidden as f64).sqrt();
    LstmCellParams {
        input: init_gate(d_in, hidden, k, rng),
        forget: init_gate(d_in, hidden, k, rng),
        cell: init_gate(d_in, hidden, k, rng),
        output: init_gate(d_in, hidden, k, rng),
    }
}

impl NeuralParams {
    /// Seeded uniform(-k, k) initialization with k = 1/sqrt(hidden).
    pub fn init(
        input_dim: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        attention: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h_out = if bidirectional { 2 * hidden } else { hidden };
        let mut layer_params = Vec::with_capacity(layers);
        let mut d_in = input_dim;
        for _ in 0..layers {
            layer_params.push(LstmLayerParams {
                fwd: init_cell(d_in, hidden, rng),
                bwd: bidirectional.then(|| init_cell(d_in, hidden, rng)),
            });
            d_in = h_out;
        }
        let k = 1.0 / (h_out as f64).sqrt();
        let attention = attention.then(|| AttentionParams {
            w: uniform_tensor(Shape::Matrix(h_out, h_out), k, rng),
            b: uniform_tensor(Shape::Vector(h_out), k, rng),
            v: uniform_tensor(Shape::Vector(h_out), k, rng),
        });
        let head = HeadParams {
            w: uniform_tensor(Shape::Matrix(h_out, 2), k, rng),
            b: uniform_tensor(Shape::Vector(2), k, rng),
        };
        NeuralParams {
            layers: layer_params,
            attention,
            head,
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].fwd.input.w_h.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fwd.input.w_x.rows()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.layers[0].bwd.is_some()
    }

    pub fn output_dim(&self) -> usize {
        if self.is_bidirectional() {
            2 * self.hidden()
        } else {
            self.hidden()
        }
    }

    /// Named views of every tensor, in a fixed traversal order shared by
    /// the optimizer, checkpoints, and gradient collection.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, cell) in [("fwd", Some(&layer.fwd)), ("bwd", layer.bwd.as_ref())] {
                let Some(cell) = cell else { continue };
                for (gate, params) in [
                    ("input", &cell.input),
                    ("forget", &cell.forget),
                    ("cell", &cell.cell),
                    ("output", &cell.output),
                ] {
                    out.push((format!("layer{l}.{dir}.{gate}.w_x"), &params.w_x));
                    out.push((format!("layer{l}.{dir}.{gate}.w_h"), &params.w_h));
                    out.push((format!("layer{l}.{dir}.{gate}.b"), &params.b));
                }
            }
        }
        if let Some(att) = &self.attention {
            out.push(("attention.w".into(), &att.w));
            out.push(("attention.b".into(), &att.b));
            out.push(("attention.v".into(), &att.v));
        }
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for cell in [Some(&mut layer.fwd), layer.bwd.as_mut()]
                .into_iter()
                .flatten()
            {
                for params in [
                    &mut cell.input,
                    &mut cell.forget,
                    &mut cell.cell,
                    &mut cell.output,
                ] {
                    out.push(&mut params.w_x);
                    out.push(&mut params.w_h);
                    out.push(&mut params.b);
                }
            }
        }
        if let Some(att) = &mut self.attention {
            out.push(&mut att.w);
            out.push(&mut att.b);
            out.push(&mut att.v);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }
}

// Tape-side handles mirroring the parameter structure.

pub(crate) struct GateIds {
    w_x: ValueId,
    w_h: ValueId,
    b: ValueId,
}

pub(crate) struct CellIds {
    input: GateIds,
    forget: GateIds,
    cell: GateIds,
    output: GateIds,
}

pub(crate) struct LayerIds {
    fwd: CellIds,
    bwd: Option<CellIds>,
}

pub(crate) struct AttentionIds {
    w: ValueId,
    b: ValueId,
    v: ValueId,
}

pub(crate) struct HeadIds {
    w: ValueId,
    b: ValueId,
}

/// Parameter leaves on a tape, plus the flat id list aligned with
/// [`NeuralParams::named_tensors`] for gradient collection.
pub(crate) struct ParamIds {
    pub layers: Vec<LayerIds>,
    pub attention: Option<AttentionIds>,
    pub head: HeadIds,
    pub flat: Vec<ValueId>,
}

impl ParamIds {
    pub fn insert(tape: &mut Tape, params: &NeuralParams) -> Result<Self> {
        let mut flat = Vec::new();
        let gate = |tape: &mut Tape, g: &GateParams, flat: &mut Vec<ValueId>| -> Result<GateIds> {
            let w_x = tape.leaf(g.w_x.clone())?;
            let w_h = tape.leaf(g.w_h.clone())?;
            let b = tape.leaf(g.b.clone())?;
            flat.extend([w_x, w_h, b]);
            Ok(GateIds { w_x, w_h, b })
        };
        let mut cell = |tape: &mut Tape, c: &LstmCellParams, flat: &mut Vec<ValueId>| -> Result<CellIds> {
            Ok(CellIds {
                input: gate(tape, &c.input, flat)?,
                forget: gate(tape, &c.forget, flat)?,
                cell: gate(tape, &c.cell, flat)?,
                output: gate(tape, &c.output, flat)?,
            })
        };
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            layers.push(LayerIds {
                fwd: cell(tape, &layer.fwd, &mut flat)?,
                bwd: match &layer.bwd {
                    Some(b) => Some(cell(tape, b, &mut flat)?),
                    None => None,
                },
            });
        }
        let attention = match &params.attention {
            Some(att) => {
                let w = tape.leaf(att.w.clone())?;
                let b = tape.leaf(att.b.clone())?;
                let v = tape.leaf(att.v.clone())?;
                flat.extend([w, b, v]);
                Some(AttentionIds { w, b, v })
            }
            None => None,
        };
        let w = tape.leaf(params.head.w.clone())?;
        let b = tape.leaf(params.head.b.clone())?;
        flat.extend([w, b]);
        Ok(ParamIds {
            layers,
            attention,
            head: HeadIds { w, b },
            flat,
        })
    }
}

fn gate_preactivation(
    tape: &mut Tape,
    ids: &GateIds,
    x_t: ValueId,
    h_prev: ValueId,
) -> Result<ValueId> {
    let from_input = tape.matmul(x_t, ids.w_x)?;
    let from_hidden = tape.matmul(h_prev, ids.w_h)?;
    let sum = tape.add(from_input, from_hidden)?;
    tape.add(sum, ids.b)
}

/// One LSTM step: standard gate equations, returning (h_t, c_t).
fn lstm_step(
    tape: &mut Tape,
    cell: &CellIds,
    x_t: ValueId,
    h_prev: ValueId,
    c_prev: ValueId,
) -> Result<(ValueId, ValueId)> {
    let i_pre = gate_preactivation(tape, &cell.input, x_t, h_prev)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = gate_preactivation(tape, &cell.forget, x_t, h_prev)?;
    let f = tape.sigmoid(f_pre)?;
    let g_pre = gate_preactivation(tape, &cell.cell, x_t, h_prev)?;
    let g = tape.tanh(g_pre)?;
    let o_pre = gate_preactivation(tape, &cell.output, x_t, h_prev)?;
    let o = tape.sigmoid(o_pre)?;

    let retained = tape.mul(f, c_prev)?;
    let written = tape.mul(i, g)?;
    let c_t = tape.add(retained, written)?;
    let c_act = tape.tanh(c_t)?;
    let h_t = tape.mul(o, c_act)?;
    Ok((h_t, c_t))
}

/// Run one direction over rows `0..valid_len` of `input` (reversed when
/// `reverse`), returning hidden states aligned to step order 0..valid_len.
pub(crate) fn run_direction(
    tape: &mut Tape,
    cell: &CellIds,
    input: ValueId,
    valid_len: usize,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<ValueId>> {
    let mut h = tape.leaf(Tensor::zeros(Shape::Matrix(1, hidden)))?;
    let mut c = tape.leaf(Tensor::zeros(Shape::Matrix(1, hidden)))?;
    let mut states = Vec::with_capacity(valid_len);
    let steps: Vec<usize> = if reverse {
        (0..valid_len).rev().collect()
    } else {
        (0..valid_len).collect()
    };
    for t in steps {
        let x_t = tape.row(input, t)?;
        let (h_t, c_t) = lstm_step(tape, cell, x_t, h, c)?;
        h = h_t;
        c = c_t;
        states.push(h_t);
    }
    if reverse {
        states.reverse();
    }
    Ok(states)
}

/// Encoder outputs for pooling: per-step rows of the top layer plus the
/// final state of each direction.
pub(crate) struct EncoderOutput {
    pub step_rows: Vec<ValueId>,
    pub fwd_last: ValueId,
    pub bwd_last: Option<ValueId>,
}

/// Run the full stack over rows `0..valid_len` of the input matrix.
pub(crate) fn run_stack(
    tape: &mut Tape,
    layers: &[LayerIds],
    hidden: usize,
    input: ValueId,
    valid_len: usize,
) -> Result<EncoderOutput> {
    if valid_len == 0 {
        return Err(Error::Usage("encoder on an empty sequence".into()));
    }
    let mut layer_input = input;
    let mut step_rows: Vec<ValueId> = Vec::new();
    let mut fwd_last = None;
    let mut bwd_last = None;
    for layer in layers {
        let fwd = run_direction(tape, &layer.fwd, layer_input, valid_len, hidden, false)?;
        fwd_last = fwd.last().copied();
        match &layer.bwd {
            None => {
                step_rows = fwd;
                bwd_last = None;
            }
            Some(bwd_cell) => {
                let bwd = run_direction(tape, bwd_cell, layer_input, valid_len, hidden, true)?;
                bwd_last = Some(bwd[0]);
                step_rows = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(&f, &b)| tape.concat(f, b))
                    .collect::<Result<_>>()?;
            }
        }
        layer_input = tape.stack_rows(&step_rows)?;
    }
    Ok(EncoderOutput {
        step_rows,
        fwd_last: fwd_last.expect("at least one step"),
        bwd_last,
    })
}

/// Additive self-attention pooling: scores `e_t = v . tanh(W h_t + b)`,
/// weights = masked softmax of `e`, context = weighted sum of hidden
/// states. Returns (context row, weight vector).
pub(crate) fn attention_pool(
    tape: &mut Tape,
    step_rows: &[ValueId],
    mask: &[bool],
    ids: &AttentionIds,
) -> Result<(ValueId, ValueId)> {
    if step_rows.is_empty() {
        return Err(Error::Usage("attention over an empty sequence".into()));
    }
    let hiddens = tape.stack_rows(step_rows)?;
    let h_out = tape.value(hiddens).cols();
    let projected = tape.matmul(hiddens, ids.w)?;
    let shifted = tape.add(projected, ids.b)?;
    let activated = tape.tanh(shifted)?;
    let v_col = tape.reshape(ids.v, Shape::Matrix(h_out, 1))?;
    let scores_col = tape.matmul(activated, v_col)?;
    let scores = tape.reshape(scores_col, Shape::Vector(step_rows.len()))?;
    let weights = tape.masked_softmax(scores, mask)?;
    let weights_row = tape.reshape(weights, Shape::Matrix(1, step_rows.len()))?;
    let context = tape.matmul(weights_row, hiddens)?;
    Ok((context, weights))
}

/// Affine head over the pooled vector, as a 2-logit vector.
pub(crate) fn classify(tape: &mut Tape, pooled: ValueId, head: &HeadIds) -> Result<ValueId> {
    let projected = tape.matmul(pooled, head.w)?;
    let logits_row = tape.add(projected, head.b)?;
    tape.reshape(logits_row, Shape::Vector(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_cell(d_in: usize, hidden: usize) -> LstmCellParams {
        let zero_gate = || GateParams {
            w_x: Tensor::zeros(Shape::Matrix(d_in, hidden)),
            w_h: Tensor::zeros(Shape::Matrix(hidden, hidden)),
            b: Tensor::zeros(Shape::Vector(hidden)),
        };
        LstmCellParams {
            input: zero_gate(),
            forget: zero_gate(),
            cell: zero_gate(),
            output: zero_gate(),
        }
    }

    fn cell_ids(tape: &mut Tape, cell: &LstmCellParams) -> CellIds {
        let mut gate = |g: &GateParams| -> GateIds {
            GateIds {
                w_x: tape.leaf(g.w_x.clone()).unwrap(),
                w_h: tape.leaf(g.w_h.clone()).unwrap(),
                b: tape.leaf(g.b.clone()).unwrap(),
            }
        };
        CellIds {
            input: gate(&cell.input),
            forget: gate(&cell.forget),
            cell: gate(&cell.cell),
            output: gate(&cell.output),
        }
    }

    #[test]
    fn zero_parameters_force_zero_hidden_states() {
        let mut tape = Tape::new();
        let cell = zero_cell(3, 4);
        let ids = cell_ids(&mut tape, &cell);
        let input = tape
            .leaf(Tensor::matrix(5, 3, (0..15).map(|i| i as f64).collect()).unwrap())
            .unwrap();
        let states = run_direction(&mut tape, &ids, input, 5, 4, false).unwrap();
        for h in states {
            assert!(tape.value(h).as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_step_matches_hand_computed_gates() {
        // 1-d input, 1 hidden unit, hand-set parameters.
        let (wxi, whi, bi) = (0.5, -0.25, 0.1);
        let (wxf, whf, bf) = (-0.3, 0.2, 0.4);
        let (wxg, whg, bg) = (0.7, 0.6, -0.2);
        let (wxo, who, bo) = (0.9, -0.5, 0.05);
        let gate = |wx: f64, wh: f64, b: f64| GateParams {
            w_x: Tensor::matrix(1, 1, vec![wx]).unwrap(),
            w_h: Tensor::matrix(1, 1, vec![wh]).unwrap(),
            b: Tensor::vector(vec![b]),
        };
        let cell = LstmCellParams {
            input: gate(wxi, whi, bi),
            forget: gate(wxf, whf, bf),
            cell: gate(wxg, whg, bg),
            output: gate(wxo, who, bo),
        };
        let mut tape = Tape::new();
        let ids = cell_ids(&mut tape, &cell);
        let x = 0.8f64;
        let input = tape.leaf(Tensor::matrix(1, 1, vec![x]).unwrap()).unwrap();
        let states = run_direction(&mut tape, &ids, input, 1, 1, false).unwrap();
        let h = tape.value(states[0]).as_slice()[0];

        let sigma = |t: f64| 1.0 / (1.0 + (-t).exp());
        let i = sigma(x * wxi + bi);
        let f = sigma(x * wxf + bf);
        let g = (x * wxg + bg).tanh();
        let o = sigma(x * wxo + bo);
        let c = f * 0.0 + i * g;
        let expected = o * c.tanh();
        assert!((h - expected).abs() < 1e-12, "{h} vs {expected}");
        let _ = (whi, whf, whg, who); // h_prev = 0 makes them inert here
    }

    #[test]
    fn output_shape_follows_sequence_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = NeuralParams::init(4, 6, 1, false, false, &mut rng);
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, &params).unwrap();
        let input = tape
            .leaf(Tensor::matrix(3, 4, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap())
            .unwrap();
        let out = run_stack(&mut tape, &ids.layers, 6, input, 3).unwrap();
        assert_eq!(out.step_rows.len(), 3);
        for row in &out.step_rows {
            assert_eq!(tape.value(*row).shape(), Shape::Matrix(1, 6));
        }
    }

    #[test]
    fn bidirectional_output_is_2h_and_swaps_under_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NeuralParams::init(3, 5, 1, true, false, &mut rng);
        let t = 4usize;
        let data: Vec<f64> = (0..t * 3).map(|i| (i as f64 / 7.0).sin()).collect();
        let input_fwd = Tensor::matrix(t, 3, data.clone()).unwrap();
        let reversed: Vec<f64> = (0..t)
            .rev()
            .flat_map(|r| input_fwd.row(r).to_vec())
            .collect();
        let input_rev = Tensor::matrix(t, 3, reversed).unwrap();

        // Forward run.
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, &params).unwrap();
        let input = tape.leaf(input_fwd).unwrap();
        let out = run_stack(&mut tape, &ids.layers, 5, input, t).unwrap();
        let rows: Vec<Vec<f64>> = out
            .step_rows
            .iter()
            .map(|&r| tape.value(r).as_slice().to_vec())
            .collect();
        assert_eq!(rows[0].len(), 10);

        // Reversed input with swapped direction parameters.
        let mut swapped = params.clone();
        let layer = &mut swapped.layers[0];
        let bwd = layer.bwd.take().unwrap();
        let fwd = std::mem::replace(&mut layer.fwd, bwd);
        layer.bwd = Some(fwd);
        let mut tape2 = Tape::new();
        let ids2 = ParamIds::insert(&mut tape2, &swapped).unwrap();
        let input2 = tape2.leaf(input_rev).unwrap();
        let out2 = run_stack(&mut tape2, &ids2.layers, 5, input2, t).unwrap();
        let rows2: Vec<Vec<f64>> = out2
            .step_rows
            .iter()
            .map(|&r| tape2.value(r).as_slice().to_vec())
            .collect();

        // Step t of the original equals step T-1-t of the swapped run with
        // its two halves exchanged.
        for step in 0..t {
            let original = &rows[step];
            let mirrored = &rows2[t - 1 - step];
            assert_eq!(&original[..5], &mirrored[5..]);
            assert_eq!(&original[5..], &mirrored[..5]);
        }
    }

    #[test]
    fn attention_uniform_over_identical_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = NeuralParams::init(2, 3, 1, false, true, &mut rng);
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, &params).unwrap();
        // Three identical hidden rows.
        let row = tape
            .leaf(Tensor::matrix(1, 3, vec![0.3, -0.4, 0.9]).unwrap())
            .unwrap();
        let (_, weights) = attention_pool(
            &mut tape,
            &[row, row, row],
            &[true, true, true],
            ids.attention.as_ref().unwrap(),
        )
        .unwrap();
        for &w in tape.value(weights).as_slice() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_singleton_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NeuralParams::init(2, 3, 1, false, true, &mut rng);
        let mut tape = Tape::new();
        let ids = ParamIds::insert(&mut tape, &params).unwrap();
        let row = tape
            .leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let (context, weights) =
            attention_pool(&mut tape, &[row], &[true], ids.attention.as_ref().unwrap()).unwrap();
        assert_eq!(tape.value(weights).as_slice(), &[1.0]);
        assert_eq!(tape.value(context).as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn attention_matches_hand_computation() {
        // 2 steps, H = 2, hand-set parameters.
        let w = [[0.5, -0.3], [0.2, 0.7]]; // row-major W
        let b = [0.1, -0.2];
        let v = [0.6, -0.9];
        let h0 = [1.0, 0.5];
        let h1 = [-0.4, 0.8];

        let att = AttentionParams {
            w: Tensor::matrix(2, 2, vec![w[0][0], w[0][1], w[1][0], w[1][1]]).unwrap(),
            b: Tensor::vector(b.to_vec()),
            v: Tensor::vector(v.to_vec()),
        };
        let mut tape = Tape::new();
        let ids = AttentionIds {
            w: tape.leaf(att.w.clone()).unwrap(),
            b: tape.leaf(att.b.clone()).unwrap(),
            v: tape.leaf(att.v.clone()).unwrap(),
        };
        let r0 = tape.leaf(Tensor::matrix(1, 2, h0.to_vec()).unwrap()).unwrap();
        let r1 = tape.leaf(Tensor::matrix(1, 2, h1.to_vec()).unwrap()).unwrap();
        let (context, weights) =
            attention_pool(&mut tape, &[r0, r1], &[true, true], &ids).unwrap();

        let score = |h: [f64; 2]| {
            let p0 = (h[0] * w[0][0] + h[1] * w[1][0] + b[0]).tanh();
            let p1 = (h[0] * w[0][1] + h[1] * w[1][1] + b[1]).tanh();
            v[0] * p0 + v[1] * p1
        };
        let (e0, e1) = (score(h0), score(h1));
        let max = e0.max(e1);
        let (x0, x1) = ((e0 - max).exp(), (e1 - max).exp());
        let (w0, w1) = (x0 / (x0 + x1), x1 / (x0 + x1));
        let got = tape.value(weights).as_slice();
        assert!((got[0] - w0).abs() < 1e-12);
        assert!((got[1] - w1).abs() < 1e-12);
        let ctx = tape.value(context).as_slice();
        assert!((ctx[0] - (w0 * h0[0] + w1 * h1[0])).abs() < 1e-12);
        assert!((ctx[1] - (w0 * h0[1] + w1 * h1[1])).abs() < 1e-12);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut tape = Tape::new();
        let head = HeadIds {
            w: tape.leaf(Tensor::zeros(Shape::Matrix(3, 2))).unwrap(),
            b: tape.leaf(Tensor::zeros(Shape::Vector(2))).unwrap(),
        };
        let pooled = tape
            .leaf(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let logits = classify(&mut tape, pooled, &head).unwrap();
        assert_eq!(tape.value(logits).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_like_head_passes_pooled_through() {
        let mut tape = Tape::new();
        let head = HeadIds {
            w: tape
                .leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
                .unwrap(),
            b: tape.leaf(Tensor::zeros(Shape::Vector(2))).unwrap(),
        };
        let pooled = tape
            .leaf(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap())
            .unwrap();
        let logits = classify(&mut tape, pooled, &head).unwrap();
        assert_eq!(tape.value(logits).as_slice(), &[1.0, 0.0]);
    }
}
