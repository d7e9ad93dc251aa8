//! Operation tape and reverse-mode gradient computation.
//!
//! A [`Tape`] owns every intermediate tensor of one forward computation.
//! Ops append nodes in execution order; [`Tape::backward`] walks the same
//! nodes in exact reverse, accumulating gradients into per-node slots.
//! Leaves that do not reach the loss keep a zero gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    finite_or_err, map_values, matmul_nt, matmul_tn, matmul_values, zip_values, Shape, Tensor,
};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    /// Matrix plus a vector broadcast over rows.
    AddBias(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Concat(ValueId, ValueId),
    Sigmoid(ValueId),
    Tanh(ValueId),
    Scale(ValueId, f64),
    Sum(ValueId),
    Reshape(ValueId),
    Row(ValueId, usize),
    StackRows(Vec<ValueId>),
    MaskedSoftmax(ValueId, Vec<bool>),
    /// Stored values are the per-element keep/(1-p) factors.
    Dropout(ValueId, Vec<f64>),
    /// Loss = logsumexp(logits) - logits[target].
    CrossEntropyLogits(ValueId, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`ValueId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given value (zeros if it never
    /// reached the loss).
    pub fn get(&self, id: ValueId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a recorded node.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<ValueId> {
        let value = finite_or_err(op_name, value)?;
        Ok(self.push(value, op))
    }

    /// Record an input or parameter leaf.
    pub fn leaf(&mut self, value: Tensor) -> Result<ValueId> {
        self.push_checked("leaf", value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = matmul_values(self.value(a), self.value(b))?;
        self.push_checked("matmul", v, Op::MatMul(a, b))
    }

    /// Elementwise addition; also accepts matrix + vector, broadcasting the
    /// vector over matrix rows (the one permitted broadcast).
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            (Shape::Matrix(_, n), Shape::Vector(nb)) if n == nb => {
                let mut out = va.clone();
                let bias = vb.as_slice().to_vec();
                for r in 0..out.rows() {
                    let cols = out.cols();
                    let row = &mut out.as_mut_slice()[r * cols..(r + 1) * cols];
                    for (x, &w) in row.iter_mut().zip(&bias) {
                        *x += w;
                    }
                }
                self.push_checked("add", out, Op::AddBias(a, b))
            }
            _ => {
                let v = zip_values("add", va, vb, |x, y| x + y)?;
                self.push_checked("add", v, Op::Add(a, b))
            }
        }
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = zip_values("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push_checked("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = zip_values("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push_checked("mul", v, Op::Mul(a, b))
    }

    /// Concatenate along the last axis: two vectors, or two matrices with
    /// equal row counts.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a), self.value(b));
        let v = match (va.shape(), vb.shape()) {
            (Shape::Vector(_), Shape::Vector(_)) => {
                let mut data = va.as_slice().to_vec();
                data.extend_from_slice(vb.as_slice());
                Tensor::vector(data)
            }
            (Shape::Matrix(ra, ca), Shape::Matrix(rb, cb)) if ra == rb => {
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for i in 0..ra {
                    data.extend_from_slice(va.row(i));
                    data.extend_from_slice(vb.row(i));
                }
                Tensor::matrix(ra, ca + cb, data)?
            }
            (sa, sb) => {
                return Err(Error::Shape(format!("concat of {sa} and {sb}")));
            }
        };
        self.push_checked("concat", v, Op::Concat(a, b))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId> {
        let v = map_values(self.value(a), sigmoid);
        self.push_checked("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId> {
        let v = map_values(self.value(a), f64::tanh);
        self.push_checked("tanh", v, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        let v = map_values(self.value(a), |x| c * x);
        self.push_checked("scale", v, Op::Scale(a, c))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: ValueId) -> Result<ValueId> {
        let v = Tensor::scalar(self.value(a).as_slice().iter().sum());
        self.push_checked("sum", v, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: ValueId, shape: Shape) -> Result<ValueId> {
        let va = self.value(a);
        if va.len() != shape.len() {
            return Err(Error::Shape(format!(
                "reshape {} to {shape}",
                va.shape()
            )));
        }
        let v = Tensor::new(shape, va.as_slice().to_vec())?;
        self.push_checked("reshape", v, Op::Reshape(a))
    }

    /// Row `i` of a matrix, as a 1xN matrix.
    pub fn row(&mut self, a: ValueId, i: usize) -> Result<ValueId> {
        let va = self.value(a);
        match va.shape() {
            Shape::Matrix(r, c) if i < r => {
                let v = Tensor::matrix(1, c, va.row(i).to_vec())?;
                self.push_checked("row", v, Op::Row(a, i))
            }
            s => Err(Error::Shape(format!("row {i} of {s}"))),
        }
    }

    /// Stack T single-row matrices into a TxN matrix.
    pub fn stack_rows(&mut self, rows: &[ValueId]) -> Result<ValueId> {
        if rows.is_empty() {
            return Err(Error::Usage("stack_rows of zero rows".into()));
        }
        let cols = match self.value(rows[0]).shape() {
            Shape::Matrix(1, c) => c,
            s => return Err(Error::Shape(format!("stack_rows expects 1xN rows, got {s}"))),
        };
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let v = self.value(r);
            if v.shape() != Shape::Matrix(1, cols) {
                return Err(Error::Shape(format!(
                    "stack_rows row has {} instead of [1x{cols}]",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.as_slice());
        }
        let v = Tensor::matrix(rows.len(), cols, data)?;
        self.push_checked("stack_rows", v, Op::StackRows(rows.to_vec()))
    }

    /// Softmax over the valid positions of a vector; masked positions get
    /// exactly zero probability.
    pub fn masked_softmax(&mut self, a: ValueId, mask: &[bool]) -> Result<ValueId> {
        let va = self.value(a);
        let n = match va.shape() {
            Shape::Vector(n) => n,
            s => return Err(Error::Shape(format!("masked_softmax expects a vector, got {s}"))),
        };
        if mask.len() != n {
            return Err(Error::Shape(format!(
                "mask of {} for vector of {n}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Usage("masked_softmax with all positions masked".into()));
        }
        let x = va.as_slice();
        let max = x
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; n];
        let mut denom = 0.0;
        for i in 0..n {
            if mask[i] {
                let e = (x[i] - max).exp();
                out[i] = e;
                denom += e;
            }
        }
        for v in &mut out {
            *v /= denom;
        }
        self.push_checked(
            "masked_softmax",
            Tensor::vector(out),
            Op::MaskedSoftmax(a, mask.to_vec()),
        )
    }

    /// Inverted dropout: kept activations are scaled by 1/(1-p) at train
    /// time; in evaluation mode the input value is returned unchanged.
    pub fn dropout(
        &mut self,
        a: ValueId,
        p: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ValueId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Usage(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let va = self.value(a);
        let data = va
            .as_slice()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let v = Tensor::new(va.shape(), data)?;
        self.push_checked("dropout", v, Op::Dropout(a, mask))
    }

    /// Cross-entropy of a 1-D logit vector against a target class index.
    pub fn cross_entropy_with_logits(&mut self, logits: ValueId, target: usize) -> Result<ValueId> {
        let v = self.value(logits);
        let n = match v.shape() {
            Shape::Vector(n) if n >= 2 => n,
            s => {
                return Err(Error::Shape(format!(
                    "cross_entropy_with_logits expects a logit vector of >=2, got {s}"
                )))
            }
        };
        if target >= n {
            return Err(Error::Usage(format!(
                "target class {target} out of range for {n} logits"
            )));
        }
        let z = v.as_slice();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let loss = Tensor::scalar(lse - z[target]);
        self.push_checked(
            "cross_entropy_with_logits",
            loss,
            Op::CrossEntropyLogits(logits, target),
        )
    }

    /// Reverse pass from a scalar loss. Returns one gradient slot per node;
    /// query the leaves you care about via [`Gradients::get`].
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage("backward from a non-scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate_inputs(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            grads,
        })
    }

    fn accumulate_inputs(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = matmul_nt(g, self.value(*b))?;
                let db = matmul_tn(self.value(*a), g)?;
                add_grad(grads, *a, da);
                add_grad(grads, *b, db);
            }
            Op::Add(a, b) => {
                add_grad(grads, *a, g.clone());
                add_grad(grads, *b, g.clone());
            }
            Op::AddBias(a, b) => {
                add_grad(grads, *a, g.clone());
                let cols = g.cols();
                let mut db = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (acc, &v) in db.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                add_grad(grads, *b, Tensor::vector(db));
            }
            Op::Sub(a, b) => {
                add_grad(grads, *a, g.clone());
                add_grad(grads, *b, map_values(g, |x| -x));
            }
            Op::Mul(a, b) => {
                let da = zip_values("mul-grad", g, self.value(*b), |x, y| x * y)?;
                let db = zip_values("mul-grad", g, self.value(*a), |x, y| x * y)?;
                add_grad(grads, *a, da);
                add_grad(grads, *b, db);
            }
            Op::Concat(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                match (va.shape(), vb.shape()) {
                    (Shape::Vector(na), Shape::Vector(nb)) => {
                        let gd = g.as_slice();
                        add_grad(grads, *a, Tensor::vector(gd[..na].to_vec()));
                        add_grad(grads, *b, Tensor::vector(gd[na..na + nb].to_vec()));
                    }
                    (Shape::Matrix(r, ca), Shape::Matrix(_, cb)) => {
                        let mut da = Vec::with_capacity(r * ca);
                        let mut db = Vec::with_capacity(r * cb);
                        for i in 0..r {
                            let row = g.row(i);
                            da.extend_from_slice(&row[..ca]);
                            db.extend_from_slice(&row[ca..ca + cb]);
                        }
                        add_grad(grads, *a, Tensor::matrix(r, ca, da)?);
                        add_grad(grads, *b, Tensor::matrix(r, cb, db)?);
                    }
                    _ => unreachable!("concat recorded with incompatible shapes"),
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let da = zip_values("sigmoid-grad", g, y, |gi, yi| gi * yi * (1.0 - yi))?;
                add_grad(grads, *a, da);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let da = zip_values("tanh-grad", g, y, |gi, yi| gi * (1.0 - yi * yi))?;
                add_grad(grads, *a, da);
            }
            Op::Scale(a, c) => {
                add_grad(grads, *a, map_values(g, |x| c * x));
            }
            Op::Sum(a) => {
                let gs = g.item()?;
                let va = self.value(*a);
                add_grad(grads, *a, map_values(va, |_| gs));
            }
            Op::Reshape(a) => {
                let va = self.value(*a);
                add_grad(
                    grads,
                    *a,
                    Tensor::new(va.shape(), g.as_slice().to_vec())?,
                );
            }
            Op::Row(a, i) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.shape());
                let c = va.cols();
                da.as_mut_slice()[i * c..(i + 1) * c].copy_from_slice(g.as_slice());
                add_grad(grads, *a, da);
            }
            Op::StackRows(rows) => {
                for (t, &r) in rows.iter().enumerate() {
                    let cols = g.cols();
                    add_grad(grads, r, Tensor::matrix(1, cols, g.row(t).to_vec())?);
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                // dL/dx_i = p_i * (g_i - sum_j p_j g_j) on valid positions.
                let p = node.value.as_slice();
                let gd = g.as_slice();
                let dot: f64 = p.iter().zip(gd).map(|(&pi, &gi)| pi * gi).sum();
                let da: Vec<f64> = (0..p.len())
                    .map(|i| if mask[i] { p[i] * (gd[i] - dot) } else { 0.0 })
                    .collect();
                add_grad(grads, *a, Tensor::vector(da));
            }
            Op::Dropout(a, mask) => {
                let da: Vec<f64> = g
                    .as_slice()
                    .iter()
                    .zip(mask)
                    .map(|(&gi, &mi)| gi * mi)
                    .collect();
                let va = self.value(*a);
                add_grad(grads, *a, Tensor::new(va.shape(), da)?);
            }
            Op::CrossEntropyLogits(a, target) => {
                let gs = g.item()?;
                let z = self.value(*a).as_slice();
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = z.iter().map(|&x| (x - max).exp()).sum();
                let da: Vec<f64> = z
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let soft = (x - max).exp() / denom;
                        gs * (soft - if i == *target { 1.0 } else { 0.0 })
                    })
                    .collect();
                add_grad(grads, *a, Tensor::vector(da));
            }
        }
        Ok(())
    }
}

fn add_grad(grads: &mut [Option<Tensor>], id: ValueId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(g) => {
            for (acc, &d) in g.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *acc += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
