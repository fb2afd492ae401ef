//! Reverse-mode automatic differentiation on a per-run tape.
//!
//! The tape is rebuilt for every forward pass (define-by-run). Each
//! operation appends a node holding its output values, so gradients are
//! retrievable at any intermediate tensor after [`Tape::backward`] — the
//! explanation pipeline reads them at the feature-map layer, not just at
//! leaves. Everything is dense `f64`.

mod grad_check;

pub use grad_check::grad_check;

use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A value on the tape: dense storage plus the operation that produced it.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    op: Op,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    /// Row-broadcast bias add: every row of `x` gets `bias`.
    AddBias {
        x: TensorId,
        bias: TensorId,
    },
    Relu {
        x: TensorId,
    },
    /// Per-column max over the point axis; gradient flows to the recorded
    /// argmax row only (lowest index on ties).
    MaxPoolPoints {
        x: TensorId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: TensorId,
    },
    SoftmaxCrossEntropy {
        logits: TensorId,
        label: usize,
        softmax: Vec<f64>,
    },
    Sum {
        x: TensorId,
    },
    Index {
        x: TensorId,
        at: usize,
    },
    GatherRows {
        x: TensorId,
        rows: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<TensorId>,
        part_rows: Vec<usize>,
    },
}

/// Gradients produced by one backward pass, indexed by [`TensorId`].
#[derive(Debug)]
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Ordered operation record. Inputs always precede their consumers, so a
/// single reverse sweep visits every node exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
}

/// Interprets a shape as a matrix: `[m, k]` stays as is, `[k]` is a row
/// vector `1 x k`.
fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [k] => Some((1, *k)),
        [m, k] => Some((*m, *k)),
        _ => None,
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

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Tensor {
            shape,
            values,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "leaf shape {:?} does not match {} values",
            shape,
            values.len()
        );
        self.push(shape.to_vec(), values, requires_grad, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64, requires_grad: bool) -> TensorId {
        self.push(vec![], vec![value], requires_grad, Op::Leaf)
    }

    /// Matrix product. `a` may be 1-D (treated as a row vector, yielding a
    /// 1-D result); `b` must be 2-D.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (a_shape, b_shape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a_shape.clone(),
            rhs: b_shape.clone(),
        };
        let (m, k) = as_matrix(&a_shape).ok_or_else(mismatch)?;
        let (bk, p) = match b_shape.as_slice() {
            [bk, p] => (*bk, *p),
            _ => return Err(mismatch()),
        };
        if k != bk {
            return Err(mismatch());
        }
        let values = matmul_nn(self.values(a), self.values(b), m, k, p);
        let out_shape = if a_shape.len() == 1 { vec![p] } else { vec![m, p] };
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out_shape, values, rg, Op::Matmul { a, b }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(self.shape(a).to_vec(), values, rg, Op::Add { a, b }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(self.shape(a).to_vec(), values, rg, Op::Mul { a, b }))
    }

    /// Adds a length-`k` bias to every row of `x` (`[m, k]` or `[k]`).
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let x_shape = self.shape(x).to_vec();
        let b_shape = self.shape(bias).to_vec();
        let mismatch = || Error::ShapeMismatch {
            op: "add_bias",
            lhs: x_shape.clone(),
            rhs: b_shape.clone(),
        };
        let (_, k) = as_matrix(&x_shape).ok_or_else(mismatch)?;
        if b_shape.as_slice() != [k] {
            return Err(mismatch());
        }
        let bias_values = self.values(bias).to_vec();
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias_values[i % k])
            .collect();
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(x_shape, values, rg, Op::AddBias { x, bias }))
    }

    /// Elementwise `max(x, 0)`. The subgradient at 0 is 0.
    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let values: Vec<f64> = self.values(x).iter().map(|v| v.max(0.0)).collect();
        let rg = self.requires(x);
        self.push(self.shape(x).to_vec(), values, rg, Op::Relu { x })
    }

    /// Per-feature maximum over the point axis of an `[n, k]` tensor.
    /// Returns the pooled `[k]` tensor and the winning row per column
    /// (lowest index on ties). Backward routes gradient to those rows only.
    pub fn max_pool_points(&mut self, x: TensorId) -> Result<(TensorId, Vec<usize>)> {
        let shape = self.shape(x).to_vec();
        let (n, k) = match shape.as_slice() {
            [n, k] => (*n, *k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "max_pool_points",
                    lhs: shape,
                    rhs: vec![],
                })
            }
        };
        if n == 0 {
            return Err(Error::Precondition(
                "max_pool_points needs at least one point".into(),
            ));
        }
        let data = self.values(x);
        let mut pooled = vec![f64::NEG_INFINITY; k];
        let mut argmax = vec![0usize; k];
        for row in 0..n {
            for col in 0..k {
                let v = data[row * k + col];
                if v > pooled[col] {
                    pooled[col] = v;
                    argmax[col] = row;
                }
            }
        }
        let rg = self.requires(x);
        let id = self.push(
            vec![k],
            pooled,
            rg,
            Op::MaxPoolPoints {
                x,
                argmax: argmax.clone(),
            },
        );
        Ok((id, argmax))
    }

    /// Column means of an `[n, k]` tensor.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let (n, k) = match shape.as_slice() {
            [n, k] => (*n, *k),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "global_avg_pool",
                    lhs: shape,
                    rhs: vec![],
                })
            }
        };
        if n == 0 {
            return Err(Error::Precondition(
                "global_avg_pool needs at least one point".into(),
            ));
        }
        let data = self.values(x);
        let mut means = vec![0.0; k];
        for row in 0..n {
            for col in 0..k {
                means[col] += data[row * k + col];
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let rg = self.requires(x);
        Ok(self.push(vec![k], means, rg, Op::GlobalAvgPool { x }))
    }

    /// Cross-entropy of softmax(logits) against a class index, in the
    /// overflow-safe log-sum-exp form. Output is a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, label: usize) -> Result<TensorId> {
        let shape = self.shape(logits).to_vec();
        let c = match shape.as_slice() {
            [c] => *c,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "softmax_cross_entropy",
                    lhs: shape,
                    rhs: vec![],
                })
            }
        };
        if label >= c {
            return Err(Error::Index(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let data = self.values(logits);
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = data.iter().map(|v| (v - max).exp()).sum();
        let loss = max + sum_exp.ln() - data[label];
        let softmax: Vec<f64> = data.iter().map(|v| (v - max).exp() / sum_exp).collect();
        let rg = self.requires(logits);
        Ok(self.push(
            vec![],
            vec![loss],
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                softmax,
            },
        ))
    }

    /// Sum of all elements; scalar output.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.values(x).iter().sum();
        let rg = self.requires(x);
        self.push(vec![], vec![total], rg, Op::Sum { x })
    }

    /// Selects one element by flat index; scalar output.
    pub fn index(&mut self, x: TensorId, at: usize) -> Result<TensorId> {
        let n = self.tensor(x).numel();
        if at >= n {
            return Err(Error::Index(format!(
                "index {at} out of range for tensor of {n} elements"
            )));
        }
        let value = self.values(x)[at];
        let rg = self.requires(x);
        Ok(self.push(vec![], vec![value], rg, Op::Index { x, at }))
    }

    /// Selects rows of an `[n, d]` tensor. Repeated indices are allowed;
    /// backward scatter-adds into the source rows.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let (n, d) = match shape.as_slice() {
            [n, d] => (*n, *d),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "gather_rows",
                    lhs: shape,
                    rhs: vec![],
                })
            }
        };
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index(format!("row {bad} out of range for {n} rows")));
        }
        let data = self.values(x);
        let mut values = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            values.extend_from_slice(&data[r * d..(r + 1) * d]);
        }
        let rg = self.requires(x);
        Ok(self.push(
            vec![rows.len(), d],
            values,
            rg,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Stacks parts into a row-major matrix. A `[d]` part contributes one
    /// row, an `[r, d]` part contributes `r` rows; widths must agree.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Precondition("concat_rows needs at least one part".into()));
        }
        let width = match self.shape(parts[0]) {
            [d] => *d,
            [_, d] => *d,
            other => {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        let mut part_rows = Vec::with_capacity(parts.len());
        let mut values = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (rows, d) = match self.shape(p) {
                [d] => (1, *d),
                [r, d] => (*r, *d),
                other => {
                    return Err(Error::ShapeMismatch {
                        op: "concat_rows",
                        lhs: other.to_vec(),
                        rhs: vec![width],
                    })
                }
            };
            if d != width {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(p).to_vec(),
                    rhs: vec![width],
                });
            }
            part_rows.push(rows);
            values.extend_from_slice(self.values(p));
            rg |= self.requires(p);
        }
        let total_rows: usize = part_rows.iter().sum();
        Ok(self.push(
            vec![total_rows, width],
            values,
            rg,
            Op::ConcatRows {
                parts: parts.to_vec(),
                part_rows,
            },
        ))
    }

    /// Reverse sweep from a scalar output. The tape itself is read-only, so
    /// repeating the call yields identical gradients.
    pub fn backward(&self, output: TensorId) -> Result<GradStore> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "backward seed {} is not on the tape",
                output.0
            )));
        }
        if self.tensor(output).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar seed, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            // Inputs always precede their consumer, so the split borrows the
            // node's grad and its inputs' slots disjointly.
            let (inputs, rest) = grads.split_at_mut(id);
            let grad = match rest[0].as_ref() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, grad, inputs);
        }

        Ok(GradStore { grads })
    }

    fn propagate(&self, id: usize, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut accum = |target: TensorId, contribution: &dyn Fn(&mut [f64])| {
            if !self.requires(target) {
                return;
            }
            let len = self.nodes[target.0].values.len();
            let slot = grads[target.0].get_or_insert_with(|| vec![0.0; len]);
            contribution(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = as_matrix(&self.nodes[a.0].shape).expect("checked at record time");
                let p = *self.nodes[b.0].shape.last().expect("2-D rhs");
                let a_vals = &self.nodes[a.0].values;
                let b_vals = &self.nodes[b.0].values;
                accum(*a, &|slot| add_matmul_nt(slot, grad, b_vals, m, p, k));
                accum(*b, &|slot| add_matmul_tn(slot, a_vals, grad, m, k, p));
            }
            Op::Add { a, b } => {
                accum(*a, &|slot| add_assign(slot, grad));
                accum(*b, &|slot| add_assign(slot, grad));
            }
            Op::Mul { a, b } => {
                let a_vals = &self.nodes[a.0].values;
                let b_vals = &self.nodes[b.0].values;
                accum(*a, &|slot| {
                    for ((s, g), y) in slot.iter_mut().zip(grad).zip(b_vals) {
                        *s += g * y;
                    }
                });
                accum(*b, &|slot| {
                    for ((s, g), x) in slot.iter_mut().zip(grad).zip(a_vals) {
                        *s += g * x;
                    }
                });
            }
            Op::AddBias { x, bias } => {
                let k = self.nodes[bias.0].values.len();
                accum(*x, &|slot| add_assign(slot, grad));
                accum(*bias, &|slot| {
                    for (i, g) in grad.iter().enumerate() {
                        slot[i % k] += g;
                    }
                });
            }
            Op::Relu { x } => {
                let x_vals = &self.nodes[x.0].values;
                accum(*x, &|slot| {
                    for ((s, g), v) in slot.iter_mut().zip(grad).zip(x_vals) {
                        if *v > 0.0 {
                            *s += g;
                        }
                    }
                });
            }
            Op::MaxPoolPoints { x, argmax } => {
                let k = argmax.len();
                accum(*x, &|slot| {
                    for (col, &row) in argmax.iter().enumerate() {
                        slot[row * k + col] += grad[col];
                    }
                });
            }
            Op::GlobalAvgPool { x } => {
                let shape = &self.nodes[x.0].shape;
                let (n, k) = (shape[0], shape[1]);
                let scale = 1.0 / n as f64;
                accum(*x, &|slot| {
                    for row in 0..n {
                        for col in 0..k {
                            slot[row * k + col] += grad[col] * scale;
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                softmax,
            } => {
                let g = grad[0];
                accum(*logits, &|slot| {
                    for (i, (s, p)) in slot.iter_mut().zip(softmax).enumerate() {
                        let one_hot = if i == *label { 1.0 } else { 0.0 };
                        *s += g * (p - one_hot);
                    }
                });
            }
            Op::Sum { x } => {
                let g = grad[0];
                accum(*x, &|slot| {
                    for s in slot.iter_mut() {
                        *s += g;
                    }
                });
            }
            Op::Index { x, at } => {
                let g = grad[0];
                accum(*x, &|slot| slot[*at] += g);
            }
            Op::GatherRows { x, rows } => {
                let d = *self.nodes[x.0].shape.last().expect("2-D input");
                accum(*x, &|slot| {
                    for (out_row, &src_row) in rows.iter().enumerate() {
                        for col in 0..d {
                            slot[src_row * d + col] += grad[out_row * d + col];
                        }
                    }
                });
            }
            Op::ConcatRows { parts, part_rows } => {
                let width = *node.shape.last().expect("2-D output");
                let mut offset = 0;
                for (&part, &rows) in parts.iter().zip(part_rows) {
                    let span = rows * width;
                    let piece = &grad[offset..offset + span];
                    accum(part, &|slot| add_assign(slot, piece));
                    offset += span;
                }
            }
        }
    }
}

fn add_assign(slot: &mut [f64], grad: &[f64]) {
    for (s, g) in slot.iter_mut().zip(grad) {
        *s += g;
    }
}

/// `a[m x k] * b[k x p]`, row-major.
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for q in 0..k {
            let a_iq = a[i * k + q];
            if a_iq == 0.0 {
                continue;
            }
            let b_row = &b[q * p..(q + 1) * p];
            let out_row = &mut out[i * p..(i + 1) * p];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += a_iq * bv;
            }
        }
    }
    out
}

/// `slot[m x k] += g[m x p] * b^T` where `b` is `[k x p]`.
fn add_matmul_nt(slot: &mut [f64], g: &[f64], b: &[f64], m: usize, p: usize, k: usize) {
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        let slot_row = &mut slot[i * k..(i + 1) * k];
        for q in 0..k {
            let b_row = &b[q * p..(q + 1) * p];
            let mut acc = 0.0;
            for (gv, bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            slot_row[q] += acc;
        }
    }
}

/// `slot[k x p] += a^T * g` where `a` is `[m x k]` and `g` is `[m x p]`.
fn add_matmul_tn(slot: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let g_row = &g[i * p..(i + 1) * p];
        for q in 0..k {
            let a_iq = a[i * k + q];
            if a_iq == 0.0 {
                continue;
            }
            let slot_row = &mut slot[q * p..(q + 1) * p];
            for (s, gv) in slot_row.iter_mut().zip(g_row) {
                *s += a_iq * gv;
            }
        }
    }
}

/// Softmax of a logit vector without tape bookkeeping.
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
