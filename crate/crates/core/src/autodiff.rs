//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Forward values are computed eagerly when an op is recorded; the tape keeps
//! each node's parents so a single reverse sweep from a scalar loss produces
//! gradients for every node registered with [`Tape::param`].

use std::collections::HashMap;

use crate::error::{dim_err, DbaError, Result};
use crate::tensor::Tensor;

/// Epsilon inside the RMS normalizer: `x / sqrt(mean(x²) + RMS_EPS)`.
pub const RMS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    Matmul,
    Transpose,
    /// Elementwise sum; the right operand may be a `1×c` row broadcast over rows.
    Add,
    Scale(f64),
    /// Elementwise product.
    Mul,
    /// Sum of all entries into a 1×1.
    Sum,
    SoftmaxRows,
    Relu,
    /// `(x, gain)`: per-row RMS normalization with a `1×c` learnable gain.
    RmsNorm,
    /// Mean over rows: `m×c → 1×c`.
    RowMean,
    /// Mean negative log-likelihood of `targets[i]` under `softmax(logits[i])`.
    CrossEntropyLogits(Vec<usize>),
    SliceCols { start: usize, end: usize },
    ConcatCols,
}

impl OpKind {
    /// Parses a parameter-free op name.
    pub fn from_name(name: &str) -> Result<OpKind> {
        Ok(match name {
            "matmul" => OpKind::Matmul,
            "transpose" => OpKind::Transpose,
            "add" => OpKind::Add,
            "mul" => OpKind::Mul,
            "sum" => OpKind::Sum,
            "softmax_rows" => OpKind::SoftmaxRows,
            "relu" => OpKind::Relu,
            "rms_norm" => OpKind::RmsNorm,
            "row_mean" => OpKind::RowMean,
            "concat_cols" => OpKind::ConcatCols,
            other => return Err(DbaError::Graph(format!("unsupported op-kind {other:?}"))),
        })
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Leaf => Some(0),
            OpKind::Matmul | OpKind::Add | OpKind::Mul | OpKind::RmsNorm => Some(2),
            OpKind::ConcatCols => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub value: Tensor,
    pub op: OpKind,
    pub parents: Vec<NodeId>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    consumed: bool,
}

/// Gradients of the loss with respect to each parameter node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    /// Drops every node recorded after the first `len`, so a constant prefix
    /// (e.g. model weights) can be reused across forward passes.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.params.retain(|p| p.0 < len);
    }

    fn push(&mut self, value: Tensor, op: OpKind, parents: Vec<NodeId>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
        });
        id
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, OpKind::Leaf, Vec::new(), false)
    }

    /// Trainable input; `backward` reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push(value, OpKind::Leaf, Vec::new(), true);
        self.params.push(id);
        id
    }

    /// Records `kind` applied to `inputs`, computing the forward value eagerly.
    pub fn record(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(n) = kind.arity() {
            if n != inputs.len() {
                return Err(DbaError::Graph(format!(
                    "{kind:?} expects {n} inputs, got {}",
                    inputs.len()
                )));
            }
        }
        if kind == OpKind::Leaf {
            return Err(DbaError::Graph("leaves are created with leaf/param".into()));
        }
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(DbaError::Graph(format!("unknown node {}", bad.0)));
        }
        let value = self.forward(&kind, inputs)?;
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(value, kind, inputs.to_vec(), requires_grad))
    }

    fn forward(&self, kind: &OpKind, inputs: &[NodeId]) -> Result<Tensor> {
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        match kind {
            OpKind::Leaf => unreachable!("checked by record"),
            OpKind::Matmul => v(0).matmul(v(1)),
            OpKind::Transpose => Ok(v(0).transpose()),
            OpKind::Add => {
                let (a, b) = (v(0), v(1));
                if a.same_shape(b) {
                    a.add(b)
                } else if b.rows() == 1 && b.cols() == a.cols() {
                    let mut out = a.clone();
                    let c = a.cols();
                    for row in out.data_mut().chunks_mut(c) {
                        for (x, y) in row.iter_mut().zip(b.data()) {
                            *x += y;
                        }
                    }
                    Ok(out)
                } else {
                    Err(dim_err("add", a.shape(), b.shape()))
                }
            }
            OpKind::Scale(c) => Ok(v(0).scale(*c)),
            OpKind::Mul => v(0).hadamard(v(1)),
            OpKind::Sum => Ok(Tensor::scalar(v(0).sum())),
            OpKind::SoftmaxRows => Ok(v(0).softmax_rows()),
            OpKind::Relu => Ok(v(0).map(|x| x.max(0.0))),
            OpKind::RmsNorm => {
                let (x, gain) = (v(0), v(1));
                if gain.rows() != 1 || gain.cols() != x.cols() {
                    return Err(dim_err("rms_norm", x.shape(), gain.shape()));
                }
                let c = x.cols();
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(c) {
                    let inv = 1.0 / rms(row);
                    for (y, g) in row.iter_mut().zip(gain.data()) {
                        *y *= inv * g;
                    }
                }
                Ok(out)
            }
            OpKind::RowMean => {
                let x = v(0);
                let m = x.rows() as f64;
                let mut out = Tensor::zeros(1, x.cols());
                for i in 0..x.rows() {
                    for (o, xv) in out.data_mut().iter_mut().zip(x.row(i)) {
                        *o += xv / m;
                    }
                }
                Ok(out)
            }
            OpKind::CrossEntropyLogits(targets) => {
                let logits = v(0);
                check_targets(logits, targets)?;
                let nll: f64 = targets
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| -log_softmax_at(logits.row(i), t))
                    .sum();
                Ok(Tensor::scalar(nll / targets.len() as f64))
            }
            OpKind::SliceCols { start, end } => v(0).slice_cols(*start, *end),
            OpKind::ConcatCols => {
                let parts: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                Tensor::concat_cols(&parts)
            }
        }
    }

    /// Reverse sweep from a 1×1 loss. A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(DbaError::Contract("backward already ran on this tape".into()));
        }
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if loss_shape != [1, 1] {
            return Err(DbaError::Contract(format!(
                "loss must be 1x1, got {loss_shape:?}"
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if node.op == OpKind::Leaf {
                grads[idx] = Some(g);
                continue;
            }
            let contributions = self.adjoint(node, &g)?;
            for (parent, contrib) in node.parents.iter().zip(contributions) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut out = Gradients::default();
        for &p in &self.params {
            let g = grads
                .get_mut(p.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros_like(&self.nodes[p.0].value));
            out.grads.insert(p, g);
        }
        Ok(out)
    }

    /// Vector-Jacobian products of `node` for upstream gradient `g`, one per parent.
    fn adjoint(&self, node: &Node, g: &Tensor) -> Result<Vec<Tensor>> {
        let pv = |i: usize| &self.nodes[node.parents[i].0].value;
        Ok(match &node.op {
            OpKind::Leaf => Vec::new(),
            OpKind::Matmul => {
                let (a, b) = (pv(0), pv(1));
                vec![g.matmul(&b.transpose())?, a.transpose().matmul(g)?]
            }
            OpKind::Transpose => vec![g.transpose()],
            OpKind::Add => {
                let b = pv(1);
                let gb = if b.same_shape(g) {
                    g.clone()
                } else {
                    column_sums(g)
                };
                vec![g.clone(), gb]
            }
            OpKind::Scale(c) => vec![g.scale(*c)],
            OpKind::Mul => vec![g.hadamard(pv(1))?, g.hadamard(pv(0))?],
            OpKind::Sum => {
                let x = pv(0);
                vec![x.map(|_| g.item())]
            }
            OpKind::SoftmaxRows => {
                let y = &node.value;
                let c = y.cols();
                let mut out = g.clone();
                for (orow, yrow) in out.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = orow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (o, yv) in orow.iter_mut().zip(yrow) {
                        *o = yv * (*o - dot);
                    }
                }
                vec![out]
            }
            OpKind::Relu => {
                let x = pv(0);
                vec![g.zip_with(x, "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?]
            }
            OpKind::RmsNorm => {
                let (x, gain) = (pv(0), pv(1));
                let c = x.cols();
                let mut gx = Tensor::zeros_like(x);
                let mut ggain = Tensor::zeros_like(gain);
                for i in 0..x.rows() {
                    let xr = x.row(i);
                    let gr = g.row(i);
                    let r = rms(xr);
                    // gxhat = g * gain; gx = (gxhat - xhat * mean(gxhat * xhat)) / r
                    let mut mean_dot = 0.0;
                    for j in 0..c {
                        let xhat = xr[j] / r;
                        ggain.data_mut()[j] += gr[j] * xhat;
                        mean_dot += gr[j] * gain.data()[j] * xhat;
                    }
                    mean_dot /= c as f64;
                    for j in 0..c {
                        let xhat = xr[j] / r;
                        gx.data_mut()[i * c + j] = (gr[j] * gain.data()[j] - xhat * mean_dot) / r;
                    }
                }
                vec![gx, ggain]
            }
            OpKind::RowMean => {
                let x = pv(0);
                let m = x.rows() as f64;
                let c = x.cols();
                vec![Tensor::from_fn(x.rows(), c, |_, j| g.data()[j] / m)]
            }
            OpKind::CrossEntropyLogits(targets) => {
                let logits = pv(0);
                let m = targets.len() as f64;
                let mut out = logits.softmax_rows();
                let c = out.cols();
                for (i, &t) in targets.iter().enumerate() {
                    out.data_mut()[i * c + t] -= 1.0;
                }
                vec![out.scale(g.item() / m)]
            }
            OpKind::SliceCols { start, end } => {
                let x = pv(0);
                let c = x.cols();
                let w = end - start;
                let mut out = Tensor::zeros_like(x);
                for i in 0..x.rows() {
                    out.data_mut()[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                vec![out]
            }
            OpKind::ConcatCols => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.parents.len());
                for i in 0..node.parents.len() {
                    let w = pv(i).cols();
                    out.push(g.slice_cols(offset, offset + w)?);
                    offset += w;
                }
                out
            }
        })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::Matmul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Transpose, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(OpKind::Scale(c), &[a])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(OpKind::Mul, &[a, b])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::SoftmaxRows, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::Relu, &[a])
    }

    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        self.record(OpKind::RmsNorm, &[x, gain])
    }

    pub fn row_mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(OpKind::RowMean, &[a])
    }

    pub fn cross_entropy_logits(&mut self, logits: NodeId, targets: Vec<usize>) -> Result<NodeId> {
        self.record(OpKind::CrossEntropyLogits(targets), &[logits])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.record(OpKind::SliceCols { start, end }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.record(OpKind::ConcatCols, parts)
    }

    /// `sum(x ⊙ x) / 2`
    pub fn half_sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.mul(x, x)?;
        let s = self.sum(sq)?;
        self.scale(s, 0.5)
    }
}

fn rms(row: &[f64]) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64 + RMS_EPS).sqrt()
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

fn check_targets(logits: &Tensor, targets: &[usize]) -> Result<()> {
    if targets.len() != logits.rows() || targets.iter().any(|&t| t >= logits.cols()) {
        return Err(dim_err("cross_entropy_logits", logits.shape(), &[targets.len()]));
    }
    Ok(())
}

/// Central-difference gradient `(f(x + h e_ij) − f(x − h e_ij)) / 2h` per entry.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    finite_diff_grad_by_delta(|up, down| f(up) - f(down), x, h)
}

/// Central differences where `delta(up, down)` returns `f(up) − f(down)`
/// directly, so callers can form the difference without cancellation.
pub fn finite_diff_grad_by_delta(delta: impl Fn(&Tensor, &Tensor) -> f64, x: &Tensor, h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(DbaError::Parameter(format!("step must be positive, got {h}")));
    }
    let mut up = x.clone();
    let mut down = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let orig = x.data()[i];
        up.data_mut()[i] = orig + h;
        down.data_mut()[i] = orig - h;
        grad.data_mut()[i] = delta(&up, &down) / (2.0 * h);
        up.data_mut()[i] = orig;
        down.data_mut()[i] = orig;
    }
    Ok(grad)
}

/// Largest per-entry `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_discrepancy(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert!(a.same_shape(b), "discrepancy shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
