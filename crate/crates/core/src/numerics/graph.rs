//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! the tape as shared, immutable snapshots; [`Graph::backward`] replays the
//! tape in reverse and returns gradients for the trainable ones only. A tape
//! is built per batch and dropped after the optimizer step.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ops::{check_distribution, gemm, gemm_product, softmax_slice};
use super::tensor::{check_finite, Tensor};
use super::NumericsError;

/// Stable parameter identifier, e.g. `layer0.attn.query.lora_a`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(String);

impl ParamId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ParamId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Gradient per trainable parameter, ordered by identifier.
pub type Gradients = BTreeMap<ParamId, Tensor>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { id: ParamId, trainable: bool },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    SoftmaxRows(Var),
    GatherRows { table: Var, rows: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GroupSum { x: Var, groups: Vec<Vec<usize>> },
    SoftCrossEntropy { logits: Var, target: Arc<Tensor> },
    Sum(Var),
    Mean(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation tape for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    has_trainable: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, NumericsError> {
        check_finite(op_name(&op), value.data())?;
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input data that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter snapshot. Registering the same id twice returns
    /// the existing node.
    pub fn param(&mut self, id: &ParamId, value: Arc<Tensor>, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(id) {
            return v;
        }
        self.has_trainable |= trainable;
        self.nodes.push(Node {
            value,
            op: Op::Param {
                id: id.clone(),
                trainable,
            },
            needs_grad: trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id.clone(), v);
        v
    }

    /// `op(a) · op(b)`; `ta`/`tb` transpose the stored matrices.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, NumericsError> {
        let out = gemm(self.value(a), ta, self.value(b), tb)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_t(a, false, b, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds `bias[c]` to every row of `x[r×c]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.value(x).dims2();
        if self.value(bias).len() != c {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                left: self.value(x).shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, bv) in data[i * c..(i + 1) * c].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        let ng = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddRow { x, bias }, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NumericsError> {
        let out = self.value(x).scale(s)?;
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
            .collect();
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NumericsError> {
        let (r, c) = self.value(x).dims2();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                left: self.value(x).shape().to_vec(),
                right: self.value(gamma).shape().to_vec(),
            });
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = self.value(x).row(i);
            let (mean, rstd) = row_stats(row, eps);
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, eps }, ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.value(x).dims2();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            softmax_slice(self.value(x).row(i), &mut data[i * c..(i + 1) * c]);
        }
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Selects rows of a matrix (embedding lookup, row picking).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let (r, c) = self.value(table).dims2();
        if rows.is_empty() {
            return Err(NumericsError::Empty("gather_rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: r });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![rows.len(), c], data);
        let ng = self.needs(table);
        self.push(
            out,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.value(x).dims2();
        if len == 0 || start + len > c {
            return Err(NumericsError::IndexOutOfRange {
                index: start + len,
                len: c,
            });
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::from_parts(vec![r, len], data);
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Empty("concat_cols"));
        }
        let r = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_cols",
                left: self.value(parts[0]).shape().to_vec(),
                right: parts.iter().map(|&p| self.value(p).rows()).collect(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts(vec![r, total], data);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Sums column groups of `x[r×c]` into `[r × groups.len()]`, adding the
    /// members of each group left to right in the listed order.
    pub fn group_sum(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var, NumericsError> {
        let (r, c) = self.value(x).dims2();
        if groups.is_empty() {
            return Err(NumericsError::Empty("group_sum"));
        }
        if let Some(&bad) = groups.iter().flatten().find(|&&j| j >= c) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: c });
        }
        let t = self.value(x);
        let g = groups.len();
        let mut data = vec![0.0; r * g];
        for i in 0..r {
            let row = t.row(i);
            for (gi, members) in groups.iter().enumerate() {
                let mut acc = 0.0;
                for &j in members {
                    acc += row[j];
                }
                data[i * g + gi] = acc;
            }
        }
        let out = Tensor::from_parts(vec![r, g], data);
        let ng = self.needs(x);
        self.push(
            out,
            Op::GroupSum {
                x,
                groups: groups.to_vec(),
            },
            ng,
        )
    }

    /// Mean over rows of the soft-target cross-entropy
    /// `−Σ_l target(l) · log softmax(logits)(l)`. Output has shape `[1]`.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: Arc<Tensor>) -> Result<Var, NumericsError> {
        let l = self.value(logits);
        if l.dims2() != target.dims2() {
            return Err(NumericsError::ShapeMismatch {
                op: "soft_cross_entropy",
                left: l.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let r = l.rows();
        let mut total = 0.0;
        for i in 0..r {
            check_distribution(target.row(i))?;
            total += super::ops::row_soft_ce(l.row(i), target.row(i));
        }
        let out = Tensor::from_parts(vec![1], vec![total / r as f64]);
        let ng = self.needs(logits);
        self.push(out, Op::SoftCrossEntropy { logits, target }, ng)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = Tensor::from_parts(vec![1], vec![self.value(x).sum()]);
        let ng = self.needs(x);
        self.push(out, Op::Sum(x), ng)
    }

    /// Mean of scalar nodes, shape `[1]`.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var, NumericsError> {
        if xs.is_empty() {
            return Err(NumericsError::Empty("mean"));
        }
        if let Some(&bad) = xs.iter().find(|&&x| self.value(x).len() != 1) {
            return Err(NumericsError::ShapeMismatch {
                op: "mean",
                left: vec![1],
                right: self.value(bad).shape().to_vec(),
            });
        }
        let total: f64 = xs.iter().map(|&x| self.value(x).item()).sum();
        let out = Tensor::from_parts(vec![1], vec![total / xs.len() as f64]);
        let ng = xs.iter().any(|&x| self.needs(x));
        self.push(out, Op::Mean(xs.to_vec()), ng)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns one entry per trainable parameter on the tape. A tape with no
    /// trainable parameters yields an empty map; a tape that has trainable
    /// parameters the loss does not depend on is an error.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NotScalar(self.value(loss).shape().to_vec()));
        }
        if !self.has_trainable {
            return Ok(Gradients::new());
        }
        if !self.needs(loss) {
            return Err(NumericsError::Disconnected);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(vec![1], vec![1.0]));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(&node.op, &node.value, &g, &mut grads);
            if matches!(node.op, Op::Param { .. }) {
                grads[i] = Some(g);
            }
        }

        let mut out = Gradients::new();
        for node_idx in self.params.values() {
            let node = &self.nodes[node_idx.0];
            if let Op::Param { id, trainable: true } = &node.op {
                let g = grads
                    .get_mut(node_idx.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                check_finite("backward", g.data())?;
                out.insert(id.clone(), g);
            }
        }
        Ok(out)
    }

    fn backward_node(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Param { .. } => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = if !ta {
                        gemm_product(g, false, vb, !tb)
                    } else {
                        gemm_product(vb, *tb, g, true)
                    };
                    accumulate(grads, *a, va.shape(), d.data());
                }
                if self.needs(*b) {
                    let d = if !tb {
                        gemm_product(va, !ta, g, false)
                    } else {
                        gemm_product(g, true, va, *ta)
                    };
                    accumulate(grads, *b, vb.shape(), d.data());
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        accumulate(grads, *v, g.shape(), g.data());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.data().iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, g.shape(), &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, g.shape(), &d);
                }
            }
            Op::AddRow { x, bias } => {
                if self.needs(*x) {
                    accumulate(grads, *x, g.shape(), g.data());
                }
                if self.needs(*bias) {
                    let (r, c) = g.dims2();
                    let mut d = vec![0.0; c];
                    for i in 0..r {
                        for (o, v) in d.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *bias, self.value(*bias).shape(), &d);
                }
            }
            Op::Scale(x, s) => {
                let d: Vec<f64> = g.data().iter().map(|v| v * s).collect();
                accumulate(grads, *x, g.shape(), &d);
            }
            Op::Gelu(x) => {
                let d: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| {
                        let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                accumulate(grads, *x, g.shape(), &d);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let (r, c) = xv.dims2();
                let mut dx = vec![0.0; r * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for i in 0..r {
                    let row = xv.row(i);
                    let gr = g.row(i);
                    let (mean, rstd) = row_stats(row, *eps);
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        xhat[j] = (row[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gam[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat[j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        dx[i * c + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, xv.shape(), &dx);
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, self.value(*gamma).shape(), &dgamma);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, self.value(*beta).shape(), &dbeta);
                }
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = out.dims2();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let y = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = y[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *x, out.shape(), &d);
            }
            Op::GatherRows { table, rows } => {
                let shape = self.value(*table).shape().to_vec();
                let c = self.value(*table).cols();
                let buf = grads[table.0].get_or_insert_with(|| Tensor::zeros(&shape));
                let data = buf.data_mut();
                for (k, &row) in rows.iter().enumerate() {
                    for (o, v) in data[row * c..(row + 1) * c].iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let shape = self.value(*x).shape().to_vec();
                let (r, c) = self.value(*x).dims2();
                let len = g.cols();
                let buf = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape));
                let data = buf.data_mut();
                for i in 0..r {
                    for (o, v) in data[i * c + start..i * c + start + len].iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).dims2();
                    if self.needs(p) {
                        let total = g.cols();
                        let mut d = Vec::with_capacity(r * c);
                        for i in 0..r {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                        }
                        accumulate(grads, p, self.value(p).shape(), &d);
                    }
                    offset += c;
                }
            }
            Op::GroupSum { x, groups } => {
                let (r, c) = self.value(*x).dims2();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for (gi, members) in groups.iter().enumerate() {
                        let gv = g.get(i, gi);
                        for &j in members {
                            d[i * c + j] += gv;
                        }
                    }
                }
                accumulate(grads, *x, self.value(*x).shape(), &d);
            }
            Op::SoftCrossEntropy { logits, target } => {
                let l = self.value(*logits);
                let (r, c) = l.dims2();
                let scale = g.item() / r as f64;
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    softmax_slice(l.row(i), &mut d[i * c..(i + 1) * c]);
                    for (o, t) in d[i * c..(i + 1) * c].iter_mut().zip(target.row(i)) {
                        *o = (*o - t) * scale;
                    }
                }
                accumulate(grads, *logits, l.shape(), &d);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                let d = vec![g.item(); self.value(*x).len()];
                accumulate(grads, *x, shape, &d);
            }
            Op::Mean(xs) => {
                let share = g.item() / xs.len() as f64;
                for &x in xs {
                    if self.needs(x) {
                        accumulate(grads, x, &[1], &[share]);
                    }
                }
            }
        }
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    (mean, 1.0 / (var + eps).sqrt())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], d: &[f64]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (o, x) in t.data_mut().iter_mut().zip(d) {
                *o += x;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), d.to_vec())),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param { .. } => "param",
        Op::MatMul { .. } => "matmul",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::AddRow { .. } => "add_row",
        Op::Scale(..) => "scale",
        Op::Gelu(_) => "gelu",
        Op::LayerNorm { .. } => "layer_norm",
        Op::SoftmaxRows(_) => "softmax_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols(_) => "concat_cols",
        Op::GroupSum { .. } => "group_sum",
        Op::SoftCrossEntropy { .. } => "soft_cross_entropy",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
    }
}
