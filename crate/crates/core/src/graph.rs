//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward op on an append-only tape; nodes are
//! created in topological order, so [`Graph::backward`] is a single reverse
//! sweep. Graphs are built fresh for each training or guidance step and
//! dropped afterwards — there is no implicit global tape and no higher-order
//! differentiation.
//!
//! Gradients w.r.t. *inputs* are first-class: any leaf created with
//! [`Graph::input`] receives a gradient, which is how classifier guidance
//! obtains ∇ of a loss with respect to a candidate sample.

use crate::error::{Error, Result};
use crate::tensor::{
    log_sum_exp, matmul_raw, relu_raw, sigmoid_raw, silu_raw, softmax_lane, Tensor,
};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Elementwise add, or row-broadcast bias add when rhs is 1-D.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Var, Var),
    Relu(Var),
    Silu(Var),
    Softmax(Var, usize),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        reduction: Reduction,
    },
    Mse(Var, Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
}

struct Node {
    tensor: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut tensor: Tensor, op: Op, requires_grad: bool) -> Var {
        tensor.requires_grad = requires_grad;
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    /// Leaf that participates in differentiation.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    /// Gradient buffer of a node, populated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    fn grad_mut(&mut self, v: Var) -> &mut [f64] {
        self.nodes[v.0]
            .tensor
            .grad
            .as_mut()
            .expect("grads initialized by backward")
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    // ---- forward ops -----------------------------------------------------

    /// Matrix product. Supports [m,k]·[k,n] -> [m,n], [m,k]·[k] -> [m]
    /// and [k]·[k,n] -> [n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n, out_shape) = match (self.shape(a), self.shape(b)) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n, vec![*m, *n]),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1, vec![*m]),
            ([k], [k2, n]) if k == k2 => (1, *k, *n, vec![*n]),
            _ => return Err(self.dim_err("matmul", a, b)),
        };
        let values = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(out_shape, values)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise add; when `b` is 1-D and `a` is 2-D with matching row
    /// width, `b` is broadcast across rows (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = if self.shape(a) == self.shape(b) {
            self.tensor(a).add(self.tensor(b))?
        } else if self.shape(b).len() == 1 && self.tensor(a).row_len() == self.shape(b)[0] {
            let w = self.shape(b)[0];
            let bv = self.value(b);
            let mut values = self.value(a).to_vec();
            for (i, v) in values.iter_mut().enumerate() {
                *v += bv[i % w];
            }
            Tensor::new(self.shape(a).to_vec(), values)?
        } else {
            return Err(self.dim_err("add", a, b));
        };
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("sub", a, b));
        }
        let out = self.tensor(a).sub(self.tensor(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("mul", a, b));
        }
        let out = self.tensor(a).zip(self.tensor(b), "mul", |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.tensor(a).scale(c);
        let rg = self.requires(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Concatenate along the last axis. Operands must have the same rank
    /// (both 1-D or both 2-D with equal row counts).
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        let out = match (ta.shape(), tb.shape()) {
            ([wa], [wb]) => Tensor::new(vec![wa + wb], {
                let mut v = ta.values().to_vec();
                v.extend_from_slice(tb.values());
                v
            })?,
            ([r, wa], [r2, wb]) if r == r2 => {
                let mut v = Vec::with_capacity(r * (wa + wb));
                for i in 0..*r {
                    v.extend_from_slice(ta.row(i));
                    v.extend_from_slice(tb.row(i));
                }
                Tensor::new(vec![*r, wa + wb], v)?
            }
            _ => return Err(self.dim_err("concat", a, b)),
        };
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.tensor(a).map(relu_raw);
        let rg = self.requires(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.tensor(a).map(silu_raw);
        let rg = self.requires(a);
        self.push(out, Op::Silu(a), rg)
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let src = self.value(a);
        let mut values = vec![0.0; src.len()];
        let mut lane = vec![0.0; shape[axis]];
        let mut out = vec![0.0; shape[axis]];
        for (start, stride) in lanes(&shape, axis) {
            for (i, l) in lane.iter_mut().enumerate() {
                *l = src[start + i * stride];
            }
            softmax_lane(&lane, &mut out);
            for (i, &o) in out.iter().enumerate() {
                values[start + i * stride] = o;
            }
        }
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, values)?, Op::Softmax(a, axis), rg))
    }

    /// Mean cross-entropy between logits and integer class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.cross_entropy_with(logits, targets, Reduction::Mean)
    }

    pub fn cross_entropy_with(
        &mut self,
        logits: Var,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let t = self.tensor(logits);
        let (rows, classes) = match t.shape() {
            [c] => (1usize, *c),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Dimension {
                    op: "cross_entropy",
                    lhs: t.shape().to_vec(),
                    rhs: vec![targets.len()],
                })
            }
        };
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= classes) {
            return Err(Error::contract(format!(
                "cross_entropy: target class {bad} out of range (num classes {classes})"
            )));
        }
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            let lane = &t.values()[r * classes..(r + 1) * classes];
            total += log_sum_exp(lane) - lane[target];
        }
        if reduction == Reduction::Mean {
            total /= rows as f64;
        }
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                reduction,
            },
            rg,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err("mse", a, b));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.len() as f64;
        let total: f64 = ta.iter().zip(tb).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::scalar(total / n), Op::Mse(a, b), rg))
    }

    /// Row gather: table[indices[i], :] stacked into a 2-D output.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.tensor(table);
        let (rows, width) = match t.shape() {
            [r, w] => (*r, *w),
            _ => {
                return Err(Error::Dimension {
                    op: "embedding",
                    lhs: t.shape().to_vec(),
                    rhs: vec![indices.len()],
                })
            }
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "embedding: index {bad} out of range (table rows {rows})"
            )));
        }
        let mut values = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            values.extend_from_slice(t.row(i));
        }
        let rg = self.requires(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), width], values)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates `grad` on every node that
    /// requires gradients (zeros where the loss does not depend on them).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward: empty tape"));
        }
        if self.tensor(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            if node.tensor.requires_grad {
                node.tensor.grad = Some(vec![0.0; node.tensor.len()]);
            }
        }
        if !self.nodes[loss.0].tensor.requires_grad {
            // Loss is constant w.r.t. every input; all grads stay zero.
            return Ok(());
        }
        self.grad_mut(loss)[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            let g_out = self.nodes[idx].tensor.grad.clone().unwrap_or_default();
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    self.bw_matmul(a, b, &g_out);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        for (ga, &go) in self.grad_mut(a).iter_mut().zip(&g_out) {
                            *ga += go;
                        }
                    }
                    if self.requires(b) {
                        let w = self.tensor(b).len();
                        let acc = self.grad_mut(b);
                        if acc.len() == g_out.len() {
                            for (gb, &go) in acc.iter_mut().zip(&g_out) {
                                *gb += go;
                            }
                        } else {
                            for (i, &go) in g_out.iter().enumerate() {
                                acc[i % w] += go;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        for (ga, &go) in self.grad_mut(a).iter_mut().zip(&g_out) {
                            *ga += go;
                        }
                    }
                    if self.requires(b) {
                        for (gb, &go) in self.grad_mut(b).iter_mut().zip(&g_out) {
                            *gb -= go;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        let bv = self.tensor(b).values().to_vec();
                        for ((ga, &go), &y) in self.grad_mut(a).iter_mut().zip(&g_out).zip(&bv) {
                            *ga += go * y;
                        }
                    }
                    if self.requires(b) {
                        let av = self.tensor(a).values().to_vec();
                        for ((gb, &go), &x) in self.grad_mut(b).iter_mut().zip(&g_out).zip(&av) {
                            *gb += go * x;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    if self.requires(a) {
                        for (ga, &go) in self.grad_mut(a).iter_mut().zip(&g_out) {
                            *ga += c * go;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let wa = self.tensor(a).row_len();
                    let wb = self.tensor(b).row_len();
                    let rows = self.nodes[idx].tensor.rows();
                    if self.requires(a) {
                        let acc = self.grad_mut(a);
                        for r in 0..rows {
                            for j in 0..wa {
                                acc[r * wa + j] += g_out[r * (wa + wb) + j];
                            }
                        }
                    }
                    if self.requires(b) {
                        let acc = self.grad_mut(b);
                        for r in 0..rows {
                            for j in 0..wb {
                                acc[r * wb + j] += g_out[r * (wa + wb) + wa + j];
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    if self.requires(a) {
                        let av = self.tensor(a).values().to_vec();
                        for ((ga, &go), &x) in self.grad_mut(a).iter_mut().zip(&g_out).zip(&av) {
                            if x > 0.0 {
                                *ga += go;
                            }
                        }
                    }
                }
                Op::Silu(a) => {
                    let a = *a;
                    if self.requires(a) {
                        let av = self.tensor(a).values().to_vec();
                        for ((ga, &go), &x) in self.grad_mut(a).iter_mut().zip(&g_out).zip(&av) {
                            let s = sigmoid_raw(x);
                            *ga += go * (s * (1.0 + x * (1.0 - s)));
                        }
                    }
                }
                Op::Softmax(a, axis) => {
                    let (a, axis) = (*a, *axis);
                    if self.requires(a) {
                        let shape = self.nodes[idx].tensor.shape().to_vec();
                        let y = self.nodes[idx].tensor.values().to_vec();
                        let acc = self.grad_mut(a);
                        for (start, stride) in lanes(&shape, axis) {
                            let mut dot = 0.0;
                            for i in 0..shape[axis] {
                                let p = start + i * stride;
                                dot += g_out[p] * y[p];
                            }
                            for i in 0..shape[axis] {
                                let p = start + i * stride;
                                acc[p] += y[p] * (g_out[p] - dot);
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    reduction,
                } => {
                    let logits = *logits;
                    let targets = targets.clone();
                    let reduction = *reduction;
                    if self.requires(logits) {
                        let t = self.tensor(logits);
                        let classes = t.row_len();
                        let rows = targets.len();
                        let mut probs = vec![0.0; t.len()];
                        let mut lane = vec![0.0; classes];
                        for r in 0..rows {
                            softmax_lane(t.row(r), &mut lane);
                            probs[r * classes..(r + 1) * classes].copy_from_slice(&lane);
                        }
                        let w = match reduction {
                            Reduction::Mean => 1.0 / rows as f64,
                            Reduction::Sum => 1.0,
                        };
                        let seed = g_out[0];
                        let acc = self.grad_mut(logits);
                        for (r, &target) in targets.iter().enumerate() {
                            for c in 0..classes {
                                let onehot = if c == target { 1.0 } else { 0.0 };
                                acc[r * classes + c] += seed * w * (probs[r * classes + c] - onehot);
                            }
                        }
                    }
                }
                Op::Mse(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.tensor(a).values().to_vec();
                    let bv = self.tensor(b).values().to_vec();
                    let n = av.len() as f64;
                    let seed = g_out[0];
                    if self.requires(a) {
                        let acc = self.grad_mut(a);
                        for (i, ga) in acc.iter_mut().enumerate() {
                            *ga += seed * 2.0 * (av[i] - bv[i]) / n;
                        }
                    }
                    if self.requires(b) {
                        let acc = self.grad_mut(b);
                        for (i, gb) in acc.iter_mut().enumerate() {
                            *gb -= seed * 2.0 * (av[i] - bv[i]) / n;
                        }
                    }
                }
                Op::Embedding { table, indices } => {
                    let table = *table;
                    let indices = indices.clone();
                    if self.requires(table) {
                        let width = self.tensor(table).row_len();
                        let acc = self.grad_mut(table);
                        for (r, &row) in indices.iter().enumerate() {
                            for j in 0..width {
                                acc[row * width + j] += g_out[r * width + j];
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    if self.requires(a) {
                        let seed = g_out[0];
                        for ga in self.grad_mut(a).iter_mut() {
                            *ga += seed;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn bw_matmul(&mut self, a: Var, b: Var, g_out: &[f64]) {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            ([m, k], [_, n]) => (*m, *k, *n),
            ([m, k], [_]) => (*m, *k, 1),
            ([k], [_, n]) => (1, *k, *n),
            _ => unreachable!("validated in forward"),
        };
        if self.requires(a) {
            // dA = dC · Bᵀ
            let bv = self.tensor(b).values().to_vec();
            let acc = self.grad_mut(a);
            for i in 0..m {
                for p in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g_out[i * n + j] * bv[p * n + j];
                    }
                    acc[i * k + p] += s;
                }
            }
        }
        if self.requires(b) {
            // dB = Aᵀ · dC
            let av = self.tensor(a).values().to_vec();
            let acc = self.grad_mut(b);
            for p in 0..k {
                for i in 0..m {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        acc[p * n + j] += x * g_out[i * n + j];
                    }
                }
            }
        }
    }
}

/// Enumerate (start, stride) of every lane along `axis` for `shape`.
fn lanes(shape: &[usize], axis: usize) -> Vec<(usize, usize)> {
    let stride: usize = shape[axis + 1..].iter().product();
    let blocks: usize = shape[..axis].iter().product();
    let block_size = stride * shape[axis];
    let mut out = Vec::with_capacity(blocks * stride);
    for b in 0..blocks {
        for s in 0..stride {
            out.push((b * block_size + s, stride));
        }
    }
    out
}
