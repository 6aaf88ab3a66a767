//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order; node indices are
//! therefore a topological order and the backward pass is a single reverse
//! sweep. Parameters are borrowed from a [`ParameterStore`] rather than copied,
//! so one store can feed many graphs concurrently (one per window or
//! sequence) while training keeps exclusive access for the update.

use std::borrow::Cow;

use crate::error::{shape_err, NumericsError, Result};
use crate::ops::{gelu_grad_scalar, gelu_scalar};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::{matmul_kernel, require_matrix, transpose_kernel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gather { x: Var, index: Vec<usize> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Sum(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
    MeanRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A recorded forward computation.
pub struct Graph<'p> {
    store: Option<&'p ParameterStore>,
    nodes: Vec<Node>,
}

/// Gradients of every node reached by one backward sweep.
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
    params: Gradients,
}

impl NodeGrads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &Gradients {
        &self.params
    }

    pub fn into_params(self) -> Gradients {
        self.params
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::with_capacity(256),
        }
    }

    /// A graph without parameters, e.g. for losses over precomputed embeddings.
    pub fn detached() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .store
                .expect("parameter node without a store")
                .value(*id),
            _ => unreachable!("node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input tensor; differentiable when `t.requires_grad` is set.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg, "input")
    }

    pub fn constant(&mut self, mut t: Tensor) -> Result<Var> {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false, "constant")
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| NumericsError::Contract("graph has no parameter store".into()))?;
        let id = store.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = require_matrix("matmul", self.value(a))?;
        let (k2, m) = require_matrix("matmul", self.value(b))?;
        if k != k2 {
            return shape_err("matmul", self.shape(a), self.shape(b));
        }
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = require_matrix("transpose", self.value(a))?;
        let out = transpose_kernel(self.value(a).data(), n, m);
        let rg = self.rg(a);
        self.push(Tensor::new(vec![m, n], out)?, Op::Transpose(a), rg, "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("add", self.shape(a), self.shape(b));
        }
        let out: Vec<f64> = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg, "add")
    }

    /// `a` (n×m) plus a broadcast row vector of length m.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row", a, row, |x, r| x + r)?;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg, "add_row")
    }

    /// `a` (n×m) times a broadcast row vector of length m, element-wise.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", a, row, |x, r| x * r)?;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::MulRow(a, row), rg, "mul_row")
    }

    fn row_broadcast(&self, op: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (_, m) = require_matrix(op, self.value(a))?;
        let r = self.value(row);
        if r.len() != m {
            return shape_err(op, self.shape(a), r.shape());
        }
        let r = r.data();
        let out = self
            .value(a)
            .data()
            .chunks(m)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect();
        Tensor::new(self.shape(a).to_vec(), out)
    }

    /// Hadamard product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("hadamard", self.shape(a), self.shape(b));
        }
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg, "hadamard")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())?;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg, "scale")
    }

    /// Adds a constant tensor (no gradient flows into it), e.g. an attention mask.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return shape_err("add_const", self.shape(a), c.shape());
        }
        let out = zip_map(self.value(a).data(), c.data(), |x, y| x + y);
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out)?, Op::AddConst(a), rg, "add_const")
    }

    /// Exact erf-based GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| gelu_scalar(x)).collect())?;
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg, "gelu")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (c, data) = (t.cols(), t.data());
        let mut out = data.to_vec();
        out.chunks_mut(c).for_each(crate::ops::softmax_in_place);
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg, "softmax")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        out.chunks_mut(c).for_each(crate::ops::log_softmax_in_place);
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg, "log_softmax")
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(t.rows());
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm { x: a, inv_std }, rg, "layer_norm")
    }

    /// Picks flat elements of `a` into a new tensor of `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(a).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(NumericsError::Contract(format!(
                "gather index {bad} out of range for {} values",
                src.len()
            )));
        }
        let out = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        self.push(out, Op::Gather { x: a, index }, rg, "gather")
    }

    /// Selects rows of a matrix (repetition allowed).
    pub fn rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (n, m) = require_matrix("rows", self.value(a))?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumericsError::Contract(format!("row {bad} out of range for {n} rows")));
        }
        let index = rows.iter().flat_map(|&r| r * m..(r + 1) * m).collect();
        self.gather(a, index, vec![rows.len(), m])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat of nothing".into()))?;
        let (n, _) = require_matrix("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = require_matrix("concat_cols", self.value(p))?;
            if pn != n {
                return shape_err("concat_cols", self.shape(first), self.shape(p));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = require_matrix("slice_cols", self.value(a))?;
        if start > end || end > m {
            return Err(NumericsError::Contract(format!("column slice {start}..{end} of width {m}")));
        }
        let w = end - start;
        let src = self.value(a).data();
        let out = (0..n).flat_map(|i| src[i * m + start..i * m + end].iter().copied()).collect();
        let rg = self.rg(a);
        self.push(Tensor::new(vec![n, w], out)?, Op::SliceCols { x: a, start }, rg, "slice_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    /// `sum_i weights[i] * a[i]` over the flat data; weights are constants.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return shape_err("weighted_sum", self.shape(a), &[weights.len()]);
        }
        let s = self.value(a).data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::WeightedSum { x: a, weights }, rg, "weighted_sum")
    }

    /// Column-wise mean over the rows of a matrix, giving a length-m vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = require_matrix("mean_rows", self.value(a))?;
        if n == 0 {
            return Err(NumericsError::Contract("mean over zero rows".into()));
        }
        let mut out = vec![0.0; m];
        for row in self.value(a).data().chunks(m) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(a);
        self.push(Tensor::vector(out), Op::MeanRows(a), rg, "mean_rows")
    }

    /// `x W + b` for a matrix `x`, weight `W` and bias row `b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Backward sweep from a scalar loss, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        Ok(self.backward_full(loss)?.into_params())
    }

    /// Backward sweep from a scalar loss, keeping gradients of every node.
    pub fn backward_full(&self, loss: Var) -> Result<NodeGrads> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_seeded(loss, &[1.0])
    }

    /// Backward sweep with an explicit upstream gradient for `root`.
    pub fn backward_seeded(&self, root: Var, seed: &[f64]) -> Result<NodeGrads> {
        if seed.len() != self.value(root).len() {
            return shape_err("backward_seeded", self.shape(root), &[seed.len()]);
        }
        let num_params = self.store.map_or(0, ParameterStore::len);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        let mut params = Gradients::new(num_params);
        grads[root.0] = Some(seed.to_vec());

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.iter().all(|x| x.is_finite()) {
                return Err(NumericsError::NonFinite("backward"));
            }
            self.propagate(Var(i), &node.op, &g, &mut grads, &mut params)?;
            grads[i] = Some(g);
        }
        Ok(NodeGrads { grads, params })
    }

    fn propagate(
        &self,
        this: Var,
        op: &Op,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut Gradients,
    ) -> Result<()> {
        let mut acc = |v: Var, contrib: Cow<'_, [f64]>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(contrib.iter()).for_each(|(b, c)| *b += c),
                slot @ None => *slot = Some(contrib.into_owned()),
            }
        };
        match op {
            Op::Leaf => {}
            Op::Param(id) => params.add_into(*id, g),
            Op::MatMul(a, b) => {
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let m = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    // dA[i,p] = sum_j g[i,j] * B[p,j]
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            da[i * k + p] = dot(gi, &bv[p * m..(p + 1) * m]);
                        }
                    }
                    acc(*a, Cow::Owned(da));
                }
                if self.rg(*b) {
                    // dB[p,:] = sum_i A[i,p] * g[i,:]
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            db[p * m..(p + 1) * m].iter_mut().zip(gi).for_each(|(d, x)| *d += a_ip * x);
                        }
                    }
                    acc(*b, Cow::Owned(db));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (self.value(*a).rows(), self.value(*a).cols());
                acc(*a, Cow::Owned(transpose_kernel(g, m, n)));
            }
            Op::Add(a, b) => {
                acc(*a, Cow::Borrowed(g));
                acc(*b, Cow::Borrowed(g));
            }
            Op::AddRow(a, row) => {
                acc(*a, Cow::Borrowed(g));
                if self.rg(*row) {
                    let m = self.value(*row).len();
                    let mut dr = vec![0.0; m];
                    for chunk in g.chunks(m) {
                        dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                    acc(*row, Cow::Owned(dr));
                }
            }
            Op::MulRow(a, row) => {
                let m = self.value(*row).len();
                let r = self.value(*row).data();
                if self.rg(*a) {
                    let da = g
                        .chunks(m)
                        .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x * y))
                        .collect();
                    acc(*a, Cow::Owned(da));
                }
                if self.rg(*row) {
                    let mut dr = vec![0.0; m];
                    for (gc, ac) in g.chunks(m).zip(self.value(*a).data().chunks(m)) {
                        dr.iter_mut().zip(gc.iter().zip(ac)).for_each(|(d, (x, y))| *d += x * y);
                    }
                    acc(*row, Cow::Owned(dr));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, Cow::Owned(zip_map(g, self.value(*b).data(), |x, y| x * y)));
                }
                if self.rg(*b) {
                    acc(*b, Cow::Owned(zip_map(g, self.value(*a).data(), |x, y| x * y)));
                }
            }
            Op::Scale(a, c) => acc(*a, Cow::Owned(g.iter().map(|x| x * c).collect())),
            Op::AddConst(a) => acc(*a, Cow::Borrowed(g)),
            Op::Gelu(a) => {
                let d = zip_map(g, self.value(*a).data(), |x, z| x * gelu_grad_scalar(z));
                acc(*a, Cow::Owned(d));
            }
            Op::SoftmaxRows(a) => {
                let y = self.value(this);
                let c = y.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(y.data().chunks(c)) {
                    let s = dot(gr, yr);
                    d.extend(gr.iter().zip(yr).map(|(gi, yi)| yi * (gi - s)));
                }
                acc(*a, Cow::Owned(d));
            }
            Op::LogSoftmaxRows(a) => {
                let y = self.value(this);
                let c = y.cols();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(y.data().chunks(c)) {
                    let s: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(yr).map(|(gi, li)| gi - li.exp() * s));
                }
                acc(*a, Cow::Owned(d));
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.value(this);
                let c = y.cols();
                let mut d = Vec::with_capacity(g.len());
                for ((gr, yr), is) in g.chunks(c).zip(y.data().chunks(c)).zip(inv_std) {
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = dot(gr, yr) / c as f64;
                    d.extend(gr.iter().zip(yr).map(|(gi, yi)| is * (gi - mg - yi * mgy)));
                }
                acc(*x, Cow::Owned(d));
            }
            Op::Gather { x, index } => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (&i, gi) in index.iter().zip(g) {
                    d[i] += gi;
                }
                acc(*x, Cow::Owned(d));
            }
            Op::ConcatCols(parts) => {
                let total = self.value(this).cols();
                let n = self.value(this).rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let d = (0..n)
                            .flat_map(|i| g[i * total + offset..i * total + offset + w].iter().copied())
                            .collect();
                        acc(p, Cow::Owned(d));
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, m) = (self.value(*x).rows(), self.value(*x).cols());
                let w = self.value(this).cols();
                let mut d = vec![0.0; n * m];
                for i in 0..n {
                    d[i * m + start..i * m + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(*x, Cow::Owned(d));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, Cow::Owned(vec![g[0]; n]));
            }
            Op::WeightedSum { x, weights } => {
                acc(*x, Cow::Owned(weights.iter().map(|w| w * g[0]).collect()));
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).rows();
                let scaled: Vec<f64> = g.iter().map(|x| x / n as f64).collect();
                let d = (0..n).flat_map(|_| scaled.iter().copied()).collect();
                acc(*a, Cow::Owned(d));
            }
        }
        Ok(())
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParameterStore::new();
        let w = store.insert("w", Tensor::vector(vec![1.0, 2.0]), 0).unwrap();
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut store = ParameterStore::new();
        let w = store.insert("w", Tensor::vector(vec![1.0, 2.0]), 0).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::vector(vec![3.0])).unwrap();
        let loss = g.sum(x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        store.accumulate(&grads);
        assert_eq!(store.grad(w).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::detached();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]).with_grad()).unwrap();
        assert!(matches!(g.backward(x), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn matmul_shape_error() {
        let mut g = Graph::detached();
        let a = g.input(mat(&[vec![1.0, 2.0]])).unwrap();
        let b = g.input(mat(&[vec![1.0, 2.0]])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(NumericsError::Shape { .. })));
    }

    #[test]
    fn hadamard_shape_error() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.input(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(g.mul(a, b).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::detached();
        let a = g.input(Tensor::vector(vec![1e308])).unwrap();
        assert!(matches!(g.scale(a, 10.0), Err(NumericsError::NonFinite(_))));
    }

    #[test]
    fn seeded_backward_through_matmul() {
        let mut g = Graph::detached();
        let a = g.input(mat(&[vec![1.0, 2.0]]).with_grad()).unwrap();
        let b = g.input(mat(&[vec![3.0], vec![4.0]]).with_grad()).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
        let grads = g.backward_seeded(c, &[2.0]).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[6.0, 8.0]);
        assert_eq!(grads.wrt(b).unwrap(), &[2.0, 4.0]);
    }
}
