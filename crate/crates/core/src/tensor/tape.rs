//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends one node to the tape. Node order is the order of
//! evaluation, so it is a topological order and the reverse sweep is a single
//! backwards pass over the node list.

use super::dense::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Relu(Var),
    Sin(Var),
    Exp(Var),
    Softplus(Var),
    Sigmoid(Var),
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    SumAll(Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::reverse_sweep`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros if unreachable.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_reachable(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `out[p×r] += a[p×q] · b[q×r]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

fn transpose2(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        finite(name, &data)?;
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, rg))
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `a[p×q] · b[q×r]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, p, q, r);
        self.push_checked("matmul", vec![p, r], out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product `a[B×p×q] · b[B×q×r]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (bs, p, q, r) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * p * r];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for t in 0..bs {
            gemm_acc(
                &ad[t * p * q..(t + 1) * p * q],
                &bd[t * q * r..(t + 1) * q * r],
                &mut out[t * p * r..(t + 1) * p * r],
                p,
                q,
                r,
            );
        }
        self.push_checked("bmm", vec![bs, p, r], out, Op::BatchMatMul(a, b), &[a, b])
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let (bs, rows, cols) = match s.as_slice() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            _ => return Err(Error::shape("transpose", &s, &[])),
        };
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(d.len());
        for t in 0..bs {
            out.extend(transpose2(&d[t * rows * cols..(t + 1) * rows * cols], rows, cols));
        }
        let mut shape = s;
        let k = shape.len();
        shape.swap(k - 1, k - 2);
        self.push_checked("transpose", shape, out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(name, shape, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let k = self.value(a).last_dim();
        if self.value(row).numel() != k {
            return Err(Error::shape(name, self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .chunks(k)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(name, shape, data, op, &[a, row])
    }

    /// Adds a vector along the last axis (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    /// Multiplies by a vector along the last axis.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    /// Multiplies every element by a single-element variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let data = self.value(a).data().iter().map(|x| x * sv).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("scale_by", shape, data, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_const", a, |x| x + c, Op::AddConst(a))
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(name, shape, data, op, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.map("sin", a, f64::sin, Op::Sin(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, stable_softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, stable_sigmoid, Op::Sigmoid(a))
    }

    /// Softmax over the last axis restricted to positions where `mask` is 1.
    ///
    /// `mask` holds one row of length `T` per block of consecutive input rows:
    /// a `[T]` mask applies to every row, a `[B, T]` mask to scores of shape
    /// `[B, R, T]`, and a mask of the input's own shape applies row by row.
    /// Masked outputs are exactly zero and rows with no allowed position are
    /// all zero. Scores at masked positions never influence the result.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Tensor) -> Result<Var> {
        let t = self.value(scores).last_dim();
        let rows = self.value(scores).numel() / t;
        let mask_rows = mask.numel() / t.max(1);
        if mask.last_dim() != t || mask_rows == 0 || rows % mask_rows != 0 {
            return Err(Error::shape("masked_softmax", self.shape(scores), mask.shape()));
        }
        let repeat = rows / mask_rows;
        let s = self.value(scores).data();
        let m = mask.data();
        let mut out = vec![0.0; s.len()];
        for r in 0..rows {
            let srow = &s[r * t..(r + 1) * t];
            let mrow = &m[(r / repeat) * t..(r / repeat + 1) * t];
            let max = srow
                .iter()
                .zip(mrow)
                .filter(|(_, &mk)| mk != 0.0)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = &mut out[r * t..(r + 1) * t];
            let mut sum = 0.0;
            for ((o, &x), &mk) in orow.iter_mut().zip(srow).zip(mrow) {
                if mk != 0.0 {
                    *o = (x - max).exp();
                    sum += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let shape = self.shape(scores).to_vec();
        self.push_checked("masked_softmax", shape, out, Op::MaskedSoftmax(scores), &[scores])
    }

    /// Softmax over the last axis with every position allowed.
    pub fn softmax(&mut self, scores: Var) -> Result<Var> {
        let t = self.value(scores).last_dim();
        self.masked_softmax(scores, &Tensor::full(&[t], 1.0))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).last_dim();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(t) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ln_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x = (*x - max) - ln_sum);
        }
        let shape = self.shape(a).to_vec();
        self.push_checked("log_softmax", shape, out, Op::LogSoftmax(a), &[a])
    }

    /// Normalizes each row over the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a).last_dim();
        let mut out = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / t);
        for row in out.chunks_mut(t) {
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        let shape = self.shape(a).to_vec();
        self.push_checked("layer_norm", shape, out, Op::LayerNorm { input: a, inv_std }, &[a])
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_checked("sum", vec![1], vec![s], Op::SumAll(a), &[a])
    }

    /// Columnwise maximum of a matrix; ties resolve to the lowest row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("max_rows", &s, &[]));
        }
        let (n, m) = (s[0], s[1]);
        let v = self.value(a);
        let mut out = v.row(0).to_vec();
        let mut argmax = vec![0; m];
        for i in 1..n {
            for (j, &x) in v.row(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = i;
                }
            }
        }
        self.push_checked("max_rows", vec![m], out, Op::MaxRows { input: a, argmax }, &[a])
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let lead: Vec<usize> = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push_checked("concat", shape, out, Op::Concat(parts.to_vec()), parts)
    }

    /// Mean binary cross-entropy between logistic(`logits`) and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != targets.len() {
            return Err(Error::shape("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        let n = x.len() as f64;
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let op = Op::BceWithLogits {
            logits,
            targets: targets.to_vec(),
        };
        self.push_checked("bce_with_logits", vec![1], vec![loss], op, &[logits])
    }

    /// Backpropagates from the scalar `loss` node through the whole tape.
    pub fn reverse_sweep(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return;
        }
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (p, q, r) = (sa[0], sa[1], sb[1]);
                let bt = transpose2(val(*b), q, r);
                acc(*a, &|s| gemm_acc(g, &bt, s, p, r, q));
                let at = transpose2(val(*a), p, q);
                acc(*b, &|s| gemm_acc(&at, g, s, q, p, r));
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, p, q, r) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &|s| {
                    for t in 0..bs {
                        let bt = transpose2(&bd[t * q * r..(t + 1) * q * r], q, r);
                        gemm_acc(
                            &g[t * p * r..(t + 1) * p * r],
                            &bt,
                            &mut s[t * p * q..(t + 1) * p * q],
                            p,
                            r,
                            q,
                        );
                    }
                });
                acc(*b, &|s| {
                    for t in 0..bs {
                        let at = transpose2(&ad[t * p * q..(t + 1) * p * q], p, q);
                        gemm_acc(
                            &at,
                            &g[t * p * r..(t + 1) * p * r],
                            &mut s[t * q * r..(t + 1) * q * r],
                            q,
                            p,
                            r,
                        );
                    }
                });
            }
            Op::Transpose(a) => {
                // output is [.., c, r]; gradient goes back through the inverse swap
                let s = node.value.shape();
                let k = s.len();
                let (rows, cols) = (s[k - 2], s[k - 1]);
                let bs = node.value.numel() / (rows * cols);
                acc(*a, &|dst| {
                    for t in 0..bs {
                        let block = transpose2(&g[t * rows * cols..(t + 1) * rows * cols], rows, cols);
                        for (d, x) in dst[t * rows * cols..(t + 1) * rows * cols].iter_mut().zip(block) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Reshape(a) | Op::AddConst(a) => acc(*a, &|s| add_into(s, g)),
            Op::Add(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &|s| mul_add_into(s, g, bd));
                acc(*b, &|s| mul_add_into(s, g, ad));
            }
            Op::AddRow(a, row) => {
                acc(*a, &|s| add_into(s, g));
                let k = self.value(*row).numel();
                acc(*row, &|s| {
                    for chunk in g.chunks(k) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (ad, rd) = (val(*a), val(*row));
                let k = rd.len();
                acc(*a, &|s| {
                    for (sc, gc) in s.chunks_mut(k).zip(g.chunks(k)) {
                        mul_add_into(sc, gc, rd);
                    }
                });
                acc(*row, &|s| {
                    for (gc, ac) in g.chunks(k).zip(ad.chunks(k)) {
                        mul_add_into(s, gc, ac);
                    }
                });
            }
            Op::ScaleBy(a, sv) => {
                let (ad, scale) = (val(*a), val(*sv)[0]);
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(d, x)| *d += x * scale));
                let dot: f64 = g.iter().zip(ad).map(|(x, y)| x * y).sum();
                acc(*sv, &|s| s[0] += dot);
            }
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(d, x)| *d += x * c)),
            Op::Tanh(a) => acc(*a, &|s| {
                for ((d, x), yv) in s.iter_mut().zip(g).zip(y) {
                    *d += x * (1.0 - yv * yv);
                }
            }),
            Op::Relu(a) => {
                let ad = val(*a);
                acc(*a, &|s| {
                    for ((d, x), &xv) in s.iter_mut().zip(g).zip(ad) {
                        if xv > 0.0 {
                            *d += x;
                        }
                    }
                })
            }
            Op::Sin(a) => {
                let ad = val(*a);
                acc(*a, &|s| {
                    for ((d, x), xv) in s.iter_mut().zip(g).zip(ad) {
                        *d += x * xv.cos();
                    }
                })
            }
            Op::Exp(a) => acc(*a, &|s| mul_add_into(s, g, y)),
            Op::Softplus(a) => {
                let ad = val(*a);
                acc(*a, &|s| {
                    for ((d, x), &xv) in s.iter_mut().zip(g).zip(ad) {
                        *d += x * stable_sigmoid(xv);
                    }
                })
            }
            Op::Sigmoid(a) => acc(*a, &|s| {
                for ((d, x), yv) in s.iter_mut().zip(g).zip(y) {
                    *d += x * yv * (1.0 - yv);
                }
            }),
            Op::MaskedSoftmax(a) => {
                let t = node.value.last_dim();
                acc(*a, &|s| {
                    for ((sc, gc), yc) in s.chunks_mut(t).zip(g.chunks(t)).zip(y.chunks(t)) {
                        let dot: f64 = gc.iter().zip(yc).map(|(x, yv)| x * yv).sum();
                        for ((d, x), yv) in sc.iter_mut().zip(gc).zip(yc) {
                            *d += yv * (x - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let t = node.value.last_dim();
                acc(*a, &|s| {
                    for ((sc, gc), yc) in s.chunks_mut(t).zip(g.chunks(t)).zip(y.chunks(t)) {
                        let gsum: f64 = gc.iter().sum();
                        for ((d, x), yv) in sc.iter_mut().zip(gc).zip(yc) {
                            *d += x - yv.exp() * gsum;
                        }
                    }
                })
            }
            Op::LayerNorm { input, inv_std } => {
                let t = node.value.last_dim();
                let tf = t as f64;
                acc(*input, &|s| {
                    for (((sc, gc), yc), is) in s
                        .chunks_mut(t)
                        .zip(g.chunks(t))
                        .zip(y.chunks(t))
                        .zip(inv_std)
                    {
                        let gmean = gc.iter().sum::<f64>() / tf;
                        let gymean = gc.iter().zip(yc).map(|(x, yv)| x * yv).sum::<f64>() / tf;
                        for ((d, x), yv) in sc.iter_mut().zip(gc).zip(yc) {
                            *d += is * (x - gmean - yv * gymean);
                        }
                    }
                })
            }
            Op::SumAll(a) => acc(*a, &|s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::MaxRows { input, argmax } => {
                let m = argmax.len();
                acc(*input, &|s| {
                    for (j, &i) in argmax.iter().enumerate() {
                        s[i * m + j] += g[j];
                    }
                })
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    acc(p, &|s| {
                        for r in 0..rows {
                            add_into(
                                &mut s[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let ld = val(*logits);
                let n = ld.len() as f64;
                acc(*logits, &|s| {
                    for ((d, &z), t) in s.iter_mut().zip(ld).zip(targets) {
                        *d += g[0] * (stable_sigmoid(z) - t) / n;
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn mul_add_into(dst: &mut [f64], a: &[f64], b: &[f64]) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d += x * y;
    }
}
