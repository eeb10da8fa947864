//! Define-by-run reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node to the tape, so nodes are
//! topologically ordered by construction and `backward` is a single reverse
//! sweep.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::attention::{self, AttentionGrads, AttentionLayout};
use super::kernels::{gemm_nn, gemm_nt, gemm_tn, log_softmax_row, softmax_row};
use super::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { trainable: bool },
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    GatherRows { table: Var, rows: Vec<usize> },
    ConcatRows(Vec<Var>),
    Attention { q: Var, k: Var, v: Var, layout: AttentionLayout, probs: Vec<T> },
    KlDiv { logits: Var, target: Tensor<T>, log_q: Vec<T>, log_floor: T },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of trainable leaves produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { trainable: true }, true)
    }

    /// A leaf that never receives a gradient (frozen weights, inputs).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf { trainable: false }, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, trainable: bool) -> Var {
        if trainable {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `a [m,k] · b [k,n]`; leading extents of `a` are folded into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} · {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a `[cols]` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % c])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, b]);
        Ok(self.push(t, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * c).collect())
            .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through so divergence is not masked.
        self.unary(x, |v| if v > T::zero() || v.is_nan() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = vec![T::zero(); xv.len()];
        for (src, dst) in xv.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(src, dst);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = vec![T::zero(); xv.len()];
        for (src, dst) in xv.data().chunks(c).zip(out.chunks_mut(c)) {
            log_softmax_row(src, dst);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::LogSoftmax(x), rg)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "input {:?}, gain {:?}, bias {:?}",
                    xv.shape(),
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let n = T::lit(c as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Embedding lookup: selects `rows` of `table` in order.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if rows.is_empty() {
            return Err(shape_err("gather_rows", "no rows requested"));
        }
        let (n, c) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(shape_err("gather_rows", format!("row {r} out of range for {:?}", tv.shape())));
            }
            out.extend_from_slice(tv.row(r));
        }
        let t = Tensor::new(vec![rows.len(), c], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(t, Op::GatherRows { table, rows: rows.to_vec() }, rg))
    }

    /// Stacks row blocks with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs"));
        };
        let c = self.value(first).cols();
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c {
                return Err(shape_err("concat_rows", format!("column count {} vs {c}", pv.cols())));
            }
            out.extend_from_slice(pv.data());
        }
        let rows = out.len() / c;
        let t = Tensor::new(vec![rows, c], out)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Multi-head scaled dot-product attention; `q`, `k`, `v` are already
    /// projected `[rows, d]` matrices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        if kv.cols() != d || vv.cols() != d {
            return Err(shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        layout.validate(qv.rows(), kv.rows(), vv.rows(), d)?;
        let (out, probs) = attention::forward(qv.data(), kv.data(), vv.data(), qv.rows(), d, &layout);
        let t = Tensor::new(vec![qv.rows(), d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(t, Op::Attention { q, k, v, layout, probs }, rg))
    }

    /// Saved attention probabilities of an attention node, with its layout.
    /// Layout of the buffer: per segment, per head, `q_len × k_len`.
    pub fn attention_probs(&self, v: Var) -> Option<(&AttentionLayout, &[T])> {
        match &self.nodes[v.0].op {
            Op::Attention { layout, probs, .. } => Some((layout, probs)),
            _ => None,
        }
    }

    /// Mean over rows of `Σ_v w_v (ln max(w_v, floor) − ln max(q_v, floor))`
    /// where `q = softmax(logits)` and `w` is a constant target distribution.
    /// Terms with `w_v = 0` contribute nothing. With a one-hot target this is
    /// the cross-entropy of the target tokens.
    pub fn kl_div(&mut self, target: Tensor<T>, logits: Var, floor: T) -> Result<Var> {
        let lv = self.value(logits);
        if target.shape() != lv.shape() {
            return Err(shape_err("kl_div", format!("target {:?} vs logits {:?}", target.shape(), lv.shape())));
        }
        let c = lv.cols();
        let mut log_q = vec![T::zero(); lv.len()];
        for (src, dst) in lv.data().chunks(c).zip(log_q.chunks_mut(c)) {
            log_softmax_row(src, dst);
        }
        let log_floor = floor.ln();
        let mut total = T::zero();
        for (w_row, lq_row) in target.data().chunks(c).zip(log_q.chunks(c)) {
            let mut row = T::zero();
            for (&w, &lq) in w_row.iter().zip(lq_row) {
                if w > T::zero() {
                    row = row + w * (at_least(w, floor).ln() - at_least(lq, log_floor));
                }
            }
            total = total + row;
        }
        let value = total / T::lit(lv.rows() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(value), Op::KlDiv { logits, target, log_q, log_floor }, rg))
    }

    /// Mean token cross-entropy of `targets` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], floor: T) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(shape_err("cross_entropy", format!("{} targets for {} rows", targets.len(), lv.rows())));
        }
        let c = lv.cols();
        let mut w = vec![T::zero(); lv.len()];
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(shape_err("cross_entropy", format!("target {t} out of vocabulary {c}")));
            }
            w[r * c + t] = T::one();
        }
        let target = Tensor::new(lv.shape().to_vec(), w)?;
        self.kl_div(target, logits, floor)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse sweep from a scalar `loss`. Only trainable leaves receive a
    /// gradient; frozen leaves and constants get none.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Graph("backward called before forward".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf { trainable } = node.op {
                if trainable {
                    out[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    gemm_nt(g, bv.data(), slot(grads, *a, av.len()), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(av.data(), g, slot(grads, *b, bv.len()), m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        axpy(slot(grads, v, g.len()), g, T::one());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    let s = slot(grads, *a, g.len());
                    for ((o, &gi), &y) in s.iter_mut().zip(g).zip(bv) {
                        *o = *o + gi * y;
                    }
                }
                if wants(*b) {
                    let s = slot(grads, *b, g.len());
                    for ((o, &gi), &x) in s.iter_mut().zip(g).zip(av) {
                        *o = *o + gi * x;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    axpy(slot(grads, *x, g.len()), g, T::one());
                }
                if wants(*b) {
                    let c = val(*b).len();
                    let s = slot(grads, *b, c);
                    for row in g.chunks(c) {
                        axpy(s, row, T::one());
                    }
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    axpy(slot(grads, *x, g.len()), g, *c);
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xv = val(*x).data();
                    let s = slot(grads, *x, g.len());
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(xv) {
                        if xi > T::zero() {
                            *o = *o + gi;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if wants(*x) {
                    let y = node.value.data();
                    let s = slot(grads, *x, g.len());
                    for ((o, &gi), &yi) in s.iter_mut().zip(g).zip(y) {
                        *o = *o + gi * yi;
                    }
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    let xv = val(*x).data();
                    let s = slot(grads, *x, g.len());
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(xv) {
                        *o = *o + gi / xi;
                    }
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let y = &node.value;
                    let c = y.cols();
                    let s = slot(grads, *x, g.len());
                    for ((srow, grow), yrow) in s.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let dotp = grow.iter().zip(yrow).fold(T::zero(), |a, (&gi, &yi)| a + gi * yi);
                        for ((o, &gi), &yi) in srow.iter_mut().zip(grow).zip(yrow) {
                            *o = *o + yi * (gi - dotp);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if wants(*x) {
                    let y = &node.value;
                    let c = y.cols();
                    let s = slot(grads, *x, g.len());
                    for ((srow, grow), yrow) in s.chunks_mut(c).zip(g.chunks(c)).zip(y.data().chunks(c)) {
                        let gsum = grow.iter().fold(T::zero(), |a, &gi| a + gi);
                        for ((o, &gi), &yi) in srow.iter_mut().zip(grow).zip(yrow) {
                            *o = *o + gi - yi.exp() * gsum;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = val(*gain).data();
                let c = gv.len();
                let n = T::lit(c as f64);
                if wants(*x) {
                    let s = slot(grads, *x, g.len());
                    let mut dxhat = vec![T::zero(); c];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..c {
                            dxhat[j] = grow[j] * gv[j];
                            sum_d = sum_d + dxhat[j];
                            sum_dh = sum_dh + dxhat[j] * hrow[j];
                        }
                        let srow = &mut s[r * c..(r + 1) * c];
                        for j in 0..c {
                            srow[j] = srow[j] + inv / n * (n * dxhat[j] - sum_d - hrow[j] * sum_dh);
                        }
                    }
                }
                if wants(*gain) {
                    let s = slot(grads, *gain, c);
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, &gi), &h) in s.iter_mut().zip(grow).zip(hrow) {
                            *o = *o + gi * h;
                        }
                    }
                }
                if wants(*bias) {
                    let s = slot(grads, *bias, c);
                    for grow in g.chunks(c) {
                        axpy(s, grow, T::one());
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                if wants(*table) {
                    let tv = val(*table);
                    let c = tv.cols();
                    let s = slot(grads, *table, tv.len());
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(&mut s[r * c..(r + 1) * c], &g[i * c..(i + 1) * c], T::one());
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        axpy(slot(grads, p, n), &g[off..off + n], T::one());
                    }
                    off += n;
                }
            }
            Op::Attention { q, k, v, layout, probs } => {
                let d = val(*q).cols();
                let (ql, kl, vl) = (val(*q).len(), val(*k).len(), val(*v).len());
                let mut dq = wants(*q).then(|| vec![T::zero(); ql]);
                let mut dk = wants(*k).then(|| vec![T::zero(); kl]);
                let mut dv = wants(*v).then(|| vec![T::zero(); vl]);
                attention::backward(
                    val(*q).data(),
                    val(*k).data(),
                    val(*v).data(),
                    probs,
                    g,
                    d,
                    layout,
                    AttentionGrads { dq: dq.as_deref_mut(), dk: dk.as_deref_mut(), dv: dv.as_deref_mut() },
                );
                for (var, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(buf) = buf {
                        axpy(slot(grads, var, buf.len()), &buf, T::one());
                    }
                }
            }
            Op::KlDiv { logits, target, log_q, log_floor } => {
                if wants(*logits) {
                    let c = target.cols();
                    let rows = target.rows();
                    let scale = g[0] / T::lit(rows as f64);
                    let s = slot(grads, *logits, target.len());
                    for ((srow, wrow), lqrow) in
                        s.chunks_mut(c).zip(target.data().chunks(c)).zip(log_q.chunks(c))
                    {
                        let mut live_mass = T::zero();
                        for (&w, &lq) in wrow.iter().zip(lqrow) {
                            if w > T::zero() && lq > *log_floor {
                                live_mass = live_mass + w;
                            }
                        }
                        for ((o, &w), &lq) in srow.iter_mut().zip(wrow).zip(lqrow) {
                            let mut d = lq.exp() * live_mass;
                            if w > T::zero() && lq > *log_floor {
                                d = d - w;
                            }
                            *o = *o + scale * d;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let n = val(*x).len();
                    let s = slot(grads, *x, n);
                    for o in s.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

/// `max(v, floor)` that keeps NaN.
fn at_least<T: Scalar>(v: T, floor: T) -> T {
    if v < floor {
        floor
    } else {
        v
    }
}
