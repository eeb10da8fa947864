//! Fused multi-head scaled dot-product attention over ragged segments.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

use super::kernels::dot;

/// One query block attending to one key block.
///
/// Queries are rows `q_offset..q_offset + q_len` of the query matrix, keys
/// and values are rows `k_offset..k_offset + k_len` of the key/value
/// matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSegment {
    pub q_offset: usize,
    pub q_len: usize,
    pub k_offset: usize,
    pub k_len: usize,
    /// Query `i` may only see keys `0..=i` (self-attention only).
    pub causal: bool,
    /// `false` entries are masked with −∞ before the softmax.
    pub key_mask: Option<Vec<bool>>,
}

impl AttentionSegment {
    pub fn full(q_offset: usize, q_len: usize, k_offset: usize, k_len: usize) -> Self {
        Self { q_offset, q_len, k_offset, k_len, causal: false, key_mask: None }
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        self.key_mask.as_ref().is_none_or(|m| m[j])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub heads: usize,
    pub segments: Vec<AttentionSegment>,
}

impl AttentionLayout {
    /// Offsets of each segment's block inside the saved probability buffer.
    pub(crate) fn prob_offsets(&self) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.segments.len());
        let mut total = 0;
        for s in &self.segments {
            offs.push(total);
            total += self.heads * s.q_len * s.k_len;
        }
        (offs, total)
    }

    pub(crate) fn validate(&self, q_rows: usize, k_rows: usize, v_rows: usize, d: usize) -> Result<()> {
        if self.heads == 0 || d % self.heads != 0 {
            return Err(shape_err("attention", format!("width {d} not divisible by {} heads", self.heads)));
        }
        if k_rows != v_rows {
            return Err(shape_err("attention", format!("keys have {k_rows} rows, values {v_rows}")));
        }
        for (n, s) in self.segments.iter().enumerate() {
            if s.q_len == 0 || s.k_len == 0 {
                return Err(shape_err("attention", format!("segment {n} is empty")));
            }
            if s.q_offset + s.q_len > q_rows || s.k_offset + s.k_len > k_rows {
                return Err(shape_err(
                    "attention",
                    format!("segment {n} exceeds query rows {q_rows} or key rows {k_rows}"),
                ));
            }
            if s.causal && s.q_len != s.k_len {
                return Err(shape_err("attention", format!("causal segment {n} is not square")));
            }
            if let Some(m) = &s.key_mask {
                if m.len() != s.k_len {
                    return Err(shape_err("attention", format!("segment {n} key mask length {}", m.len())));
                }
            }
            for i in 0..s.q_len {
                if !(0..s.k_len).any(|j| s.allowed(i, j)) {
                    return Err(shape_err("attention", format!("segment {n} query {i} sees no key")));
                }
            }
        }
        Ok(())
    }
}

/// Returns (output [q_rows, d], probabilities).
pub(crate) fn forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    q_rows: usize,
    d: usize,
    layout: &AttentionLayout,
) -> (Vec<T>, Vec<T>) {
    let heads = layout.heads;
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let (offs, total) = layout.prob_offsets();
    let mut probs = vec![T::zero(); total];
    let mut out = vec![T::zero(); q_rows * d];
    let mut scores = Vec::new();
    for (s, &poff) in layout.segments.iter().zip(&offs) {
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..s.q_len {
                let qi = &q[(s.q_offset + i) * d + c0..(s.q_offset + i) * d + c0 + dh];
                scores.clear();
                let mut max = T::neg_infinity();
                for j in 0..s.k_len {
                    let sc = if s.allowed(i, j) {
                        let kj = &k[(s.k_offset + j) * d + c0..(s.k_offset + j) * d + c0 + dh];
                        dot(qi, kj) * scale
                    } else {
                        T::neg_infinity()
                    };
                    max = max.max(sc);
                    scores.push(sc);
                }
                let prow = &mut probs[poff + (h * s.q_len + i) * s.k_len..][..s.k_len];
                let mut sum = T::zero();
                for (p, &sc) in prow.iter_mut().zip(&scores) {
                    *p = if sc == T::neg_infinity() { T::zero() } else { (sc - max).exp() };
                    sum = sum + *p;
                }
                let orow = &mut out[(s.q_offset + i) * d + c0..(s.q_offset + i) * d + c0 + dh];
                for (j, p) in prow.iter_mut().enumerate() {
                    *p = *p / sum;
                    if *p == T::zero() {
                        continue;
                    }
                    let vj = &v[(s.k_offset + j) * d + c0..(s.k_offset + j) * d + c0 + dh];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o = *o + *p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

pub(crate) struct AttentionGrads<'a, T> {
    pub dq: Option<&'a mut [T]>,
    pub dk: Option<&'a mut [T]>,
    pub dv: Option<&'a mut [T]>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    d: usize,
    layout: &AttentionLayout,
    mut grads: AttentionGrads<'_, T>,
) {
    let heads = layout.heads;
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let (offs, _) = layout.prob_offsets();
    let mut dp = Vec::new();
    for (s, &poff) in layout.segments.iter().zip(&offs) {
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..s.q_len {
                let qrow = (s.q_offset + i) * d + c0;
                let prow = &probs[poff + (h * s.q_len + i) * s.k_len..][..s.k_len];
                let dorow = &dout[qrow..qrow + dh];
                dp.clear();
                let mut weighted = T::zero();
                for (j, &p) in prow.iter().enumerate() {
                    let vrow = (s.k_offset + j) * d + c0;
                    let g = if p == T::zero() { T::zero() } else { dot(dorow, &v[vrow..vrow + dh]) };
                    weighted = weighted + p * g;
                    dp.push(g);
                    if p != T::zero() {
                        if let Some(dv) = grads.dv.as_deref_mut() {
                            for (o, &go) in dv[vrow..vrow + dh].iter_mut().zip(dorow) {
                                *o = *o + p * go;
                            }
                        }
                    }
                }
                for (j, &p) in prow.iter().enumerate() {
                    if p == T::zero() {
                        continue;
                    }
                    let ds = p * (dp[j] - weighted) * scale;
                    let krow = (s.k_offset + j) * d + c0;
                    if let Some(dq) = grads.dq.as_deref_mut() {
                        for (o, &kv) in dq[qrow..qrow + dh].iter_mut().zip(&k[krow..krow + dh]) {
                            *o = *o + ds * kv;
                        }
                    }
                    if let Some(dk) = grads.dk.as_deref_mut() {
                        for (o, &qv) in dk[krow..krow + dh].iter_mut().zip(&q[qrow..qrow + dh]) {
                            *o = *o + ds * qv;
                        }
                    }
                }
            }
        }
    }
}
