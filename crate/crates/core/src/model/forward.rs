//! Encoder–decoder forward pass over ragged batches.
//!
//! Rows of every activation matrix are the concatenated positions of all
//! sequences in the batch; per-sequence structure lives in attention
//! layouts.

use crate::error::{Error, Result};
use crate::numerics::{AttentionLayout, AttentionSegment, Graph, Tensor, Var};
use crate::scalar::Scalar;

use super::params::{Binding, ModelConfig, ModelParams, TokenId, BOS, DEC_SUBLAYERS, ENC_SUBLAYERS};

const LN_EPS: f64 = 1e-5;

/// Which network runs: the frozen text-only base, or base plus adapters
/// and visual token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Base,
    Multimodal,
}

/// Placement of one source sequence inside the encoder activations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncSegment {
    pub offset: usize,
    pub len: usize,
    /// Index of the visual token within the segment, when an image was given.
    pub visual: Option<usize>,
}

impl EncSegment {
    fn key_mask(&self) -> Option<Vec<bool>> {
        self.visual.map(|v| (0..self.len).map(|j| j != v).collect())
    }
}

#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub states: Var,
    pub segments: Vec<EncSegment>,
}

#[derive(Clone, Debug)]
pub struct DecodedBatch {
    /// `[Σ prefix lengths, vocab]`
    pub logits: Var,
    /// Row offset of each prefix inside `logits`.
    pub offsets: Vec<usize>,
    /// One attention node per decoder layer's cross-attention.
    pub cross_attention: Vec<Var>,
}

/// Sinusoidal position encoding row.
pub fn position_encoding<T: Scalar>(pos: usize, d: usize) -> Vec<T> {
    (0..d)
        .map(|i| {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            T::lit(if i % 2 == 0 { a.sin() } else { a.cos() })
        })
        .collect()
}

fn positions_tensor<T: Scalar>(lens: &[usize], d: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(lens.iter().sum::<usize>() * d);
    for &n in lens {
        for p in 0..n {
            data.extend(position_encoding::<T>(p, d));
        }
    }
    Tensor::new(vec![data.len() / d, d], data)
}

/// A model bound to one graph.
pub struct Net<'a, T> {
    params: &'a ModelParams<T>,
    binding: &'a Binding,
    variant: Variant,
}

impl<'a, T: Scalar> Net<'a, T> {
    pub fn new(params: &'a ModelParams<T>, binding: &'a Binding, variant: Variant) -> Self {
        Self { params, binding, variant }
    }

    fn cfg(&self) -> &ModelConfig {
        &self.params.config
    }

    fn base(&self, name: &str) -> Var {
        self.params.base_var(self.binding, name)
    }

    fn extra(&self, name: &str) -> Var {
        self.params.extra_var(self.binding, name)
    }

    fn linear(&self, g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.base(&format!("{prefix}.gain"));
        let bias = self.base(&format!("{prefix}.bias"));
        g.layer_norm(x, gain, bias, T::lit(LN_EPS))
    }

    /// `z + up(relu(down(z)))`, skipped entirely for the base variant.
    fn adapter(&self, g: &mut Graph<T>, z: Var, prefix: &str) -> Result<Var> {
        if self.variant == Variant::Base {
            return Ok(z);
        }
        let h = self.linear(
            g,
            z,
            self.extra(&format!("{prefix}.down_w")),
            self.extra(&format!("{prefix}.down_b")),
        )?;
        let h = g.relu(h);
        let u = self.linear(g, h, self.extra(&format!("{prefix}.up_w")), self.extra(&format!("{prefix}.up_b")))?;
        g.add(z, u)
    }

    /// Pre-norm attention sublayer; returns the residual stream and the
    /// attention node.
    fn attention_block(
        &self,
        g: &mut Graph<T>,
        x: Var,
        memory: Option<Var>,
        prefix: &str,
        layout: AttentionLayout,
    ) -> Result<(Var, Var)> {
        let h = self.norm(g, x, &format!("{prefix}_norm"))?;
        let kv_src = memory.unwrap_or(h);
        let p = |m: &str| self.base(&format!("{prefix}.{m}"));
        let q = self.linear(g, h, p("wq"), p("bq"))?;
        let k = self.linear(g, kv_src, p("wk"), p("bk"))?;
        let v = self.linear(g, kv_src, p("wv"), p("bv"))?;
        let a = g.attention(q, k, v, layout)?;
        let o = self.linear(g, a, p("wo"), p("bo"))?;
        let o = self.adapter(g, o, &format!("{prefix}_adapter"))?;
        Ok((g.add(x, o)?, a))
    }

    fn ffn_block(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.norm(g, x, &format!("{prefix}_norm"))?;
        let p = |m: &str| self.base(&format!("{prefix}.{m}"));
        let h = self.linear(g, h, p("w1"), p("b1"))?;
        let h = g.relu(h);
        let o = self.linear(g, h, p("w2"), p("b2"))?;
        let o = self.adapter(g, o, &format!("{prefix}_adapter"))?;
        g.add(x, o)
    }

    fn check_tokens(&self, what: &str, toks: &[TokenId]) -> Result<()> {
        if toks.is_empty() {
            return Err(Error::Input(format!("empty {what}")));
        }
        if toks.len() > self.cfg().max_len {
            return Err(Error::Input(format!(
                "{what} length {} exceeds max_len {}",
                toks.len(),
                self.cfg().max_len
            )));
        }
        if let Some(&t) = toks.iter().find(|&&t| t as usize >= self.cfg().vocab_size) {
            return Err(Error::Input(format!("{what} token {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Visual token of each image: `relu(i · W + b)`.
    pub fn project_images(&self, g: &mut Graph<T>, images: &[&[T]]) -> Result<Var> {
        let dim = self.cfg().image_dim;
        let mut data = Vec::with_capacity(images.len() * dim);
        for img in images {
            if img.len() != dim {
                return Err(Error::Input(format!("image has {} values, expected {dim}", img.len())));
            }
            data.extend_from_slice(img);
        }
        let x = g.constant(Tensor::new(vec![images.len(), dim], data)?);
        let h = self.linear(g, x, self.extra("projector.w"), self.extra("projector.b"))?;
        Ok(g.relu(h))
    }

    /// Encodes each source; an image, when given, becomes one extra token
    /// placed before the text.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        sources: &[&[TokenId]],
        images: &[Option<&[T]>],
    ) -> Result<EncodedBatch> {
        if sources.is_empty() || sources.len() != images.len() {
            return Err(Error::Input(format!("{} sources with {} image slots", sources.len(), images.len())));
        }
        if self.variant == Variant::Base && images.iter().any(Option::is_some) {
            return Err(Error::Input("the text-only base model takes no image".into()));
        }
        let d = self.cfg().d_model;
        let mut ids = Vec::new();
        let mut lens = Vec::with_capacity(sources.len());
        for src in sources {
            self.check_tokens("source", src)?;
            ids.extend(src.iter().map(|&t| t as usize));
            lens.push(src.len());
        }
        let emb = g.gather_rows(self.base("src_embed"), &ids)?;
        let pe = g.constant(positions_tensor(&lens, d)?);
        let text = g.add(emb, pe)?;

        let present: Vec<&[T]> = images.iter().flatten().copied().collect();
        let (x, segments) = if present.is_empty() {
            let mut off = 0;
            let segs = lens
                .iter()
                .map(|&n| {
                    let s = EncSegment { offset: off, len: n, visual: None };
                    off += n;
                    s
                })
                .collect();
            (text, segs)
        } else {
            let mut vis = self.project_images(g, &present)?;
            if self.cfg().visual_position_encoding {
                let row = position_encoding::<T>(self.cfg().max_len, d);
                let data = row.iter().copied().cycle().take(present.len() * d).collect();
                let pe = g.constant(Tensor::new(vec![present.len(), d], data)?);
                vis = g.add(vis, pe)?;
            }
            let joined = g.concat_rows(&[text, vis])?;
            let n_text: usize = lens.iter().sum();
            let mut order = Vec::with_capacity(n_text + present.len());
            let mut segs = Vec::with_capacity(lens.len());
            let (mut text_off, mut img_idx) = (0, 0);
            for (&n, img) in lens.iter().zip(images) {
                let offset = order.len();
                let visual = if img.is_some() {
                    order.push(n_text + img_idx);
                    img_idx += 1;
                    Some(0)
                } else {
                    None
                };
                order.extend(text_off..text_off + n);
                text_off += n;
                segs.push(EncSegment { offset, len: order.len() - offset, visual });
            }
            (g.gather_rows(joined, &order)?, segs)
        };

        let heads = self.cfg().n_heads;
        let layout = AttentionLayout {
            heads,
            segments: segments
                .iter()
                .map(|s| AttentionSegment::full(s.offset, s.len, s.offset, s.len))
                .collect(),
        };
        let mut x = x;
        for l in 0..self.cfg().n_layers_enc {
            let [attn, ffn] = ENC_SUBLAYERS;
            x = self.attention_block(g, x, None, &format!("enc.{l}.{attn}"), layout.clone())?.0;
            x = self.ffn_block(g, x, &format!("enc.{l}.{ffn}"))?;
        }
        let states = self.norm(g, x, "enc.final_norm")?;
        Ok(EncodedBatch { states, segments })
    }

    /// Teacher-forced decoder pass. `memory[i]` selects the encoder segment
    /// prefix `i` attends to; cross-attention never sees the visual token.
    pub fn decode(
        &self,
        g: &mut Graph<T>,
        enc: &EncodedBatch,
        prefixes: &[&[TokenId]],
        memory: &[usize],
    ) -> Result<DecodedBatch> {
        if prefixes.is_empty() || prefixes.len() != memory.len() {
            return Err(Error::Input(format!("{} prefixes with {} memory slots", prefixes.len(), memory.len())));
        }
        let d = self.cfg().d_model;
        let mut ids = Vec::new();
        let mut lens = Vec::with_capacity(prefixes.len());
        let mut offsets = Vec::with_capacity(prefixes.len());
        for p in prefixes {
            self.check_tokens("prefix", p)?;
            if p[0] != BOS {
                return Err(Error::Input("prefix must start with BOS".into()));
            }
            offsets.push(ids.len());
            ids.extend(p.iter().map(|&t| t as usize));
            lens.push(p.len());
        }
        let emb = g.gather_rows(self.base("tgt_embed"), &ids)?;
        let pe = g.constant(positions_tensor(&lens, d)?);
        let mut x = g.add(emb, pe)?;

        let heads = self.cfg().n_heads;
        let self_layout = AttentionLayout {
            heads,
            segments: offsets
                .iter()
                .zip(&lens)
                .map(|(&o, &n)| AttentionSegment { causal: true, ..AttentionSegment::full(o, n, o, n) })
                .collect(),
        };
        let mut cross_segments = Vec::with_capacity(prefixes.len());
        for ((&o, &n), &m) in offsets.iter().zip(&lens).zip(memory) {
            let seg = enc
                .segments
                .get(m)
                .ok_or_else(|| Error::Input(format!("memory index {m} out of range")))?;
            cross_segments.push(AttentionSegment {
                key_mask: seg.key_mask(),
                ..AttentionSegment::full(o, n, seg.offset, seg.len)
            });
        }
        let cross_layout = AttentionLayout { heads, segments: cross_segments };

        let mut cross_attention = Vec::with_capacity(self.cfg().n_layers_dec);
        for l in 0..self.cfg().n_layers_dec {
            let [s, c, f] = DEC_SUBLAYERS;
            x = self.attention_block(g, x, None, &format!("dec.{l}.{s}"), self_layout.clone())?.0;
            let (nx, a) =
                self.attention_block(g, x, Some(enc.states), &format!("dec.{l}.{c}"), cross_layout.clone())?;
            cross_attention.push(a);
            x = self.ffn_block(g, nx, &format!("dec.{l}.{f}"))?;
        }
        let h = self.norm(g, x, "dec.final_norm")?;
        let logits = self.linear(g, h, self.base("out.w"), self.base("out.b"))?;
        Ok(DecodedBatch { logits, offsets, cross_attention })
    }
}
