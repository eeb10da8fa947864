//! The multimodal translation network: a small pre-norm transformer
//! encoder–decoder (the frozen base) with bottleneck adapters after every
//! sublayer, a visual projector, and a visual token prepended to the
//! encoder input that decoder cross-attention cannot see.

mod checkpoint;
mod forward;
mod masking;
mod params;

pub use checkpoint::{base_bytes, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use forward::{position_encoding, DecodedBatch, EncSegment, EncodedBatch, Net, Variant};
pub use masking::apply_source_mask;
pub use params::{
    build_model, Binding, ModelConfig, ModelParams, NamedTensor, ParamStore, TokenId, BOS, EOS, MASK,
    N_SPECIAL, PAD,
};

use crate::decoding::TranslationModel;
use crate::error::{Error, Result};
use crate::numerics::{kernels::softmax_row, Graph, Tensor};
use crate::scalar::Scalar;

/// Encoder output for one source sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStates<T> {
    /// `[len, d_model]`, visual token (if any) first.
    pub states: Tensor<T>,
    /// Indices of text positions; the visual position is excluded.
    pub text_positions: Vec<usize>,
    pub visual: Option<usize>,
}

/// `relu(W·i + b)` for one image.
pub fn project_image<T: Scalar>(params: &ModelParams<T>, image: &[T]) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let v = Net::new(params, &b, Variant::Multimodal).project_images(&mut g, &[image])?;
    Ok(g.value(v).data().to_vec())
}

/// Runs the encoder on one source. Images are only accepted by the
/// multimodal variant.
pub fn encode<T: Scalar>(
    params: &ModelParams<T>,
    variant: Variant,
    source: &[TokenId],
    image: Option<&[T]>,
) -> Result<EncoderStates<T>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let enc = Net::new(params, &b, variant).encode(&mut g, &[source], &[image])?;
    let seg = &enc.segments[0];
    Ok(EncoderStates {
        states: g.value(enc.states).clone(),
        text_positions: (0..seg.len).filter(|&p| Some(p) != seg.visual).collect(),
        visual: seg.visual,
    })
}

/// Next-token distributions (one per prefix) given cached encoder states.
/// Also returns, per prefix, the cross-attention probability mass that
/// landed on the visual position summed over heads and layers.
pub fn decode_with_attention<T: Scalar>(
    params: &ModelParams<T>,
    variant: Variant,
    enc: &EncoderStates<T>,
    prefixes: &[&[TokenId]],
) -> Result<(Vec<Vec<T>>, Vec<T>)> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let states = g.constant(enc.states.clone());
    let len = enc.states.rows();
    let batch = EncodedBatch { states, segments: vec![EncSegment { offset: 0, len, visual: enc.visual }] };
    let memory = vec![0; prefixes.len()];
    let out = Net::new(params, &b, variant).decode(&mut g, &batch, prefixes, &memory)?;
    let logits = g.value(out.logits);
    let v = logits.cols();
    let mut dists = Vec::with_capacity(prefixes.len());
    for (p, &off) in prefixes.iter().zip(&out.offsets) {
        let mut row = vec![T::zero(); v];
        softmax_row(logits.row(off + p.len() - 1), &mut row);
        dists.push(row);
    }
    let mut visual_mass = vec![T::zero(); prefixes.len()];
    if let Some(vp) = enc.visual {
        for &a in &out.cross_attention {
            let (layout, probs) = g.attention_probs(a).expect("attention node");
            let mut off = 0;
            for (s, mass) in layout.segments.iter().zip(visual_mass.iter_mut()) {
                for h in 0..layout.heads {
                    for i in 0..s.q_len {
                        *mass = *mass + probs[off + (h * s.q_len + i) * s.k_len + vp];
                    }
                }
                off += layout.heads * s.q_len * s.k_len;
            }
        }
    }
    Ok((dists, visual_mass))
}

/// Distribution of the next token after `prefix` (which starts with BOS).
pub fn decode_step<T: Scalar>(
    params: &ModelParams<T>,
    variant: Variant,
    enc: &EncoderStates<T>,
    prefix: &[TokenId],
) -> Result<Vec<T>> {
    if prefix.len() > params.config.max_len {
        return Err(Error::Input(format!(
            "prefix length {} exceeds max_len {}",
            prefix.len(),
            params.config.max_len
        )));
    }
    Ok(decode_with_attention(params, variant, enc, &[prefix])?.0.remove(0))
}

/// A parameter set viewed as one of the two networks.
#[derive(Clone, Copy, Debug)]
pub struct Transformer<'a, T> {
    pub params: &'a ModelParams<T>,
    pub variant: Variant,
}

impl<'a, T: Scalar> Transformer<'a, T> {
    pub fn base(params: &'a ModelParams<T>) -> Self {
        Self { params, variant: Variant::Base }
    }

    pub fn multimodal(params: &'a ModelParams<T>) -> Self {
        Self { params, variant: Variant::Multimodal }
    }
}

impl<T: Scalar> TranslationModel<T> for Transformer<'_, T> {
    type Context = EncoderStates<T>;

    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn prepare(&self, source: &[TokenId], image: Option<&[T]>) -> Result<Self::Context> {
        // The base network is image-blind; it simply never sees the image.
        let image = if self.variant == Variant::Base { None } else { image };
        encode(self.params, self.variant, source, image)
    }

    fn next_distributions(&self, ctx: &Self::Context, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<T>>> {
        Ok(decode_with_attention(self.params, self.variant, ctx, prefixes)?.0)
    }

    fn teacher_forced(&self, ctx: &Self::Context, target: &[TokenId]) -> Result<Vec<Vec<T>>> {
        if target.len() < 2 {
            return Err(Error::Input("target needs BOS and at least one token".into()));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let states = g.constant(ctx.states.clone());
        let len = ctx.states.rows();
        let batch = EncodedBatch { states, segments: vec![EncSegment { offset: 0, len, visual: ctx.visual }] };
        let prefix = &target[..target.len() - 1];
        let out = Net::new(self.params, &b, self.variant).decode(&mut g, &batch, &[prefix], &[0])?;
        let logits = g.value(out.logits);
        Ok((0..logits.rows())
            .map(|r| {
                let mut row = vec![T::zero(); logits.cols()];
                softmax_row(logits.row(r), &mut row);
                row
            })
            .collect())
    }
}
