//! Beam search and classifier-free guidance between the text-only and the
//! multimodal next-token distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenId, BOS, EOS, MASK, PAD};
use crate::numerics::kernels::softmax_row;
use crate::scalar::Scalar;

/// Anything that yields next-token distributions for a source (and image).
pub trait TranslationModel<T: Scalar> {
    /// Per-source state computed once (e.g. encoder output).
    type Context;

    fn vocab_size(&self) -> usize;

    fn prepare(&self, source: &[TokenId], image: Option<&[T]>) -> Result<Self::Context>;

    /// One distribution over the vocabulary per prefix.
    fn next_distributions(&self, ctx: &Self::Context, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<T>>>;

    /// Row `j` is the distribution of `target[j + 1]` given `target[..=j]`.
    fn teacher_forced(&self, ctx: &Self::Context, target: &[TokenId]) -> Result<Vec<Vec<T>>> {
        if target.len() < 2 {
            return Err(Error::Input("target needs a start token and at least one token".into()));
        }
        let prefixes: Vec<&[TokenId]> = (1..target.len()).map(|j| &target[..j]).collect();
        self.next_distributions(ctx, &prefixes)
    }
}

impl<T: Scalar, M: TranslationModel<T> + ?Sized> TranslationModel<T> for &M {
    type Context = M::Context;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn prepare(&self, source: &[TokenId], image: Option<&[T]>) -> Result<Self::Context> {
        (**self).prepare(source, image)
    }

    fn next_distributions(&self, ctx: &Self::Context, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<T>>> {
        (**self).next_distributions(ctx, prefixes)
    }

    fn teacher_forced(&self, ctx: &Self::Context, target: &[TokenId]) -> Result<Vec<Vec<T>>> {
        (**self).teacher_forced(ctx, target)
    }
}

/// Where the guidance blend is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfgSpace {
    /// `log p_text + γ (log p_mm − log p_text)`, renormalized.
    #[default]
    Log,
    /// `p_text + γ (p_mm − p_text)`, negatives clipped to 0, renormalized.
    ProbClip,
}

/// Probabilities are floored here before taking logs.
pub const CFG_FLOOR: f64 = 1e-12;

/// Guidance scale γ ≥ 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GuidanceScale(f64);

impl GuidanceScale {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::Config(format!("guidance scale must be finite and ≥ 0, got {gamma}")));
        }
        Ok(Self(gamma))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GuidanceScale {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GuidanceScale> for f64 {
    fn from(g: GuidanceScale) -> f64 {
        g.0
    }
}

/// Blends the text-only and multimodal distributions with scale γ.
/// γ = 0 returns `p_text` and γ = 1 returns `p_mm` exactly.
pub fn cfg_distribution<T: Scalar>(p_text: &[T], p_mm: &[T], gamma: GuidanceScale, space: CfgSpace) -> Result<Vec<T>> {
    if p_text.len() != p_mm.len() || p_text.is_empty() {
        return Err(Error::Input(format!(
            "guidance needs distributions over one vocabulary, got {} and {}",
            p_text.len(),
            p_mm.len()
        )));
    }
    let g = gamma.get();
    if g == 1.0 {
        return Ok(p_mm.to_vec());
    }
    if g == 0.0 {
        return Ok(p_text.to_vec());
    }
    let g = T::lit(g);
    match space {
        CfgSpace::Log => {
            let floor = T::lit(CFG_FLOOR);
            let logits: Vec<T> = p_text
                .iter()
                .zip(p_mm)
                .map(|(&t, &m)| {
                    let lt = t.max(floor).ln();
                    lt + g * (m.max(floor).ln() - lt)
                })
                .collect();
            let mut out = vec![T::zero(); logits.len()];
            softmax_row(&logits, &mut out);
            Ok(out)
        }
        CfgSpace::ProbClip => {
            let mut out: Vec<T> =
                p_text.iter().zip(p_mm).map(|(&t, &m)| (t + g * (m - t)).max(T::zero())).collect();
            let sum = out.iter().fold(T::zero(), |a, &v| a + v);
            if sum <= T::zero() {
                return Err(Error::Input("guided distribution has no positive mass".into()));
            }
            for v in &mut out {
                *v = *v / sum;
            }
            Ok(out)
        }
    }
}

/// The guided model: text-only and multimodal evaluators blended per step.
#[derive(Clone, Debug)]
pub struct Guided<A, B> {
    pub text: A,
    pub multimodal: B,
    pub gamma: GuidanceScale,
    pub space: CfgSpace,
}

impl<A, B> Guided<A, B> {
    pub fn new(text: A, multimodal: B, gamma: GuidanceScale, space: CfgSpace) -> Self {
        Self { text, multimodal, gamma, space }
    }
}

impl<T, A, B> TranslationModel<T> for Guided<A, B>
where
    T: Scalar,
    A: TranslationModel<T>,
    B: TranslationModel<T>,
{
    /// Either side is skipped at the endpoint where it has no weight.
    type Context = (Option<A::Context>, Option<B::Context>);

    fn vocab_size(&self) -> usize {
        self.multimodal.vocab_size()
    }

    fn prepare(&self, source: &[TokenId], image: Option<&[T]>) -> Result<Self::Context> {
        if self.text.vocab_size() != self.multimodal.vocab_size() {
            return Err(Error::Input("guided models must share the vocabulary".into()));
        }
        let g = self.gamma.get();
        let text = if g != 1.0 { Some(self.text.prepare(source, None)?) } else { None };
        let mm = if g != 0.0 { Some(self.multimodal.prepare(source, image)?) } else { None };
        Ok((text, mm))
    }

    fn next_distributions(&self, ctx: &Self::Context, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<T>>> {
        self.blend(
            ctx.0.as_ref().map(|c| self.text.next_distributions(c, prefixes)).transpose()?,
            ctx.1.as_ref().map(|c| self.multimodal.next_distributions(c, prefixes)).transpose()?,
        )
    }

    fn teacher_forced(&self, ctx: &Self::Context, target: &[TokenId]) -> Result<Vec<Vec<T>>> {
        self.blend(
            ctx.0.as_ref().map(|c| self.text.teacher_forced(c, target)).transpose()?,
            ctx.1.as_ref().map(|c| self.multimodal.teacher_forced(c, target)).transpose()?,
        )
    }
}

impl<A, B> Guided<A, B> {
    fn blend<T: Scalar>(&self, text: Option<Vec<Vec<T>>>, mm: Option<Vec<Vec<T>>>) -> Result<Vec<Vec<T>>> {
        match (text, mm) {
            (Some(t), Some(m)) => {
                t.iter().zip(&m).map(|(a, b)| cfg_distribution(a, b, self.gamma, self.space)).collect()
            }
            (None, Some(m)) => Ok(m),
            (Some(t), None) => Ok(t),
            (None, None) => Err(Error::Input("guided context is empty".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum number of generated tokens, the end token included.
    pub max_len: usize,
    pub bos: TokenId,
    pub eos: TokenId,
    /// Tokens never generated.
    pub banned: Vec<TokenId>,
}

impl BeamConfig {
    /// Width-4 search over the model vocabulary with the reserved ids
    /// (padding, start, mask) excluded.
    pub fn new(width: usize, max_len: usize) -> Self {
        Self { width, max_len, bos: BOS, eos: EOS, banned: vec![PAD, BOS, MASK] }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self::new(4, 23)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<T> {
    /// Start token, generated tokens, and the end token when finished.
    pub tokens: Vec<TokenId>,
    pub log_prob: T,
    /// `false` when no hypothesis reached the end token within `max_len`.
    pub finished: bool,
}

/// Length-unnormalized beam search. Each step keeps the `width` best
/// expansions; expansions ending in the end token retire. Ties break by
/// parent rank, then by lower token id.
pub fn beam_search<T, M>(model: &M, source: &[TokenId], image: Option<&[T]>, cfg: &BeamConfig) -> Result<Hypothesis<T>>
where
    T: Scalar,
    M: TranslationModel<T> + ?Sized,
{
    if cfg.width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let ctx = model.prepare(source, image)?;
    let vocab = model.vocab_size();
    let mut allowed = vec![true; vocab];
    for &b in &cfg.banned {
        if let Some(a) = allowed.get_mut(b as usize) {
            *a = false;
        }
    }

    let mut live: Vec<(Vec<TokenId>, T)> = vec![(vec![cfg.bos], T::zero())];
    let mut finished: Vec<(Vec<TokenId>, T)> = Vec::new();
    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let prefixes: Vec<&[TokenId]> = live.iter().map(|(p, _)| p.as_slice()).collect();
        let dists = model.next_distributions(&ctx, &prefixes)?;
        let mut cands: Vec<(T, usize, TokenId)> = Vec::with_capacity(live.len() * vocab);
        for (b, ((_, score), dist)) in live.iter().zip(&dists).enumerate() {
            if dist.len() != vocab {
                return Err(Error::Input(format!("distribution over {} tokens, vocabulary {vocab}", dist.len())));
            }
            for (tok, &p) in dist.iter().enumerate() {
                if allowed[tok] && p > T::zero() {
                    cands.push((*score + p.ln(), b, tok as TokenId));
                }
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(cfg.width);
        let mut next = Vec::with_capacity(cands.len());
        for (score, b, tok) in cands {
            let mut seq = live[b].0.clone();
            seq.push(tok);
            if tok == cfg.eos {
                finished.push((seq, score));
            } else {
                next.push((seq, score));
            }
        }
        live = next;
        // Scores only decrease, so no live hypothesis can overtake.
        if let (Some(best_done), Some(best_live)) = (best(&finished), live.first()) {
            if best_done.1 >= best_live.1 {
                break;
            }
        }
    }
    match best(&finished) {
        Some((tokens, log_prob)) => Ok(Hypothesis { tokens: tokens.clone(), log_prob: *log_prob, finished: true }),
        None => {
            let (tokens, log_prob) = best(&live).ok_or_else(|| Error::Input("beam search produced no hypothesis".into()))?;
            Ok(Hypothesis { tokens: tokens.clone(), log_prob: *log_prob, finished: false })
        }
    }
}

fn best<T: Scalar>(hyps: &[(Vec<TokenId>, T)]) -> Option<&(Vec<TokenId>, T)> {
    hyps.iter().fold(None, |acc: Option<&(Vec<TokenId>, T)>, h| match acc {
        Some(a) if a.1 >= h.1 => Some(a),
        _ => Some(h),
    })
}

/// Beam search over the guided blend of `text` and `multimodal`.
#[allow(clippy::too_many_arguments)]
pub fn cfg_beam_search<T, A, B>(
    text: &A,
    multimodal: &B,
    source: &[TokenId],
    image: Option<&[T]>,
    gamma: GuidanceScale,
    space: CfgSpace,
    cfg: &BeamConfig,
) -> Result<Hypothesis<T>>
where
    T: Scalar,
    A: TranslationModel<T>,
    B: TranslationModel<T>,
{
    beam_search(&Guided::new(text, multimodal, gamma, space), source, image, cfg)
}
