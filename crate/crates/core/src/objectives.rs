//! Training objectives: visually conditioned masked-source translation loss,
//! the KL penalty towards the frozen text-only model, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Binding, ModelParams, Net, TokenId, Variant, BOS, EOS};
use crate::numerics::{kernels::softmax_row, Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Floor applied inside every logarithm of the losses.
pub const LOG_FLOOR: f64 = 1e-12;

/// One teacher-forced example. `masked_source` is `source` with the
/// positions in `mask` replaced by MASK.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem<T> {
    pub source: Vec<TokenId>,
    pub masked_source: Vec<TokenId>,
    pub mask: Vec<usize>,
    pub target: Vec<TokenId>,
    pub image: Option<Vec<T>>,
}

impl<T: Scalar> BatchItem<T> {
    /// An item with nothing masked.
    pub fn unmasked(source: Vec<TokenId>, target: Vec<TokenId>, image: Option<Vec<T>>) -> Self {
        Self { masked_source: source.clone(), source, mask: Vec::new(), target, image }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub items: Vec<BatchItem<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(items: Vec<BatchItem<T>>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        for (n, it) in items.iter().enumerate() {
            if it.target.len() < 2 || it.target[0] != BOS || it.target[it.target.len() - 1] != EOS {
                return Err(Error::Input(format!("batch item {n}: target must start with BOS and end with EOS")));
            }
            if it.masked_source.len() != it.source.len() || it.mask.iter().any(|&p| p >= it.source.len()) {
                return Err(Error::Input(format!("batch item {n}: mask does not fit the source")));
            }
        }
        Ok(Self { items })
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        let items = self
            .items
            .iter()
            .map(|it| BatchItem {
                source: it.source.clone(),
                masked_source: it.masked_source.clone(),
                mask: it.mask.clone(),
                target: it.target.clone(),
                image: it.image.as_ref().map(|v| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect()),
            })
            .collect();
        Batch { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of predicted target tokens (every target token after BOS).
    pub fn target_tokens(&self) -> usize {
        self.items.iter().map(|i| i.target.len() - 1).sum()
    }

    fn gold(&self) -> Vec<usize> {
        self.items.iter().flat_map(|i| i.target[1..].iter().map(|&t| t as usize)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and ≥ 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

/// How the KL penalty sums over the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Full-vocabulary divergence at every target position.
    #[default]
    Full,
    /// Only the realized target token's term `p(y) ln(p(y)/q(y))`.
    Realized,
}

/// Teacher-forced logits `[target tokens, vocab]` of `variant` on the given
/// sources. Images are passed only when `with_image` is set.
pub fn teacher_forced_logits<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    binding: &Binding,
    variant: Variant,
    batch: &Batch<T>,
    masked: bool,
    with_image: bool,
) -> Result<Var> {
    let net = Net::new(params, binding, variant);
    let sources: Vec<&[TokenId]> =
        batch.items.iter().map(|i| if masked { &i.masked_source[..] } else { &i.source[..] }).collect();
    let images: Vec<Option<&[T]>> =
        batch.items.iter().map(|i| if with_image { i.image.as_deref() } else { None }).collect();
    let enc = net.encode(g, &sources, &images)?;
    let prefixes: Vec<&[TokenId]> = batch.items.iter().map(|i| &i.target[..i.target.len() - 1]).collect();
    let memory: Vec<usize> = (0..batch.len()).collect();
    Ok(net.decode(g, &enc, &prefixes, &memory)?.logits)
}

/// Mean over target tokens of `−ln f_{θ,β}(y_j | y_<j, x_masked, i)`.
pub fn vmlm_loss<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, binding: &Binding, batch: &Batch<T>) -> Result<Var> {
    let logits = teacher_forced_logits(g, params, binding, Variant::Multimodal, batch, true, true)?;
    g.cross_entropy(logits, &batch.gold(), T::lit(LOG_FLOOR))
}

/// Teacher-forced NLL of the multimodal model on unmasked sources (the
/// plain translation objective).
pub fn translation_nll<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    binding: &Binding,
    batch: &Batch<T>,
) -> Result<Var> {
    let logits = teacher_forced_logits(g, params, binding, Variant::Multimodal, batch, false, true)?;
    g.cross_entropy(logits, &batch.gold(), T::lit(LOG_FLOOR))
}

/// Next-token distributions of the frozen text-only model at every target
/// position, computed off the differentiation path.
pub fn frozen_distributions<T: Scalar>(frozen: &ModelParams<T>, batch: &Batch<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = frozen.bind(&mut g, false);
    let logits = teacher_forced_logits(&mut g, frozen, &b, Variant::Base, batch, false, false)?;
    let lv = g.value(logits);
    let c = lv.cols();
    let mut out = vec![T::zero(); lv.len()];
    for (src, dst) in lv.data().chunks(c).zip(out.chunks_mut(c)) {
        softmax_row(src, dst);
    }
    Tensor::new(lv.shape().to_vec(), out)
}

/// Mean over target positions of `KL(f_θ ‖ f_{θ,β})` on unmasked sources
/// with the image. `frozen_probs` comes from [`frozen_distributions`].
pub fn kl_penalty<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    binding: &Binding,
    batch: &Batch<T>,
    frozen_probs: &Tensor<T>,
    mode: KlMode,
) -> Result<Var> {
    let logits = teacher_forced_logits(g, params, binding, Variant::Multimodal, batch, false, true)?;
    let target = match mode {
        KlMode::Full => frozen_probs.clone(),
        KlMode::Realized => {
            let c = frozen_probs.cols();
            let mut w = vec![T::zero(); frozen_probs.len()];
            for (r, y) in batch.gold().into_iter().enumerate() {
                w[r * c + y] = frozen_probs.data()[r * c + y];
            }
            Tensor::new(frozen_probs.shape().to_vec(), w)?
        }
    };
    g.kl_div(target, logits, T::lit(LOG_FLOOR))
}

/// `total = vmlm + λ·kl` as one expression.
pub fn combined_loss<T: Scalar>(g: &mut Graph<T>, vmlm: Var, kl: Var, weights: LossWeights) -> Result<Var> {
    let weighted = g.scale(kl, T::lit(weights.lambda));
    g.add(vmlm, weighted)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub vmlm: T,
    pub kl: T,
}

/// Value-only evaluation of the three loss parts.
pub fn evaluate_losses<T: Scalar>(
    params: &ModelParams<T>,
    frozen: &ModelParams<T>,
    batch: &Batch<T>,
    weights: LossWeights,
    mode: KlMode,
) -> Result<LossParts<T>> {
    let probs = frozen_distributions(frozen, batch)?;
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let v = vmlm_loss(&mut g, params, &b, batch)?;
    let k = kl_penalty(&mut g, params, &b, batch, &probs, mode)?;
    let t = combined_loss(&mut g, v, k, weights)?;
    Ok(LossParts { total: g.value(t).item(), vmlm: g.value(v).item(), kl: g.value(k).item() })
}
