use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::scalar::Scalar;

/// Token id in the shared source/target vocabulary.
pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const MASK: TokenId = 3;
/// Number of reserved ids at the start of the vocabulary.
pub const N_SPECIAL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ffn: usize,
    pub image_dim: usize,
    pub adapter_reduction: usize,
    pub max_len: usize,
    /// Add a positional encoding to the visual token as well.
    pub visual_position_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 64,
            n_heads: 4,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ffn: 128,
            image_dim: 16,
            adapter_reduction: 8,
            max_len: 24,
            visual_position_encoding: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size <= N_SPECIAL {
            return bad(format!("vocab_size {} leaves no room past the special tokens", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.adapter_reduction == 0 || self.d_model / self.adapter_reduction == 0 {
            return bad(format!(
                "adapter bottleneck d_model/{} is empty",
                self.adapter_reduction
            ));
        }
        if self.d_ffn == 0 || self.image_dim == 0 || self.max_len < 2 {
            return bad("d_ffn, image_dim must be positive and max_len ≥ 2".into());
        }
        if self.n_layers_enc == 0 || self.n_layers_dec == 0 {
            return bad("at least one encoder and one decoder layer required".into());
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> usize {
        self.d_model / self.adapter_reduction
    }

    pub fn n_adapters(&self) -> usize {
        2 * self.n_layers_enc + 3 * self.n_layers_dec
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// Insertion-ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<NamedTensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, frozen: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(NamedTensor { name, tensor, frozen });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entries(&self) -> &[NamedTensor<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let entries = self
            .entries
            .iter()
            .map(|e| NamedTensor { name: e.name.clone(), tensor: e.tensor.cast(), frozen: e.frozen })
            .collect();
        ParamStore { entries, index: self.index.clone() }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for e in &mut self.entries {
            e.frozen = frozen;
        }
    }
}

/// Frozen base weights plus the trainable adapters and visual projector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub base: ParamStore<T>,
    pub extras: ParamStore<T>,
}

/// Graph handles for every parameter, in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    base: Vec<Var>,
    extras: Vec<Var>,
}

impl Binding {
    pub fn base(&self) -> &[Var] {
        &self.base
    }

    pub fn extras(&self) -> &[Var] {
        &self.extras
    }

    /// The same binding with extra `slot` routed to `var`.
    pub fn with_extra(&self, slot: usize, var: Var) -> Binding {
        let mut b = self.clone();
        b.extras[slot] = var;
        b
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Puts all parameters on the tape. Base tensors are always constants;
    /// extras are trainable leaves when `train_extras` is set.
    pub fn bind(&self, g: &mut Graph<T>, train_extras: bool) -> Binding {
        let base = self.base.entries().iter().map(|e| g.constant(e.tensor.clone())).collect();
        let extras = self
            .extras
            .entries()
            .iter()
            .map(|e| g.leaf(e.tensor.clone(), train_extras))
            .collect();
        Binding { base, extras }
    }

    /// Binding for training the base itself: base tensors are trainable
    /// leaves and extras are constants.
    pub fn bind_base(&self, g: &mut Graph<T>) -> Binding {
        let base = self.base.entries().iter().map(|e| g.param(e.tensor.clone())).collect();
        let extras = self.extras.entries().iter().map(|e| g.constant(e.tensor.clone())).collect();
        Binding { base, extras }
    }

    pub(crate) fn base_var(&self, b: &Binding, name: &str) -> Var {
        b.base[self.base.position(name).unwrap_or_else(|| panic!("missing base parameter {name}"))]
    }

    pub(crate) fn extra_var(&self, b: &Binding, name: &str) -> Var {
        b.extras[self.extras.position(name).unwrap_or_else(|| panic!("missing extra parameter {name}"))]
    }

    /// The same weights in another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { config: self.config.clone(), base: self.base.cast(), extras: self.extras.cast() }
    }

    pub fn trainable_count(&self) -> usize {
        self.extras.scalar_count()
    }

    /// This model's base combined with `other`'s extras.
    pub fn with_extras_from(&self, other: &ModelParams<T>) -> Result<Self> {
        if other.config != self.config {
            return Err(Error::Config("extras come from a different model configuration".into()));
        }
        Ok(Self { config: self.config.clone(), base: self.base.clone(), extras: other.extras.clone() })
    }
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], bound)
}

fn ones<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::vector(vec![T::one(); n])
}

fn add_attention<T: Scalar>(s: &mut ParamStore<T>, rng: &mut ChaCha8Rng, p: &str, d: usize) {
    s.insert(format!("{p}_norm.gain"), ones(d), true);
    s.insert(format!("{p}_norm.bias"), Tensor::zeros(&[d]), true);
    for m in ["q", "k", "v", "o"] {
        s.insert(format!("{p}.w{m}"), xavier(rng, d, d), true);
        s.insert(format!("{p}.b{m}"), Tensor::zeros(&[d]), true);
    }
}

fn add_ffn<T: Scalar>(s: &mut ParamStore<T>, rng: &mut ChaCha8Rng, p: &str, d: usize, f: usize) {
    s.insert(format!("{p}_norm.gain"), ones(d), true);
    s.insert(format!("{p}_norm.bias"), Tensor::zeros(&[d]), true);
    s.insert(format!("{p}.w1"), xavier(rng, d, f), true);
    s.insert(format!("{p}.b1"), Tensor::zeros(&[f]), true);
    s.insert(format!("{p}.w2"), xavier(rng, f, d), true);
    s.insert(format!("{p}.b2"), Tensor::zeros(&[d]), true);
}

fn add_adapter<T: Scalar>(s: &mut ParamStore<T>, rng: &mut ChaCha8Rng, p: &str, d: usize, r: usize) {
    s.insert(format!("{p}.down_w"), xavier(rng, d, r), false);
    s.insert(format!("{p}.down_b"), Tensor::zeros(&[r]), false);
    s.insert(format!("{p}.up_w"), Tensor::zeros(&[r, d]), false);
    s.insert(format!("{p}.up_b"), Tensor::zeros(&[d]), false);
}

/// Sublayer names that carry an adapter, per encoder and decoder layer.
pub(crate) const ENC_SUBLAYERS: [&str; 2] = ["attn", "ffn"];
pub(crate) const DEC_SUBLAYERS: [&str; 3] = ["self", "cross", "ffn"];

/// Initializes a model deterministically from `seed`.
///
/// Base weights get Xavier-uniform noise, norms start at identity, biases
/// at zero. Adapter up-projections start at zero so adapters are the
/// identity; the visual projector weight is random (a zero weight behind a
/// ReLU would never receive gradient) and its bias zero.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, d, f, r) = (config.vocab_size, config.d_model, config.d_ffn, config.bottleneck());

    let mut base = ParamStore::new();
    base.insert("src_embed", uniform(&mut rng, &[v, d], 1.0), true);
    base.insert("tgt_embed", uniform(&mut rng, &[v, d], 1.0), true);
    for l in 0..config.n_layers_enc {
        add_attention(&mut base, &mut rng, &format!("enc.{l}.attn"), d);
        add_ffn(&mut base, &mut rng, &format!("enc.{l}.ffn"), d, f);
    }
    base.insert("enc.final_norm.gain", ones(d), true);
    base.insert("enc.final_norm.bias", Tensor::zeros(&[d]), true);
    for l in 0..config.n_layers_dec {
        add_attention(&mut base, &mut rng, &format!("dec.{l}.self"), d);
        add_attention(&mut base, &mut rng, &format!("dec.{l}.cross"), d);
        add_ffn(&mut base, &mut rng, &format!("dec.{l}.ffn"), d, f);
    }
    base.insert("dec.final_norm.gain", ones(d), true);
    base.insert("dec.final_norm.bias", Tensor::zeros(&[d]), true);
    base.insert("out.w", xavier(&mut rng, d, v), true);
    base.insert("out.b", Tensor::zeros(&[v]), true);

    // Separate stream so extras do not shift when the base layout changes.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ada9_7e55_0001);
    let mut extras = ParamStore::new();
    for l in 0..config.n_layers_enc {
        for s in ENC_SUBLAYERS {
            add_adapter(&mut extras, &mut rng, &format!("enc.{l}.{s}_adapter"), d, r);
        }
    }
    for l in 0..config.n_layers_dec {
        for s in DEC_SUBLAYERS {
            add_adapter(&mut extras, &mut rng, &format!("dec.{l}.{s}_adapter"), d, r);
        }
    }
    extras.insert("projector.w", xavier(&mut rng, config.image_dim, d), false);
    extras.insert("projector.b", Tensor::zeros(&[d]), false);

    Ok(ModelParams { config: config.clone(), base, extras })
}
