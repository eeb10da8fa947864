//! Adam, base pretraining, adapter/projector training and model selection.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::BeamConfig;
use crate::error::{Error, Result};
use crate::evaluation::{bleu, commute_accuracy, csv_err, translate_all, ContrastiveInstance};
use crate::model::{apply_source_mask, build_model, Checkpoint, ModelConfig, ModelParams, ParamStore, TokenId, Transformer, Variant};
use crate::numerics::{Gradients, Graph, Tensor, Var};
use crate::objectives::{
    combined_loss, frozen_distributions, kl_penalty, teacher_forced_logits, translation_nll, vmlm_loss, Batch,
    BatchItem, KlMode, LossWeights, LOG_FLOOR,
};
use crate::scalar::Scalar;
use crate::synthcorpus::{frame, Example};

/// Which loss terms a run optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// `vmlm + λ·kl`
    #[default]
    Full,
    /// `λ·kl` only.
    NoVmlm,
    /// `vmlm` only.
    NoKl,
    /// `vmlm + λ·nll`, where `nll` is teacher-forced translation loss on the
    /// unmasked source with the image. Logged in the `kl` column.
    MmtNoKl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub lambda: f64,
    pub mask_rate: f64,
    /// Validate (and record a selection candidate) every this many steps;
    /// 0 validates only after the last step.
    pub eval_every: usize,
    pub mode: TrainMode,
    pub kl_mode: KlMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps_adam: 1e-8,
            batch_size: 32,
            max_steps: 1000,
            seed: 0,
            lambda: 0.1,
            mask_rate: 0.25,
            eval_every: 100,
            mode: TrainMode::Full,
            kl_mode: KlMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{n} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps_adam.is_finite() && self.eps_adam > 0.0) {
            return bad(format!("eps_adam must be positive, got {}", self.eps_adam));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return bad("batch_size and max_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return bad(format!("mask_rate must lie in [0, 1], got {}", self.mask_rate));
        }
        LossWeights::new(self.lambda)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps_adam }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments per store slot, plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(slots: usize) -> Self {
        Self { step: 0, moments: vec![None; slots] }
    }
}

/// One bias-corrected Adam update of the store slots named in `grads`.
/// A gradient addressed to a frozen tensor is an error and nothing is
/// updated.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[(usize, Tensor<T>)],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.moments.len() != store.len() {
        return Err(Error::Input(format!(
            "optimizer state has {} slots, store has {}",
            state.moments.len(),
            store.len()
        )));
    }
    for (slot, g) in grads {
        let e = store
            .entries()
            .get(*slot)
            .ok_or_else(|| Error::Input(format!("gradient for unknown slot {slot}")))?;
        if e.frozen {
            return Err(Error::FrozenGradient(e.name.clone()));
        }
        if e.tensor.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("{}: parameter {:?}, gradient {:?}", e.name, e.tensor.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (slot, g) in grads {
        let n = g.len();
        let (m, v) = state.moments[*slot].get_or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
        let p = store.entries_mut()[*slot].tensor.data_mut();
        for i in 0..n {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

fn collect_grads<T: Scalar>(grads: &mut Gradients<T>, vars: &[Var]) -> Vec<(usize, Tensor<T>)> {
    vars.iter().enumerate().filter_map(|(i, &v)| grads.take(v).map(|g| (i, g))).collect()
}

/// Epoch-wise shuffled batch indices.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), pos: n, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            for i in (1..self.order.len()).rev() {
                self.order.swap(i, self.rng.random_range(0..=i));
            }
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, detail: format!("{what} loss is {v}") })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    /// Trained base (marked frozen) with fresh extras.
    pub params: ModelParams<f64>,
    /// Mean token NLL per step.
    pub losses: Vec<f64>,
}

/// Trains the text-only network on parallel pairs. `lambda`, `mask_rate`,
/// `mode` and `eval_every` are ignored. The learning rate decays linearly
/// to zero over `max_steps`.
pub fn pretrain_base(model: &ModelConfig, corpus: &[Example], cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("empty pretraining corpus".into()));
    }
    let mut params = build_model::<f64>(model, cfg.seed)?;
    params.base.set_frozen(false);
    let mut state = AdamState::new(params.base.len());
    let mut batcher = Batcher::new(corpus.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.max_steps);
    for step in 1..=cfg.max_steps {
        let items =
            batcher.next(cfg.batch_size).into_iter().map(|i| BatchItem::unmasked(corpus[i].src.clone(), frame(&corpus[i].tgt), None)).collect();
        let batch = Batch::new(items)?;
        let mut g = Graph::new();
        let bind = params.bind_base(&mut g);
        let logits = teacher_forced_logits(&mut g, &params, &bind, Variant::Base, &batch, false, false)?;
        let gold: Vec<usize> = batch.items.iter().flat_map(|i| i.target[1..].iter().map(|&t| t as usize)).collect();
        let loss = g.cross_entropy(logits, &gold, LOG_FLOOR)?;
        let lv = g.value(loss).item();
        check_finite(step, "pretraining", lv)?;
        losses.push(lv);
        let mut grads = g.backward(loss)?;
        let grads = collect_grads(&mut grads, bind.base());
        // linear decay to zero settles the base into calibrated sense splits
        let mut adam = cfg.adam();
        adam.lr *= 1.0 - (step - 1) as f64 / cfg.max_steps as f64;
        adam_step(&mut params.base, &grads, &mut state, &adam)?;
    }
    params.base.set_frozen(true);
    Ok(PretrainOutcome { params, losses })
}

/// Unambiguous translation pair used for validation BLEU.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationPair {
    pub source: Vec<TokenId>,
    pub image: Option<Vec<f64>>,
    /// Without BOS/EOS.
    pub reference: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub contrastive: Vec<ContrastiveInstance<f64>>,
    pub translation: Vec<TranslationPair>,
    pub beam: BeamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValScores {
    pub contrastive: f64,
    pub bleu: f64,
}

/// Contrastive accuracy and BLEU of the multimodal network.
pub fn validate_model(params: &ModelParams<f64>, val: &Validation) -> Result<ValScores> {
    if val.contrastive.is_empty() || val.translation.is_empty() {
        return Err(Error::Input("both validation sets must be nonempty".into()));
    }
    let model = Transformer::multimodal(params);
    let contrastive = commute_accuracy(&model, &val.contrastive)?.accuracy;
    let inputs: Vec<_> = val.translation.iter().map(|p| (p.source.clone(), p.image.clone())).collect();
    let hyps = translate_all(&model, &inputs, &val.beam)?;
    let refs: Vec<_> = val.translation.iter().map(|p| p.reference.clone()).collect();
    Ok(ValScores { contrastive, bleu: bleu(&hyps, &refs, 4)? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub vmlm: f64,
    pub kl: f64,
    pub total: f64,
    pub val_contrastive: Option<f64>,
    pub val_bleu: Option<f64>,
}

pub const LOG_HEADER: [&str; 6] = ["step", "vmlm", "kl", "total", "val_contrastive", "val_bleu"];

/// Writes `# `-prefixed comment lines, then the CSV log.
pub fn write_log_csv<W: Write>(mut out: W, comments: &[String], rows: &[LogRow]) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.vmlm.to_string(),
            r.kl.to_string(),
            r.total.to_string(),
            opt(r.val_contrastive),
            opt(r.val_bleu),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Validation scores of one selection candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub step: usize,
    pub contrastive: f64,
    pub bleu: f64,
}

/// Index of the best candidate under the equal-weight sum of min-max
/// normalized contrastive accuracy and BLEU, with the per-candidate
/// scores. Ties go to the earliest step.
pub fn select_model(candidates: &[CandidateScore]) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::Input("no checkpoints to select from".into()));
    }
    let norm = |f: fn(&CandidateScore) -> f64| -> Vec<f64> {
        let vals: Vec<f64> = candidates.iter().map(f).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vals.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect()
    };
    let c = norm(|s| s.contrastive);
    let b = norm(|s| s.bleu);
    let scores: Vec<f64> = c.iter().zip(&b).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && candidates[i].step < candidates[best].step);
        if better {
            best = i;
        }
    }
    Ok((best, scores))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Selected checkpoint.
    pub best: Checkpoint<f64>,
    /// Parameters after the last step.
    pub last: ModelParams<f64>,
    pub log: Vec<LogRow>,
    pub candidates: Vec<CandidateScore>,
    pub selection_scores: Vec<f64>,
}

/// Trains adapters and projector on (source, target, image) triples with
/// the base frozen. Extras start from `cfg.seed`.
pub fn train(cfg: &TrainConfig, examples: &[Example], frozen: &ModelParams<f64>, val: &Validation) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    if let Some(e) = examples.iter().find(|e| e.img.is_none()) {
        return Err(Error::Input(format!("training example {} has no image", e.id)));
    }
    let weights = LossWeights::new(cfg.lambda)?;
    let mut params = frozen.with_extras_from(&build_model(&frozen.config, cfg.seed)?)?;
    let mut state = AdamState::new(params.extras.len());
    let mut batcher = Batcher::new(examples.len(), cfg.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mask_rng.set_stream(1);
    let mut log = Vec::with_capacity(cfg.max_steps);
    let mut candidates = Vec::new();
    let mut snapshots = Vec::new();

    for step in 1..=cfg.max_steps {
        let items = batcher
            .next(cfg.batch_size)
            .into_iter()
            .map(|i| {
                let e = &examples[i];
                let (masked_source, mask) = apply_source_mask(&e.src, cfg.mask_rate, &mut mask_rng);
                BatchItem { source: e.src.clone(), masked_source, mask, target: frame(&e.tgt), image: e.img.clone() }
            })
            .collect();
        let batch = Batch::new(items)?;
        let mut g = Graph::new();
        let bind = params.bind(&mut g, true);
        let (v, k, total) = match cfg.mode {
            TrainMode::Full => {
                let probs = frozen_distributions(frozen, &batch)?;
                let v = vmlm_loss(&mut g, &params, &bind, &batch)?;
                let k = kl_penalty(&mut g, &params, &bind, &batch, &probs, cfg.kl_mode)?;
                (Some(v), Some(k), combined_loss(&mut g, v, k, weights)?)
            }
            TrainMode::NoVmlm => {
                let probs = frozen_distributions(frozen, &batch)?;
                let k = kl_penalty(&mut g, &params, &bind, &batch, &probs, cfg.kl_mode)?;
                (None, Some(k), g.scale(k, weights.lambda))
            }
            TrainMode::NoKl => {
                let v = vmlm_loss(&mut g, &params, &bind, &batch)?;
                (Some(v), None, v)
            }
            TrainMode::MmtNoKl => {
                let v = vmlm_loss(&mut g, &params, &bind, &batch)?;
                let n = translation_nll(&mut g, &params, &bind, &batch)?;
                (Some(v), Some(n), combined_loss(&mut g, v, n, weights)?)
            }
        };
        let value = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item());
        let row_total = g.value(total).item();
        check_finite(step, "training", row_total)?;
        let mut row = LogRow { step, vmlm: value(v), kl: value(k), total: row_total, val_contrastive: None, val_bleu: None };
        let mut grads = g.backward(total)?;
        if bind.base().iter().any(|&b| grads.get(b).is_some()) {
            return Err(Error::FrozenGradient("base tensor received a gradient".into()));
        }
        let grads = collect_grads(&mut grads, bind.extras());
        adam_step(&mut params.extras, &grads, &mut state, &cfg.adam())?;

        let due = step == cfg.max_steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if due {
            let s = validate_model(&params, val)?;
            row.val_contrastive = Some(s.contrastive);
            row.val_bleu = Some(s.bleu);
            candidates.push(CandidateScore { step, contrastive: s.contrastive, bleu: s.bleu });
            snapshots.push(params.extras.clone());
        }
        log.push(row);
    }

    let (best, selection_scores) = select_model(&candidates)?;
    let mut chosen = params.clone();
    chosen.extras = snapshots.swap_remove(best);
    let checkpoint = Checkpoint {
        params: chosen,
        step: candidates[best].step,
        selection_score: Some(selection_scores[best]),
        run_config: serde_json::to_value(cfg)?,
    };
    Ok(TrainOutcome { best: checkpoint, last: params, log, candidates, selection_scores })
}
