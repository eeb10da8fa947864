//! End-to-end stages shared by the command line and the acceptance suite:
//! corpus generation, base pretraining, pseudo-translation, training,
//! evaluation with guidance, and sweeps.

use serde::{Deserialize, Serialize};

use crate::decoding::{cfg_beam_search, BeamConfig, CfgSpace, Guided, GuidanceScale};
use crate::error::{Error, Result};
use crate::evaluation::{bleu, commute_accuracy, token_accuracy, translate_all, ContrastiveInstance, ContrastiveResult, BLEU_CONVENTION};
use crate::model::{ModelConfig, ModelParams, Transformer};
use crate::synthcorpus::{
    frame, generate_splits, generate_world, pseudo_translate, ContrastiveExample, Example, PseudoStats, SplitSizes,
    Splits, TargetSource, World, WorldSpec,
};
use crate::training::{pretrain_base, train, PretrainOutcome, TrainConfig, TrainMode, TrainOutcome, TranslationPair, Validation};

pub const DEFAULT_GAMMAS: [f64; 6] = [1.0, 1.25, 1.5, 2.0, 2.5, 3.0];
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub sizes: SplitSizes,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub targets: TargetSource,
    pub beam_width: usize,
    /// Generated-token budget per decode, end token included.
    pub max_decode_len: usize,
    pub cfg_space: CfgSpace,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            sizes: SplitSizes::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig {
                lr: 2e-3,
                batch_size: 32,
                max_steps: 1000,
                eval_every: 0,
                ..TrainConfig::default()
            },
            train: TrainConfig { lr: 1e-3, max_steps: 800, eval_every: 200, ..TrainConfig::default() },
            targets: TargetSource::Pseudo,
            beam_width: 4,
            max_decode_len: 12,
            cfg_space: CfgSpace::Log,
            gammas: DEFAULT_GAMMAS.to_vec(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        if self.world.image_dim != self.model.image_dim {
            return Err(Error::Config(format!(
                "world image_dim {} differs from model image_dim {}",
                self.world.image_dim, self.model.image_dim
            )));
        }
        if self.world.max_sentence_len > self.model.max_len {
            return Err(Error::Config("sentences longer than the model's max_len".into()));
        }
        if self.beam_width == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("beam_width and max_decode_len must be positive".into()));
        }
        for &g in &self.gammas {
            GuidanceScale::new(g)?;
        }
        Ok(())
    }

    /// Points every stage at one seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.pretrain.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn beam(&self) -> BeamConfig {
        BeamConfig::new(self.beam_width, self.max_decode_len.min(self.model.max_len - 1))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serializes")
    }

    /// Comment block embedded at the top of CSV outputs.
    pub fn provenance(&self) -> Vec<String> {
        vec![format!("zerommt {}", crate::VERSION), format!("config {}", serde_json::to_string(self).expect("plain data"))]
    }
}

pub fn generate(cfg: &RunConfig) -> Result<(World, Splits)> {
    let world = generate_world(&cfg.world, cfg.model.vocab_size)?;
    let splits = generate_splits(&world, &cfg.sizes)?;
    Ok((world, splits))
}

pub fn pretrain(cfg: &RunConfig, splits: &Splits) -> Result<PretrainOutcome> {
    pretrain_base(&cfg.model, &splits.pretrain_parallel, &cfg.pretrain)
}

pub fn pseudo_targets(cfg: &RunConfig, base: &ModelParams<f64>, world: &World, splits: &Splits) -> Result<(Vec<Example>, PseudoStats)> {
    pseudo_translate(base, world, &splits.mmt_train, &cfg.beam(), cfg.targets)
}

pub fn contrastive_instances(set: &[ContrastiveExample]) -> Vec<ContrastiveInstance<f64>> {
    set.iter()
        .map(|c| ContrastiveInstance {
            id: c.id,
            source: c.src.clone(),
            image_a: c.img_a.clone(),
            target_a: frame(&c.tgt_a),
            image_b: c.img_b.clone(),
            target_b: frame(&c.tgt_b),
        })
        .collect()
}

fn translation_pairs(set: &[Example]) -> Vec<TranslationPair> {
    set.iter()
        .map(|e| TranslationPair { source: e.src.clone(), image: e.img.clone(), reference: e.tgt.clone() })
        .collect()
}

pub fn validation(cfg: &RunConfig, splits: &Splits) -> Validation {
    Validation {
        contrastive: contrastive_instances(&splits.val_contrastive),
        translation: translation_pairs(&splits.val_translation),
        beam: cfg.beam(),
    }
}

pub fn train_model(cfg: &RunConfig, frozen: &ModelParams<f64>, mmt_train: &[Example], splits: &Splits) -> Result<TrainOutcome> {
    let mut out = train(&cfg.train, mmt_train, frozen, &validation(cfg, splits))?;
    out.best.run_config = cfg.to_value();
    Ok(out)
}

/// Text-only diagnostics of a pretrained base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseReport {
    /// Teacher-forced argmax accuracy on the unambiguous test pairs.
    pub token_accuracy: f64,
    /// Over cue-free ambiguous test sources, at the ambiguous position: the
    /// largest probability either sense gets, and the smallest.
    pub max_sense_probability: f64,
    pub min_sense_probability: f64,
    pub mean_max_sense_probability: f64,
}

pub fn base_report(base: &ModelParams<f64>, world: &World, splits: &Splits) -> Result<BaseReport> {
    let model = Transformer::base(base);
    let pairs: Vec<_> = splits.test_translation.iter().map(|e| (e.src.clone(), None, e.framed_target())).collect();
    let (hit, total) = token_accuracy(&model, &pairs)?;
    let mut hi = 0.0f64;
    let mut lo = 1.0f64;
    let mut sum = 0.0;
    for c in &splits.test_contrastive {
        let (p, w) = world
            .info(&c.src)
            .ambiguous
            .ok_or_else(|| Error::Input(format!("contrastive source {} has no ambiguous word", c.id)))?;
        let dists = crate::decoding::TranslationModel::teacher_forced(&model, &crate::decoding::TranslationModel::prepare(&model, &c.src, None)?, &frame(&c.tgt_a))?;
        // dists[p] predicts framed target position p + 1, the ambiguous slot
        let senses = world.ambiguous[w].senses.map(|s| dists[p][s as usize]);
        hi = hi.max(senses[0].max(senses[1]));
        lo = lo.min(senses[0].min(senses[1]));
        sum += senses[0].max(senses[1]);
    }
    Ok(BaseReport {
        token_accuracy: hit as f64 / total as f64,
        max_sense_probability: hi,
        min_sense_probability: lo,
        mean_max_sense_probability: sum / splits.test_contrastive.len().max(1) as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub code_version: String,
    pub gamma: f64,
    pub cfg_space: CfgSpace,
    /// Contrastive result under guidance at `gamma`.
    pub contrastive: ContrastiveResult,
    /// Contrastive accuracy of the multimodal model without guidance.
    pub contrastive_accuracy_plain: f64,
    /// BLEU on the unambiguous test translations at `gamma`.
    pub bleu: f64,
    pub bleu_convention: String,
    /// Share of contrastive orientations whose beam translation uses the
    /// image's sense at the ambiguous position, percent.
    pub sense_accuracy: f64,
    pub run_config: serde_json::Value,
}

/// Which network plays the multimodal role in evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evaluated {
    Multimodal,
    /// The frozen base, image-blind.
    Base,
}

pub fn evaluate(
    cfg: &RunConfig,
    params: &ModelParams<f64>,
    who: Evaluated,
    world: &World,
    splits: &Splits,
    gamma: f64,
) -> Result<EvalReport> {
    let gamma = GuidanceScale::new(gamma)?;
    let text = Transformer::base(params);
    let mm = match who {
        Evaluated::Multimodal => Transformer::multimodal(params),
        Evaluated::Base => Transformer::base(params),
    };
    let guided = Guided::new(text, mm, gamma, cfg.cfg_space);
    let instances = contrastive_instances(&splits.test_contrastive);
    let contrastive = commute_accuracy(&guided, &instances)?;
    let plain = if gamma.get() == 1.0 {
        contrastive.accuracy
    } else {
        commute_accuracy(&mm, &instances)?.accuracy
    };

    let beam = cfg.beam();
    let inputs: Vec<_> = splits.test_translation.iter().map(|e| (e.src.clone(), e.img.clone())).collect();
    let hyps = translate_all(&guided, &inputs, &beam)?;
    let refs: Vec<_> = splits.test_translation.iter().map(|e| e.tgt.clone()).collect();
    let bleu = bleu(&hyps, &refs, 4)?;

    let mut hits = 0usize;
    let mut total = 0usize;
    for c in &splits.test_contrastive {
        let (p, w) = world.info(&c.src).ambiguous.ok_or_else(|| Error::Input("contrastive source without ambiguity".into()))?;
        for (img, tgt) in [(&c.img_a, &c.tgt_a), (&c.img_b, &c.tgt_b)] {
            let h = cfg_beam_search(&text, &mm, &c.src, Some(img), gamma, cfg.cfg_space, &beam)?;
            let want = world.sense_at(tgt, p, w);
            hits += usize::from(want.is_some() && world.sense_at(&h.tokens[1..], p, w) == want);
            total += 1;
        }
    }
    Ok(EvalReport {
        code_version: crate::VERSION.to_string(),
        gamma: gamma.get(),
        cfg_space: cfg.cfg_space,
        contrastive,
        contrastive_accuracy_plain: plain,
        bleu,
        bleu_convention: BLEU_CONVENTION.to_string(),
        sense_accuracy: 100.0 * hits as f64 / total.max(1) as f64,
        run_config: cfg.to_value(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub contrastive_accuracy: f64,
    pub bleu: f64,
}

/// Evaluates one checkpoint at each guidance scale.
pub fn sweep_gamma(cfg: &RunConfig, params: &ModelParams<f64>, world: &World, splits: &Splits, gammas: &[f64]) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    gammas
        .iter()
        .map(|&g| {
            let r = evaluate(cfg, params, Evaluated::Multimodal, world, splits, g)?;
            Ok(SweepRow { value: g, contrastive_accuracy: r.contrastive.accuracy, bleu: r.bleu })
        })
        .collect()
}

/// Retrains from the same frozen base for each λ and evaluates at γ = 1.
pub fn sweep_lambda(
    cfg: &RunConfig,
    frozen: &ModelParams<f64>,
    mmt_train: &[Example],
    world: &World,
    splits: &Splits,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    lambdas
        .iter()
        .map(|&l| {
            let mut c = cfg.clone();
            c.train.lambda = l;
            c.train.mode = TrainMode::Full;
            let out = train_model(&c, frozen, mmt_train, splits)?;
            let r = evaluate(&c, &out.best.params, Evaluated::Multimodal, world, splits, 1.0)?;
            Ok(SweepRow { value: l, contrastive_accuracy: r.contrastive.accuracy, bleu: r.bleu })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(mut out: W, param: &str, comments: &[String], rows: &[SweepRow]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([param, "contrastive_accuracy", "bleu"]).map_err(crate::evaluation::csv_err)?;
    for r in rows {
        w.write_record([r.value.to_string(), r.contrastive_accuracy.to_string(), r.bleu.to_string()])
            .map_err(crate::evaluation::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
