//! Synthetic bilingual world with ambiguous words, sense images and
//! contrastive test instances.
//!
//! Source sentences are sequences of plain words, at most one ambiguous
//! word, and optionally one context cue revealing the ambiguous word's
//! sense. Translation is word by word. Images are noisy copies of a
//! per-(word, sense) centroid; sentences without an ambiguous word get an
//! image drawn around a random centroid.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoding::{beam_search, BeamConfig};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TokenId, Transformer, BOS, EOS, N_SPECIAL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub n_plain_words: usize,
    pub n_ambiguous_words: usize,
    /// Cue words per sense class; a cue of class `s` reveals sense `s` of
    /// whichever ambiguous word it accompanies.
    pub n_cues_per_sense: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub ambiguity_rate: f64,
    /// Chance that an ambiguous sentence of the parallel split carries a cue.
    pub context_cue_rate: f64,
    /// Same, for the captions of the multimodal training split.
    pub caption_cue_rate: f64,
    pub image_dim: usize,
    /// Image noise has standard deviation `1 / separation` around unit
    /// Gaussian centroids.
    pub sense_cluster_separation: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_plain_words: 14,
            n_ambiguous_words: 8,
            n_cues_per_sense: 2,
            min_sentence_len: 3,
            max_sentence_len: 6,
            ambiguity_rate: 0.6,
            context_cue_rate: 0.4,
            caption_cue_rate: 0.8,
            image_dim: 16,
            sense_cluster_separation: 2.0,
            seed: 7,
        }
    }
}

impl WorldSpec {
    /// Vocabulary size the world needs, special tokens included.
    pub fn vocab_needed(&self) -> usize {
        N_SPECIAL + 2 * self.n_plain_words + 3 * self.n_ambiguous_words + 4 * self.n_cues_per_sense
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_plain_words == 0 {
            return bad("n_plain_words must be positive".into());
        }
        if self.min_sentence_len < 2 || self.min_sentence_len > self.max_sentence_len {
            return bad(format!(
                "sentence length range [{}, {}] must satisfy 2 ≤ min ≤ max",
                self.min_sentence_len, self.max_sentence_len
            ));
        }
        for (name, v) in [
            ("ambiguity_rate", self.ambiguity_rate),
            ("context_cue_rate", self.context_cue_rate),
            ("caption_cue_rate", self.caption_cue_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.image_dim == 0 {
            return bad("image_dim must be positive".into());
        }
        if !(self.sense_cluster_separation.is_finite() && self.sense_cluster_separation > 0.0) {
            return bad(format!("sense_cluster_separation must be positive, got {}", self.sense_cluster_separation));
        }
        if self.context_cue_rate.max(self.caption_cue_rate) > 0.0 && self.n_ambiguous_words > 0 && self.n_cues_per_sense == 0 {
            return bad("context cues requested but n_cues_per_sense is 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousWord {
    pub source: TokenId,
    pub senses: [TokenId; 2],
    pub centroids: [Vec<f64>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CueWord {
    pub source: TokenId,
    pub target: TokenId,
    pub sense: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub vocab_size: usize,
    /// (source, target) pairs.
    pub plain: Vec<(TokenId, TokenId)>,
    pub ambiguous: Vec<AmbiguousWord>,
    pub cues: Vec<CueWord>,
}

/// What a source sentence contains, as far as ambiguity goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceInfo {
    /// (position, ambiguous word index)
    pub ambiguous: Option<(usize, usize)>,
    /// Sense class of the first cue word present.
    pub cue_sense: Option<usize>,
}

pub fn generate_world(spec: &WorldSpec, vocab_size: usize) -> Result<World> {
    spec.validate()?;
    let need = spec.vocab_needed();
    if need > vocab_size {
        return Err(Error::Config(format!("world needs {need} token ids but the vocabulary has {vocab_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut next = N_SPECIAL as TokenId;
    let mut take = |n: usize| {
        let start = next;
        next += n as TokenId;
        start..next
    };
    let src_plain = take(spec.n_plain_words);
    let src_amb = take(spec.n_ambiguous_words);
    let src_cue = take(2 * spec.n_cues_per_sense);
    let tgt_plain = take(spec.n_plain_words);
    let tgt_sense = take(2 * spec.n_ambiguous_words);
    let tgt_cue = take(2 * spec.n_cues_per_sense);

    // Target words are a seeded permutation so the map is not the identity
    // shifted by a constant.
    let mut perm: Vec<TokenId> = tgt_plain.collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let plain = src_plain.zip(perm).collect();
    let tgt_sense: Vec<TokenId> = tgt_sense.collect();
    let ambiguous = src_amb
        .enumerate()
        .map(|(w, source)| AmbiguousWord {
            source,
            senses: [tgt_sense[2 * w], tgt_sense[2 * w + 1]],
            centroids: [0, 1].map(|_| (0..spec.image_dim).map(|_| rng.sample(StandardNormal)).collect()),
        })
        .collect();
    let cues = src_cue
        .zip(tgt_cue)
        .enumerate()
        .map(|(k, (source, target))| CueWord { source, target, sense: k / spec.n_cues_per_sense.max(1) })
        .collect();
    Ok(World { spec: spec.clone(), vocab_size, plain, ambiguous, cues })
}

impl World {
    pub fn has_contrastive(&self) -> bool {
        !self.ambiguous.is_empty()
    }

    pub fn info(&self, source: &[TokenId]) -> SourceInfo {
        let ambiguous = source
            .iter()
            .enumerate()
            .find_map(|(p, t)| self.ambiguous.iter().position(|a| a.source == *t).map(|w| (p, w)));
        let cue_sense = source.iter().find_map(|t| self.cues.iter().find(|c| c.source == *t).map(|c| c.sense));
        SourceInfo { ambiguous, cue_sense }
    }

    /// Word-by-word translation; the ambiguous word (if any) takes `sense`.
    pub fn translate(&self, source: &[TokenId], sense: usize) -> Result<Vec<TokenId>> {
        source
            .iter()
            .map(|&t| {
                if let Some(&(_, y)) = self.plain.iter().find(|(x, _)| *x == t) {
                    Ok(y)
                } else if let Some(a) = self.ambiguous.iter().find(|a| a.source == t) {
                    Ok(a.senses[sense])
                } else if let Some(c) = self.cues.iter().find(|c| c.source == t) {
                    Ok(c.target)
                } else {
                    Err(Error::Input(format!("token {t} is not a source word")))
                }
            })
            .collect()
    }

    /// Sense expressed at `position` of a target sentence, if that token is
    /// one of word `word`'s sense translations.
    pub fn sense_at(&self, target: &[TokenId], position: usize, word: usize) -> Option<usize> {
        let t = *target.get(position)?;
        self.ambiguous[word].senses.iter().position(|&s| s == t)
    }

    /// Centroid plus Gaussian noise of standard deviation `1/separation`.
    pub fn sample_image(&self, word: usize, sense: usize, rng: &mut impl Rng) -> Vec<f64> {
        let sigma = 1.0 / self.spec.sense_cluster_separation;
        self.ambiguous[word].centroids[sense]
            .iter()
            .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Image for a sentence with no ambiguous word: a random sense cluster.
    pub fn distractor_image(&self, rng: &mut impl Rng) -> Vec<f64> {
        if self.ambiguous.is_empty() {
            let sigma = 1.0 / self.spec.sense_cluster_separation;
            return (0..self.spec.image_dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        }
        let w = rng.random_range(0..self.ambiguous.len());
        let s = rng.random_range(0..2);
        self.sample_image(w, s, rng)
    }

    /// (word, sense) of the nearest centroid.
    pub fn nearest_sense(&self, image: &[f64]) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (w, a) in self.ambiguous.iter().enumerate() {
            for (s, c) in a.centroids.iter().enumerate() {
                let d: f64 = c.iter().zip(image).map(|(x, y)| (x - y) * (x - y)).sum();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some(((w, s), d));
                }
            }
        }
        best.map(|(k, _)| k)
    }
}

/// A translation pair. Targets are stored without BOS/EOS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: u64,
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub img: Option<Vec<f64>>,
}

impl Example {
    /// Target framed by BOS and EOS.
    pub fn framed_target(&self) -> Vec<TokenId> {
        frame(&self.tgt)
    }
}

pub fn frame(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut t = Vec::with_capacity(tokens.len() + 2);
    t.push(BOS);
    t.extend_from_slice(tokens);
    t.push(EOS);
    t
}

/// One source with two (image, translation) pairs; `tgt_a` is correct
/// under `img_a` and `tgt_b` under `img_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveExample {
    pub id: u64,
    pub src: Vec<TokenId>,
    pub img_a: Vec<f64>,
    pub tgt_a: Vec<TokenId>,
    pub img_b: Vec<f64>,
    pub tgt_b: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub pretrain_parallel: usize,
    pub mmt_train: usize,
    pub val_contrastive: usize,
    pub val_translation: usize,
    pub test_contrastive: usize,
    pub test_translation: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            pretrain_parallel: 20000,
            mmt_train: 8000,
            val_contrastive: 64,
            val_translation: 64,
            test_contrastive: 400,
            test_translation: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub pretrain_parallel: Vec<Example>,
    pub mmt_train: Vec<Example>,
    pub val_contrastive: Vec<ContrastiveExample>,
    pub val_translation: Vec<Example>,
    pub test_contrastive: Vec<ContrastiveExample>,
    pub test_translation: Vec<Example>,
}

pub const SPLIT_NAMES: [&str; 6] =
    ["pretrain_parallel", "mmt_train", "val_contrastive", "val_translation", "test_contrastive", "test_translation"];

/// Per-example generator, seeded from (world seed, split, index).
fn example_rng(world: &World, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(world.spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ split);
    rng.set_stream(index as u64);
    rng
}

const PRETRAIN_SPLIT: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Ambiguity {
    /// Ambiguous at `ambiguity_rate`, cued at the given rate.
    Sampled(f64),
    /// Never ambiguous.
    None,
    /// Exactly one ambiguous word and no cue.
    CueFree,
}

struct Drawn {
    src: Vec<TokenId>,
    /// (position, word, sense)
    ambiguous: Option<(usize, usize, usize)>,
}

fn draw_sentence(world: &World, rng: &mut ChaCha8Rng, mode: Ambiguity) -> Drawn {
    let s = &world.spec;
    let len = rng.random_range(s.min_sentence_len..=s.max_sentence_len);
    let mut src: Vec<TokenId> = (0..len).map(|_| world.plain.choose(rng).expect("plain words").0).collect();
    let ambiguous = match mode {
        Ambiguity::None => false,
        Ambiguity::CueFree => true,
        Ambiguity::Sampled(_) => world.has_contrastive() && rng.random_bool(s.ambiguity_rate),
    };
    if !ambiguous || !world.has_contrastive() {
        return Drawn { src, ambiguous: None };
    }
    let pos = rng.random_range(0..len);
    let word = rng.random_range(0..world.ambiguous.len());
    let sense = rng.random_range(0..2);
    src[pos] = world.ambiguous[word].source;
    if matches!(mode, Ambiguity::Sampled(r) if rng.random_bool(r)) {
        let mut cpos = rng.random_range(0..len - 1);
        if cpos >= pos {
            cpos += 1;
        }
        let class: Vec<&CueWord> = world.cues.iter().filter(|c| c.sense == sense).collect();
        src[cpos] = class.choose(rng).expect("cue words").source;
    }
    Drawn { src, ambiguous: Some((pos, word, sense)) }
}

fn translation_example(world: &World, split: u64, id: usize, mode: Ambiguity, with_image: bool) -> Example {
    let mut rng = example_rng(world, split, id);
    let mut d = draw_sentence(world, &mut rng, mode);
    if split == PRETRAIN_SPLIT && id % 2 == 1 {
        // an odd index mirrors a cue-free partner with the other sense
        let mut prev = example_rng(world, split, id - 1);
        let p = draw_sentence(world, &mut prev, mode);
        if let Some((pos, w, s)) = p.ambiguous {
            if world.info(&p.src).cue_sense.is_none() {
                d = Drawn { src: p.src, ambiguous: Some((pos, w, 1 - s)) };
            }
        }
    }
    let sense = d.ambiguous.map_or(0, |a| a.2);
    let tgt = world.translate(&d.src, sense).expect("generated from the lexicon");
    let img = with_image.then(|| match d.ambiguous {
        Some((_, w, s)) => world.sample_image(w, s, &mut rng),
        None => world.distractor_image(&mut rng),
    });
    Example { id: id as u64, src: d.src, tgt, img }
}

fn contrastive_example(world: &World, split: u64, id: usize) -> ContrastiveExample {
    let mut rng = example_rng(world, split, id);
    let d = draw_sentence(world, &mut rng, Ambiguity::CueFree);
    let (_, w, a) = d.ambiguous.expect("cue-free draws are ambiguous");
    let b = 1 - a;
    ContrastiveExample {
        id: id as u64,
        tgt_a: world.translate(&d.src, a).expect("lexicon"),
        tgt_b: world.translate(&d.src, b).expect("lexicon"),
        img_a: world.sample_image(w, a, &mut rng),
        img_b: world.sample_image(w, b, &mut rng),
        src: d.src,
    }
}

/// All six splits. The multimodal training split carries gold targets until
/// [`pseudo_translate`] replaces them. Fails if contrastive splits are
/// requested from a world without ambiguous words.
pub fn generate_splits(world: &World, sizes: &SplitSizes) -> Result<Splits> {
    if !world.has_contrastive() && (sizes.val_contrastive > 0 || sizes.test_contrastive > 0) {
        return Err(Error::Config("the world has no ambiguous words, so no contrastive set can be built".into()));
    }
    let tr = |split: u64, n: usize, mode: Ambiguity, img: bool| -> Vec<Example> {
        (0..n).into_par_iter().map(|i| translation_example(world, split, i, mode, img)).collect()
    };
    let co = |split: u64, n: usize| -> Vec<ContrastiveExample> {
        (0..n).into_par_iter().map(|i| contrastive_example(world, split, i)).collect()
    };
    Ok(Splits {
        pretrain_parallel: tr(PRETRAIN_SPLIT, sizes.pretrain_parallel, Ambiguity::Sampled(world.spec.context_cue_rate), false),
        mmt_train: tr(2, sizes.mmt_train, Ambiguity::Sampled(world.spec.caption_cue_rate), true),
        val_contrastive: co(3, sizes.val_contrastive),
        val_translation: tr(4, sizes.val_translation, Ambiguity::None, true),
        test_contrastive: co(5, sizes.test_contrastive),
        test_translation: tr(6, sizes.test_translation, Ambiguity::None, true),
    })
}

/// Which targets the multimodal training split uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    #[default]
    Pseudo,
    Gold,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoStats {
    pub total: usize,
    pub dropped: usize,
    pub unambiguous: usize,
    pub unambiguous_mismatch: usize,
    pub cued: usize,
    pub cued_match: usize,
    pub uncued: usize,
    /// How often the base chose sense 0 / sense 1 / neither on uncued
    /// ambiguous sentences.
    pub uncued_senses: [usize; 3],
}

impl PseudoStats {
    pub fn unambiguous_mismatch_rate(&self) -> f64 {
        ratio(self.unambiguous_mismatch, self.unambiguous)
    }

    pub fn cued_match_rate(&self) -> f64 {
        ratio(self.cued_match, self.cued)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Replaces each example's target with the frozen base's beam translation
/// of its source. Examples whose search does not finish are dropped.
pub fn pseudo_translate(
    base: &ModelParams<f64>,
    world: &World,
    examples: &[Example],
    beam: &BeamConfig,
    targets: TargetSource,
) -> Result<(Vec<Example>, PseudoStats)> {
    let model = Transformer::base(base);
    let decoded: Vec<Option<Vec<TokenId>>> = match targets {
        TargetSource::Gold => examples.iter().map(|e| Some(e.tgt.clone())).collect(),
        TargetSource::Pseudo => examples
            .par_iter()
            .map(|e| match beam_search(&model, &e.src, None, beam) {
                Ok(h) if h.finished => Ok(Some(h.tokens[1..h.tokens.len() - 1].to_vec())),
                Ok(_) => Ok(None),
                Err(Error::Input(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?,
    };
    let mut stats = PseudoStats { total: examples.len(), ..Default::default() };
    let mut out = Vec::with_capacity(examples.len());
    for (e, y) in examples.iter().zip(decoded) {
        let Some(y) = y else {
            stats.dropped += 1;
            continue;
        };
        let info = world.info(&e.src);
        match (info.ambiguous, info.cue_sense) {
            (None, _) => {
                stats.unambiguous += 1;
                if world.translate(&e.src, 0).ok().as_ref() != Some(&y) {
                    stats.unambiguous_mismatch += 1;
                }
            }
            (Some((p, w)), Some(cue)) => {
                stats.cued += 1;
                if world.sense_at(&y, p, w) == Some(cue) {
                    stats.cued_match += 1;
                }
            }
            (Some((p, w)), None) => {
                stats.uncued += 1;
                stats.uncued_senses[world.sense_at(&y, p, w).unwrap_or(2)] += 1;
            }
        }
        out.push(Example { tgt: y, ..e.clone() });
    }
    Ok((out, stats))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes `world.json` and one JSONL file per split into `dir`.
pub fn write_corpus(dir: &Path, world: &World, splits: &Splits) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("world.json"), serde_json::to_vec_pretty(world)?)?;
    write_jsonl(&dir.join("pretrain_parallel.jsonl"), &splits.pretrain_parallel)?;
    write_jsonl(&dir.join("mmt_train.jsonl"), &splits.mmt_train)?;
    write_jsonl(&dir.join("val_contrastive.jsonl"), &splits.val_contrastive)?;
    write_jsonl(&dir.join("val_translation.jsonl"), &splits.val_translation)?;
    write_jsonl(&dir.join("test_contrastive.jsonl"), &splits.test_contrastive)?;
    write_jsonl(&dir.join("test_translation.jsonl"), &splits.test_translation)?;
    Ok(())
}

pub fn read_world(dir: &Path) -> Result<World> {
    let path = dir.join("world.json");
    let bytes = std::fs::read(&path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_corpus(dir: &Path) -> Result<(World, Splits)> {
    let need = |name: &str| {
        let p = dir.join(format!("{name}.jsonl"));
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Input(format!("missing split file {}", p.display())))
        }
    };
    let world = read_world(dir)?;
    let splits = Splits {
        pretrain_parallel: read_jsonl(&need("pretrain_parallel")?)?,
        mmt_train: read_jsonl(&need("mmt_train")?)?,
        val_contrastive: read_jsonl(&need("val_contrastive")?)?,
        val_translation: read_jsonl(&need("val_translation")?)?,
        test_contrastive: read_jsonl(&need("test_contrastive")?)?,
        test_translation: read_jsonl(&need("test_translation")?)?,
    };
    Ok((world, splits))
}
