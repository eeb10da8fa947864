//! Contrastive perplexity scoring, corpus BLEU and token accuracy.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::{beam_search, BeamConfig, TranslationModel};
use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::scalar::Scalar;

/// `exp` of the mean negative log-probability of `target[1..]` under
/// teacher forcing. `target` starts with BOS and ends with EOS.
pub fn sequence_perplexity<T, M>(model: &M, source: &[TokenId], image: Option<&[T]>, target: &[TokenId]) -> Result<T>
where
    T: Scalar,
    M: TranslationModel<T> + ?Sized,
{
    let ctx = model.prepare(source, image)?;
    perplexity_in_context(model, &ctx, target)
}

fn perplexity_in_context<T, M>(model: &M, ctx: &M::Context, target: &[TokenId]) -> Result<T>
where
    T: Scalar,
    M: TranslationModel<T> + ?Sized,
{
    let dists = model.teacher_forced(ctx, target)?;
    let n = target.len() - 1;
    let nll = dists
        .iter()
        .zip(&target[1..])
        .fold(T::zero(), |acc, (d, &y)| acc - d[y as usize].ln());
    Ok((nll / T::lit(n as f64)).exp())
}

/// Perplexities of both candidates and the 0/1 outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveOutcome<T> {
    pub ppl_correct: T,
    pub ppl_wrong: T,
    pub score: u8,
}

impl<T: Scalar> ContrastiveOutcome<T> {
    pub fn from_perplexities(ppl_correct: T, ppl_wrong: T) -> Self {
        Self { ppl_correct, ppl_wrong, score: u8::from(ppl_correct < ppl_wrong) }
    }

    pub fn is_tie(&self) -> bool {
        self.ppl_correct == self.ppl_wrong
    }
}

/// 1 iff the correct translation has strictly lower perplexity.
pub fn contrastive_score<T, M>(
    model: &M,
    source: &[TokenId],
    image: Option<&[T]>,
    correct: &[TokenId],
    wrong: &[TokenId],
) -> Result<ContrastiveOutcome<T>>
where
    T: Scalar,
    M: TranslationModel<T> + ?Sized,
{
    let ctx = model.prepare(source, image)?;
    Ok(ContrastiveOutcome::from_perplexities(
        perplexity_in_context(model, &ctx, correct)?,
        perplexity_in_context(model, &ctx, wrong)?,
    ))
}

/// A contrastive instance as the evaluator sees it. Targets are framed
/// with BOS and EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveInstance<T> {
    pub id: u64,
    pub source: Vec<TokenId>,
    pub image_a: Vec<T>,
    pub target_a: Vec<TokenId>,
    pub image_b: Vec<T>,
    pub target_b: Vec<TokenId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveRow {
    pub id: u64,
    pub orientation: Orientation,
    pub ppl_correct: f64,
    pub ppl_wrong: f64,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveResult {
    /// Percent of evaluations won.
    pub accuracy: f64,
    pub wins: usize,
    pub evaluations: usize,
    pub ties: usize,
    pub mean_ppl_correct: f64,
    pub mean_ppl_wrong: f64,
    pub rows: Vec<ContrastiveRow>,
}

impl ContrastiveResult {
    /// Aggregates rows; the order of `rows` does not affect the counts.
    pub fn from_rows(rows: Vec<ContrastiveRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("no contrastive evaluations".into()));
        }
        let wins = rows.iter().map(|r| r.score as usize).sum();
        let ties = rows.iter().filter(|r| r.ppl_correct == r.ppl_wrong).count();
        let n = rows.len();
        Ok(Self {
            accuracy: wins as f64 / n as f64 * 100.0,
            wins,
            evaluations: n,
            ties,
            mean_ppl_correct: rows.iter().map(|r| r.ppl_correct).sum::<f64>() / n as f64,
            mean_ppl_wrong: rows.iter().map(|r| r.ppl_wrong).sum::<f64>() / n as f64,
            rows,
        })
    }
}

/// Scores every instance in both orientations.
pub fn commute_accuracy<T, M>(model: &M, instances: &[ContrastiveInstance<T>]) -> Result<ContrastiveResult>
where
    T: Scalar,
    M: TranslationModel<T> + Sync + ?Sized,
{
    if instances.is_empty() {
        return Err(Error::Input("empty contrastive set".into()));
    }
    let rows: Vec<[ContrastiveRow; 2]> = instances
        .par_iter()
        .map(|c| {
            let a = contrastive_score(model, &c.source, Some(&c.image_a), &c.target_a, &c.target_b)?;
            let b = contrastive_score(model, &c.source, Some(&c.image_b), &c.target_b, &c.target_a)?;
            let row = |orientation, o: ContrastiveOutcome<T>| ContrastiveRow {
                id: c.id,
                orientation,
                ppl_correct: o.ppl_correct.to_f64_lossy(),
                ppl_wrong: o.ppl_wrong.to_f64_lossy(),
                score: o.score,
            };
            Ok([row(Orientation::A, a), row(Orientation::B, b)])
        })
        .collect::<Result<_>>()?;
    ContrastiveResult::from_rows(rows.into_iter().flatten().collect())
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[ContrastiveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "orientation", "ppl_correct", "ppl_wrong", "score"]).map_err(csv_err)?;
    for r in rows {
        let o = match r.orientation {
            Orientation::A => "a",
            Orientation::B => "b",
        };
        w.write_record([r.id.to_string(), o.into(), r.ppl_correct.to_string(), r.ppl_wrong.to_string(), r.score.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// How BLEU treats n-gram orders that no hypothesis is long enough for.
pub const BLEU_CONVENTION: &str =
    "corpus BLEU, n <= 4, geometric mean over n-gram orders with at least one hypothesis n-gram, brevity penalty";

/// Corpus BLEU in [0, 100] with up to `max_n`-grams.
pub fn bleu<W: Eq + Hash + Clone>(hypotheses: &[Vec<W>], references: &[Vec<W>], max_n: usize) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Input(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    for (h, r) in hypotheses.iter().zip(references) {
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[W], usize> = HashMap::new();
            if r.len() >= n {
                for g in r.windows(n) {
                    *ref_counts.entry(g).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[W], usize> = HashMap::new();
            for g in h.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            totals[n - 1] += h.len() + 1 - n;
            matches[n - 1] += hyp_counts.iter().map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    let orders: Vec<usize> = (0..max_n).filter(|&k| totals[k] > 0).collect();
    if orders.is_empty() || orders.iter().any(|&k| matches[k] == 0) {
        return Ok(0.0);
    }
    let log_mean =
        orders.iter().map(|&k| (matches[k] as f64 / totals[k] as f64).ln()).sum::<f64>() / orders.len() as f64;
    let c: usize = hypotheses.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * bp * log_mean.exp())
}

/// Teacher-forced argmax accuracy over every target token after BOS.
/// Returns (correct, total).
pub fn token_accuracy<T, M>(model: &M, pairs: &[(Vec<TokenId>, Option<Vec<T>>, Vec<TokenId>)]) -> Result<(usize, usize)>
where
    T: Scalar,
    M: TranslationModel<T> + Sync + ?Sized,
{
    let counts: Vec<(usize, usize)> = pairs
        .par_iter()
        .map(|(src, img, tgt)| {
            let ctx = model.prepare(src, img.as_deref())?;
            let dists = model.teacher_forced(&ctx, tgt)?;
            let hits = dists.iter().zip(&tgt[1..]).filter(|(d, &y)| argmax(d) == y as usize).count();
            Ok((hits, tgt.len() - 1))
        })
        .collect::<Result<_>>()?;
    Ok(counts.into_iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1)))
}

/// Lowest index among the maxima.
pub fn argmax<T: Scalar>(d: &[T]) -> usize {
    d.iter().enumerate().fold(0, |best, (i, &v)| if v > d[best] { i } else { best })
}

/// Beam-decodes every (source, image) pair; returns generated tokens with
/// BOS and EOS stripped. Unfinished searches return what they have.
pub fn translate_all<T, M>(model: &M, inputs: &[(Vec<TokenId>, Option<Vec<T>>)], beam: &BeamConfig) -> Result<Vec<Vec<TokenId>>>
where
    T: Scalar,
    M: TranslationModel<T> + Sync + ?Sized,
{
    inputs
        .par_iter()
        .map(|(src, img)| {
            let h = beam_search(model, src, img.as_deref(), beam)?;
            let end = if h.finished { h.tokens.len() - 1 } else { h.tokens.len() };
            Ok(h.tokens[1..end].to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BOS, EOS};
    use proptest::prelude::*;

    /// Distributions looked up by prefix length; the image (if any) adds
    /// `shift` log-odds to token 4 over token 5 at position 1.
    struct Scripted {
        vocab: usize,
        steps: Vec<Vec<f64>>,
        shift: f64,
        blind: bool,
    }

    impl TranslationModel<f64> for Scripted {
        type Context = f64;

        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn prepare(&self, _: &[TokenId], image: Option<&[f64]>) -> Result<f64> {
            Ok(match image {
                Some(i) if !self.blind => i[0] * self.shift,
                _ => 0.0,
            })
        }

        fn next_distributions(&self, ctx: &f64, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let mut d = self.steps[(p.len() - 1).min(self.steps.len() - 1)].clone();
                    if p.len() == 1 && *ctx != 0.0 {
                        let (a, b) = (d[4], d[5]);
                        let z = (a.ln() - b.ln() + ctx).exp();
                        d[4] = (a + b) * z / (1.0 + z);
                        d[5] = (a + b) / (1.0 + z);
                    }
                    d
                })
                .collect())
        }
    }

    fn uniform(v: usize) -> Scripted {
        Scripted { vocab: v, steps: vec![vec![1.0 / v as f64; v]], shift: 0.0, blind: true }
    }

    #[test]
    fn uniform_model_perplexity_is_the_vocabulary_size() {
        let m = uniform(7);
        for t in [vec![BOS, 4, EOS], vec![BOS, 5, 6, 4, EOS]] {
            let p = sequence_perplexity(&m, &[4], None, &t).unwrap();
            assert!((p - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn certain_model_perplexity_is_one() {
        let mut steps = vec![vec![0.0; 6]; 3];
        steps[0][4] = 1.0;
        steps[1][5] = 1.0;
        steps[2][EOS as usize] = 1.0;
        let m = Scripted { vocab: 6, steps, shift: 0.0, blind: true };
        assert_eq!(sequence_perplexity(&m, &[4], None, &[BOS, 4, 5, EOS]).unwrap(), 1.0);
    }

    fn hand_models() -> Vec<(Scripted, Vec<TokenId>)> {
        // ten hand-written two- and three-step distributions over 6 tokens
        let raw: [[[f64; 6]; 3]; 10] = [
            [[0.0, 0.0, 0.1, 0.0, 0.6, 0.3], [0.0, 0.0, 0.7, 0.0, 0.2, 0.1], [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]],
            [[0.1, 0.1, 0.1, 0.1, 0.3, 0.3], [0.2, 0.2, 0.2, 0.2, 0.1, 0.1], [0.0, 0.0, 0.5, 0.0, 0.25, 0.25]],
            [[0.0, 0.0, 0.0, 0.0, 0.5, 0.5], [0.0, 0.0, 0.9, 0.0, 0.05, 0.05], [0.0, 0.0, 0.9, 0.0, 0.1, 0.0]],
            [[0.05, 0.05, 0.3, 0.1, 0.25, 0.25], [0.0, 0.0, 0.4, 0.0, 0.4, 0.2], [0.0, 0.0, 0.8, 0.0, 0.1, 0.1]],
            [[0.0, 0.0, 0.2, 0.0, 0.2, 0.6], [0.0, 0.0, 0.6, 0.0, 0.2, 0.2], [0.0, 0.0, 0.6, 0.0, 0.2, 0.2]],
            [[0.0, 0.0, 0.01, 0.0, 0.98, 0.01], [0.0, 0.0, 0.5, 0.0, 0.5, 0.0], [0.0, 0.0, 0.3, 0.0, 0.3, 0.4]],
            [[0.0, 0.0, 0.3, 0.0, 0.3, 0.4], [0.0, 0.0, 0.35, 0.0, 0.35, 0.3], [0.0, 0.0, 0.7, 0.0, 0.3, 0.0]],
            [[0.2, 0.0, 0.2, 0.2, 0.2, 0.2], [0.0, 0.0, 0.25, 0.25, 0.25, 0.25], [0.0, 0.0, 0.5, 0.5, 0.0, 0.0]],
            [[0.0, 0.0, 0.0, 0.0, 0.75, 0.25], [0.0, 0.0, 0.75, 0.0, 0.0, 0.25], [0.0, 0.0, 0.99, 0.0, 0.0, 0.01]],
            [[0.0, 0.0, 0.4, 0.0, 0.4, 0.2], [0.0, 0.0, 0.1, 0.0, 0.45, 0.45], [0.0, 0.0, 0.95, 0.0, 0.05, 0.0]],
        ];
        let targets: [&[TokenId]; 10] = [
            &[BOS, 4, EOS],
            &[BOS, 5, 4, EOS],
            &[BOS, 5, EOS],
            &[BOS, 4, 5, EOS],
            &[BOS, 5, 5, EOS],
            &[BOS, 4, 4, EOS],
            &[BOS, 5, 4, EOS],
            &[BOS, 4, 3, EOS],
            &[BOS, 4, 5, EOS],
            &[BOS, 4, 5, EOS],
        ];
        raw.iter()
            .zip(targets)
            .map(|(s, t)| (Scripted { vocab: 6, steps: s.iter().map(|r| r.to_vec()).collect(), shift: 0.0, blind: true }, t.to_vec()))
            .collect()
    }

    #[test]
    fn perplexity_matches_scalar_oracle_on_hand_models() {
        for (m, t) in hand_models() {
            // scalar oracle: product of gold probabilities, geometric mean
            let mut prod = 1.0f64;
            for j in 1..t.len() {
                prod *= m.steps[(j - 1).min(2)][t[j] as usize];
            }
            let expect = prod.powf(-1.0 / (t.len() - 1) as f64);
            let got = sequence_perplexity(&m, &[4], None, &t).unwrap();
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
    }

    #[test]
    fn perplexity_falls_as_a_gold_probability_rises() {
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let p = k as f64 / 10.0;
            let m = Scripted {
                vocab: 6,
                steps: vec![vec![0.0, 0.0, 0.0, 0.0, p, 1.0 - p], vec![0.0, 0.0, 0.5, 0.0, 0.5, 0.0]],
                shift: 0.0,
                blind: true,
            };
            let ppl = sequence_perplexity(&m, &[4], None, &[BOS, 4, EOS]).unwrap();
            assert!(ppl < last);
            last = ppl;
        }
    }

    #[test]
    fn contrastive_outcomes() {
        assert_eq!(ContrastiveOutcome::from_perplexities(5.2, 7.1).score, 1);
        assert_eq!(ContrastiveOutcome::from_perplexities(7.1, 5.2).score, 0);
        let tie = ContrastiveOutcome::from_perplexities(3.0, 3.0);
        assert_eq!(tie.score, 0);
        assert!(tie.is_tie());
    }

    fn rows(scores: &[u8]) -> Vec<ContrastiveRow> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ContrastiveRow {
                id: i as u64 / 2,
                orientation: if i % 2 == 0 { Orientation::A } else { Orientation::B },
                ppl_correct: if s == 1 { 1.0 } else { 2.0 },
                ppl_wrong: 1.5,
                score: s,
            })
            .collect()
    }

    #[test]
    fn accuracy_from_hand_rows() {
        let r = ContrastiveResult::from_rows(rows(&[1, 1, 0, 1])).unwrap();
        assert_eq!(r.accuracy, 75.0);
        assert_eq!((r.wins, r.evaluations, r.ties), (3, 4, 0));
        assert!(ContrastiveResult::from_rows(vec![]).is_err());
    }

    fn instances(n: usize) -> Vec<ContrastiveInstance<f64>> {
        (0..n)
            .map(|i| ContrastiveInstance {
                id: i as u64,
                source: vec![4],
                image_a: vec![1.0],
                target_a: vec![BOS, 4, EOS],
                image_b: vec![-1.0],
                target_b: vec![BOS, 5, EOS],
            })
            .collect()
    }

    fn biased(shift: f64, blind: bool) -> Scripted {
        Scripted {
            vocab: 6,
            steps: vec![vec![0.0, 0.0, 0.1, 0.0, 0.55, 0.35], vec![0.0, 0.0, 0.8, 0.0, 0.1, 0.1]],
            shift,
            blind,
        }
    }

    #[test]
    fn image_blind_model_scores_exactly_half() {
        let r = commute_accuracy(&biased(0.0, true), &instances(5)).unwrap();
        assert_eq!(r.ties, 0);
        assert_eq!(r.accuracy, 50.0);
    }

    #[test]
    fn image_following_model_scores_full_marks() {
        let r = commute_accuracy(&biased(3.0, false), &instances(5)).unwrap();
        assert_eq!(r.accuracy, 100.0);
    }

    #[test]
    fn relabeling_pairs_keeps_accuracy() {
        let m = biased(0.3, false);
        let mut inst = instances(3);
        inst[1].image_a = vec![0.2];
        let a = commute_accuracy(&m, &inst).unwrap().accuracy;
        for c in &mut inst {
            std::mem::swap(&mut c.image_a, &mut c.image_b);
            std::mem::swap(&mut c.target_a, &mut c.target_b);
        }
        assert_eq!(commute_accuracy(&m, &inst).unwrap().accuracy, a);
    }

    #[test]
    fn rows_csv_layout() {
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &rows(&[1, 0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,orientation,ppl_correct,ppl_wrong,score\n0,a,1,1.5,1\n0,b,2,1.5,0\n");
    }

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn corpus(pairs: &[(&'static str, &'static str)]) -> (Vec<Vec<&'static str>>, Vec<Vec<&'static str>>) {
        pairs.iter().map(|(h, r)| (words(h), words(r))).unzip()
    }

    /// Independent BLEU: explicit n-gram lists, linear scans for clipping.
    fn oracle_bleu(h: &[Vec<&str>], r: &[Vec<&str>]) -> f64 {
        let mut logs = Vec::new();
        for n in 1..=4 {
            let (mut m, mut t) = (0usize, 0usize);
            for (hy, re) in h.iter().zip(r) {
                let hg: Vec<Vec<&str>> = (0..hy.len().saturating_sub(n - 1)).map(|i| hy[i..i + n].to_vec()).collect();
                let mut rg: Vec<Vec<&str>> =
                    (0..re.len().saturating_sub(n - 1)).map(|i| re[i..i + n].to_vec()).collect();
                t += hg.len();
                for g in hg {
                    if let Some(k) = rg.iter().position(|x| *x == g) {
                        rg.remove(k);
                        m += 1;
                    }
                }
            }
            if t > 0 {
                if m == 0 {
                    return 0.0;
                }
                logs.push((m as f64 / t as f64).ln());
            }
        }
        let c: usize = h.iter().map(Vec::len).sum();
        let rl: usize = r.iter().map(Vec::len).sum();
        let bp = if c >= rl { 1.0 } else { (1.0 - rl as f64 / c as f64).exp() };
        100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }

    pub(crate) const FIXED_CORPORA: [&[(&str, &str)]; 10] = [
        &[("a b c", "a b c d")],
        &[("a b c d", "a b c d")],
        &[("x y z", "a b c")],
        &[("the cat sat on the mat", "the cat sat on a mat")],
        &[("a a a a", "a b a c"), ("b c d e f", "b c d e g")],
        &[("a b", "a b"), ("c d e f g", "c d x f g")],
        &[("one two three four five", "one two three four five six seven")],
        &[("p q r s t u", "p q r s"), ("p q", "q p")],
        &[("a b c d e", "e d c b a"), ("a b c d e", "a b c d e")],
        &[("m n o p", "m n o p"), ("m n", "m n o"), ("o p m n", "o p m n")],
    ];

    #[test]
    fn bleu_matches_the_oracle_on_fixed_corpora() {
        for pairs in FIXED_CORPORA {
            let (h, r) = corpus(pairs);
            let got = bleu(&h, &r, 4).unwrap();
            let want = oracle_bleu(&h, &r);
            assert!((got - want).abs() < 1e-9, "{pairs:?}: {got} vs {want}");
        }
    }

    #[test]
    fn bleu_hand_values() {
        let (h, r) = corpus(&[("a b c", "a b c d")]);
        assert!((bleu(&h, &r, 4).unwrap() - 100.0 * (-1.0f64 / 3.0).exp()).abs() < 1e-9);
        let (h, r) = corpus(&[("x y", "a b")]);
        assert_eq!(bleu(&h, &r, 4).unwrap(), 0.0);
        let (h, r) = corpus(&[("a b c d e", "a b c d e"), ("f g", "f g")]);
        assert!((bleu(&h, &r, 4).unwrap() - 100.0).abs() < 1e-12);
        assert!(bleu::<u32>(&[], &[], 4).is_err());
        assert!(bleu(&h, &r[..1], 4).is_err());
    }

    proptest! {
        #[test]
        fn bleu_of_a_corpus_against_itself_is_100(
            c in prop::collection::vec(prop::collection::vec(0u32..6, 1..8), 1..6)
        ) {
            prop_assert!((bleu(&c, &c, 4).unwrap() - 100.0).abs() < 1e-9);
        }

        #[test]
        fn bleu_ignores_corpus_order(
            pairs in prop::collection::vec(
                (prop::collection::vec(0u32..4, 1..7), prop::collection::vec(0u32..4, 1..7)), 1..6),
            rot in 0usize..6,
        ) {
            let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let k = rot % h.len();
            let (mut h2, mut r2) = (h.clone(), r.clone());
            h2.rotate_left(k);
            r2.rotate_left(k);
            prop_assert!((bleu(&h, &r, 4).unwrap() - bleu(&h2, &r2, 4).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn token_accuracy_counts_argmax_hits() {
        let m = biased(0.0, true);
        let pairs = vec![(vec![4], None, vec![BOS, 4, EOS]), (vec![4], None, vec![BOS, 5, EOS])];
        assert_eq!(token_accuracy(&m, &pairs).unwrap(), (3, 4));
    }

    #[test]
    fn translate_all_strips_specials() {
        let m = biased(0.0, true);
        let out = translate_all(&m, &[(vec![4], None)], &BeamConfig::new(2, 5)).unwrap();
        assert_eq!(out, vec![vec![4]]);
    }
}
