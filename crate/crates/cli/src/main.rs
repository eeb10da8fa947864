//! `zerommt`: generate a synthetic corpus, pretrain the text-only base,
//! pseudo-translate, train adapters, evaluate with guidance, and sweep.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use zerommt::evaluation::write_rows_csv;
use zerommt::model::Checkpoint;
use zerommt::pipeline::{self, Evaluated, RunConfig};
use zerommt::synthcorpus::{read_corpus, read_jsonl, write_corpus, write_jsonl, Example, TargetSource};
use zerommt::training::{write_log_csv, TrainMode};

#[derive(Parser)]
#[command(name = "zerommt", version, about = "Zero-shot multimodal translation on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the world, pretraining and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the world and its six splits.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the text-only base on the parallel split.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Replace multimodal training targets with the base's translations.
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        base: PathBuf,
    },
    /// Train adapters and projector against the frozen base.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        base: PathBuf,
        /// Training examples from `translate`; defaults to the corpus's
        /// gold targets when the config asks for them.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Contrastive accuracy, BLEU and sense accuracy on the test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Score the checkpoint's text-only network instead.
        #[arg(long)]
        text_only: bool,
    },
    /// One row per guidance scale or per KL weight.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        corpus: PathBuf,
        /// Trained checkpoint (gamma sweeps).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Frozen base (lambda sweeps).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        pseudo: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    NoVmlm,
    NoKl,
    MmtNoKl,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => TrainMode::Full,
            ModeArg::NoVmlm => TrainMode::NoVmlm,
            ModeArg::NoKl => TrainMode::NoKl,
            ModeArg::MmtNoKl => TrainMode::MmtNoKl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    Gamma,
    Lambda,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest(cfg: &RunConfig, extra: serde_json::Value) -> serde_json::Value {
    let mut m = json!({ "code_version": zerommt::VERSION, "run_config": cfg.to_value() });
    if let (Some(m), serde_json::Value::Object(e)) = (m.as_object_mut(), extra) {
        m.extend(e);
    }
    m
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn comment_lines(f: &mut impl Write, cfg: &RunConfig) -> Result<()> {
    for line in cfg.provenance() {
        writeln!(f, "# {line}")?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f64>> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn training_examples(cfg: &RunConfig, corpus_mmt: &[Example], pseudo: Option<&Path>) -> Result<Vec<Example>> {
    match (pseudo, cfg.targets) {
        (Some(p), _) => Ok(read_jsonl(p)?),
        (None, TargetSource::Gold) => Ok(corpus_mmt.to_vec()),
        (None, TargetSource::Pseudo) => bail!("--pseudo is required unless the config sets \"targets\": \"gold\""),
    }
}

fn gen(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let (world, splits) = pipeline::generate(&cfg)?;
    write_corpus(&common.out, &world, &splits)?;
    write_json(&common.out.join("manifest.json"), &manifest(&cfg, json!({})))?;
    let counts = [
        ("pretrain_parallel", splits.pretrain_parallel.len()),
        ("mmt_train", splits.mmt_train.len()),
        ("val_contrastive", splits.val_contrastive.len()),
        ("val_translation", splits.val_translation.len()),
        ("test_contrastive", splits.test_contrastive.len()),
        ("test_translation", splits.test_translation.len()),
    ];
    for (name, n) in counts {
        println!("{name}\t{n}");
    }
    Ok(())
}

fn pretrain(common: &Common, corpus: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let (world, splits) = read_corpus(corpus)?;
    let out = pipeline::pretrain(&cfg, &splits)?;
    fs::create_dir_all(&common.out)?;
    let mut ck = Checkpoint::new(out.params);
    ck.step = cfg.pretrain.max_steps;
    ck.run_config = cfg.to_value();
    ck.save(&common.out.join("base.ckpt"))?;
    let report = pipeline::base_report(&ck.params, &world, &splits)?;
    let mut f = csv_file(&common.out.join("pretrain_log.csv"))?;
    comment_lines(&mut f, &cfg)?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["step", "loss"])?;
    for (i, l) in out.losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    write_json(&common.out.join("base_report.json"), &manifest(&cfg, json!({ "report": report })))?;
    println!(
        "token accuracy {:.4}, sense probability range [{:.3}, {:.3}]",
        report.token_accuracy, report.min_sense_probability, report.max_sense_probability
    );
    Ok(())
}

fn translate(common: &Common, corpus: &Path, base: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let (world, splits) = read_corpus(corpus)?;
    let base = load_checkpoint(base)?;
    let (examples, stats) = pipeline::pseudo_targets(&cfg, &base.params, &world, &splits)?;
    fs::create_dir_all(&common.out)?;
    write_jsonl(&common.out.join("mmt_train_pseudo.jsonl"), &examples)?;
    write_json(&common.out.join("pseudo_stats.json"), &manifest(&cfg, json!({ "stats": stats })))?;
    println!("{} of {} examples kept", examples.len(), stats.total);
    Ok(())
}

fn train(common: &Common, corpus: &Path, base: &Path, pseudo: Option<&Path>, mode: Option<ModeArg>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(m) = mode {
        cfg.train.mode = m.into();
    }
    let (_, splits) = read_corpus(corpus)?;
    let base = load_checkpoint(base)?;
    let examples = training_examples(&cfg, &splits.mmt_train, pseudo)?;
    let out = pipeline::train_model(&cfg, &base.params, &examples, &splits)?;
    fs::create_dir_all(&common.out)?;
    out.best.save(&common.out.join("best.ckpt"))?;
    write_log_csv(csv_file(&common.out.join("train_log.csv"))?, &cfg.provenance(), &out.log)?;
    let selection = json!({
        "selected_step": out.best.step,
        "candidates": out.candidates,
        "selection_scores": out.selection_scores,
    });
    write_json(&common.out.join("selection.json"), &manifest(&cfg, selection))?;
    println!("selected step {}", out.best.step);
    Ok(())
}

fn eval(common: &Common, corpus: &Path, checkpoint: &Path, gamma: f64, text_only: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let (world, splits) = read_corpus(corpus)?;
    let ck = load_checkpoint(checkpoint)?;
    let who = if text_only { Evaluated::Base } else { Evaluated::Multimodal };
    let report = pipeline::evaluate(&cfg, &ck.params, who, &world, &splits, gamma)?;
    fs::create_dir_all(&common.out)?;
    write_json(&common.out.join("eval_report.json"), &serde_json::to_value(&report)?)?;
    let mut f = csv_file(&common.out.join("contrastive_rows.csv"))?;
    comment_lines(&mut f, &cfg)?;
    write_rows_csv(f, &report.contrastive.rows)?;
    println!(
        "contrastive {:.2} (plain {:.2}), bleu {:.2}, sense {:.2}",
        report.contrastive.accuracy, report.contrastive_accuracy_plain, report.bleu, report.sense_accuracy
    );
    Ok(())
}

fn sweep(
    common: &Common,
    param: SweepParam,
    values: &[f64],
    corpus: &Path,
    checkpoint: Option<&Path>,
    base: Option<&Path>,
    pseudo: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let (world, splits) = read_corpus(corpus)?;
    let (name, rows) = match param {
        SweepParam::Gamma => {
            let Some(ck) = checkpoint else { bail!("a gamma sweep needs --checkpoint") };
            let ck = load_checkpoint(ck)?;
            let values = if values.is_empty() { cfg.gammas.clone() } else { values.to_vec() };
            ("gamma", pipeline::sweep_gamma(&cfg, &ck.params, &world, &splits, &values)?)
        }
        SweepParam::Lambda => {
            let Some(base) = base else { bail!("a lambda sweep needs --base") };
            let base = load_checkpoint(base)?;
            let examples = training_examples(&cfg, &splits.mmt_train, pseudo)?;
            let values = if values.is_empty() { cfg.lambdas.clone() } else { values.to_vec() };
            ("lambda", pipeline::sweep_lambda(&cfg, &base.params, &examples, &world, &splits, &values)?)
        }
    };
    fs::create_dir_all(&common.out)?;
    let path = common.out.join(format!("sweep_{name}.csv"));
    pipeline::write_sweep_csv(csv_file(&path)?, name, &cfg.provenance(), &rows)?;
    for r in &rows {
        println!("{name} {}\tcontrastive {:.2}\tbleu {:.2}", r.value, r.contrastive_accuracy, r.bleu);
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ZEROMMT_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ZEROMMT_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads().context("stage setup")?;
    match &cli.cmd {
        Cmd::Gen { common } => gen(common).context("stage gen"),
        Cmd::Pretrain { common, corpus } => pretrain(common, corpus).context("stage pretrain"),
        Cmd::Translate { common, corpus, base } => translate(common, corpus, base).context("stage translate"),
        Cmd::Train { common, corpus, base, pseudo, mode } => {
            train(common, corpus, base, pseudo.as_deref(), *mode).context("stage train")
        }
        Cmd::Eval { common, corpus, checkpoint, gamma, text_only } => {
            eval(common, corpus, checkpoint, *gamma, *text_only).context("stage eval")
        }
        Cmd::Sweep { common, param, values, corpus, checkpoint, base, pseudo } => sweep(
            common,
            *param,
            values,
            corpus,
            checkpoint.as_deref(),
            base.as_deref(),
            pseudo.as_deref(),
        )
        .context("stage sweep"),
    }
}
