use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sentcse::checkpoint::Checkpoint;
use sentcse::config::{Objective, TrainConfig};
use sentcse::data::{
    build_vocab, class_distribution, load_corpus, load_dataset, load_triples, write_jsonl, DatasetFormat, Label,
    LabeledExample,
};
use sentcse::eval::{report_render, transfer_suite, ReportFormat, TaggedDataset};
use sentcse::synth::{imbalanced_corpus, sentiment_corpus, SentimentCorpusConfig};
use sentcse::train::{finetune, pretrain, random_encoder, Corpus};
use sentcse::upsample::{make_plan, upsample, FillMaskConfig};
use sentcse::Classifier32;

#[derive(Parser)]
#[command(name = "sentcse", version, about = "Contrastive pretraining and sentiment fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an encoder on unlabeled sentences or NLI-style triples.
    Pretrain(PretrainArgs),
    /// Fine-tune an encoder with a classification head.
    Finetune(FinetuneArgs),
    /// Evaluate a fine-tuned checkpoint on one or more datasets.
    Evaluate(EvaluateArgs),
    /// Balance a dataset with fill-mask synthetic examples.
    Upsample(UpsampleArgs),
    /// Write generated demo corpora.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// `key=value` config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Sentences (one per line, or JSONL with `text`) for unsup-cse; JSONL
    /// triples for sup-cse.
    corpus: PathBuf,
    #[arg(long, default_value = "unsup-cse")]
    objective: String,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    train: PathBuf,
    dev: PathBuf,
    /// Encoder checkpoint to start from.
    #[arg(long, conflicts_with = "random_init", required_unless_present = "random_init")]
    init: Option<PathBuf>,
    /// Start from a randomly initialized encoder.
    #[arg(long)]
    random_init: bool,
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    freeze_encoder: bool,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    ckpt: PathBuf,
    #[arg(required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    max_length: usize,
    #[arg(long, default_value = "json")]
    format: String,
    /// Reject the checkpoint unless its vocabulary has this hash.
    #[arg(long)]
    vocab_hash: Option<String>,
    /// Write reports here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UpsampleArgs {
    dataset: PathBuf,
    /// Checkpoint whose masked-token head proposes replacements.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Rows per class after balancing; defaults to the largest class.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    max_length: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Upsample(a) => cmd_upsample(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Defaults, then the config file, then flags.
fn assemble(base: TrainConfig, common: &Common, flags: &[(&str, Option<String>)]) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)?;
    }
    let common_flags = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("epochs", common.epochs.map(|v| v.to_string())),
        ("learning_rate", common.lr.map(|v| v.to_string())),
        ("batch_size", common.batch_size.map(|v| v.to_string())),
        ("max_length", common.max_length.map(|v| v.to_string())),
        ("weight_decay", common.weight_decay.map(|v| v.to_string())),
    ];
    for (k, v) in common_flags.iter().chain(flags) {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;
    eprintln!("# effective config\n{cfg}");
    Ok(cfg)
}

/// Writes through a sibling temp file so a failed run leaves no partial
/// artifact behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn jsonl<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledExample>> {
    let loaded = load_dataset(path, DatasetFormat::from_path(path))?;
    if loaded.rows.is_empty() {
        bail!("{}: no usable rows", path.display());
    }
    Ok(loaded.rows)
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let objective = Objective::parse(&a.objective)?;
    let cfg = assemble(TrainConfig::pretrain(), &a.common, &[("objective", Some(objective.name().into()))])?;
    let corpus = match objective {
        Objective::SupCse => Corpus::Triples(load_triples(&a.corpus)?.rows),
        _ => Corpus::Sentences(load_corpus(&a.corpus)?.rows),
    };
    let texts = corpus.texts();
    let vocab = build_vocab(texts.iter().copied(), cfg.min_count);
    eprintln!("corpus: {} items, vocabulary {}", corpus.len(), vocab.len());
    let run = pretrain::<f32>(&corpus, &vocab, &cfg)?;
    let ckpt = Checkpoint {
        vocab,
        encoder: run.encoder,
        head: None,
        train: cfg.clone(),
    };
    let bytes = ckpt.to_bytes();
    write_atomic(&sibling(&a.out, ".log.jsonl"), &jsonl(&run.log)?)?;
    write_atomic(&a.out, &bytes)?;
    let (align, uniform) = run.initial;
    eprintln!(
        "wrote {} (fingerprint {}); alignment {align:.4} -> {:.4}, uniformity {uniform:.4} -> {:.4}",
        a.out.display(),
        sentcse::checkpoint::fingerprint(&bytes),
        run.log.last().map_or(align, |l| l.alignment),
        run.log.last().map_or(uniform, |l| l.uniformity),
    );
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let flags = [
        ("head", a.head.clone()),
        ("loss", a.loss.clone()),
        ("gamma", a.gamma.map(|v| v.to_string())),
        ("freeze_encoder", a.freeze_encoder.then(|| "true".to_string())),
    ];
    let cfg = assemble(TrainConfig::finetune(), &a.common, &flags)?;
    let train = load_labeled(&a.train)?;
    let dev = load_labeled(&a.dev)?;
    let (vocab, encoder) = match &a.init {
        Some(path) => {
            let ckpt = Checkpoint::<f32>::load(path, None).with_context(|| format!("loading {}", path.display()))?;
            (ckpt.vocab, ckpt.encoder)
        }
        None => {
            let texts = train.iter().chain(&dev).map(|e| e.text.as_str());
            let vocab = build_vocab(texts, cfg.min_count);
            let encoder = random_encoder(&vocab, &cfg)?;
            (vocab, encoder)
        }
    };
    let d = class_distribution(&train);
    eprintln!(
        "train {} rows (negative {}, neutral {}, positive {}), dev {} rows",
        d.total,
        d.get(Label::Negative),
        d.get(Label::Neutral),
        d.get(Label::Positive),
        dev.len()
    );
    let run = finetune(&train, &dev, &vocab, encoder, &cfg)?;
    let bytes = run.model.to_checkpoint().to_bytes();
    let record = json!({
        "config": cfg.to_text(),
        "model_fingerprint": run.dev_report.model_fingerprint,
        "best_epoch": run.best_epoch,
        "epochs": run.log,
        "dev_report": run.dev_report,
    });
    write_atomic(&sibling(&a.out, ".log.jsonl"), &jsonl(&run.log)?)?;
    write_atomic(&sibling(&a.out, ".dev.json"), format!("{:#}\n", record).as_bytes())?;
    write_atomic(&a.out, &bytes)?;
    eprintln!(
        "wrote {} (fingerprint {}); best epoch {}, dev macro-F1 {:.4}, accuracy {:.4}",
        a.out.display(),
        run.dev_report.model_fingerprint,
        run.best_epoch,
        run.dev_report.macro_f1,
        run.dev_report.accuracy
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let format = ReportFormat::parse(&a.format)?;
    let ckpt = Checkpoint::<f32>::load(&a.ckpt, a.vocab_hash.as_deref())
        .with_context(|| format!("loading {}", a.ckpt.display()))?;
    let model = Classifier32::from_checkpoint(ckpt)?;
    let datasets = a
        .datasets
        .iter()
        .map(|p| {
            Ok(TaggedDataset {
                tag: p.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string(),
                examples: load_labeled(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = transfer_suite(&model, &datasets, a.max_length)?;
    let text = report_render(&reports, format);
    match &a.out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_upsample(a: UpsampleArgs) -> Result<()> {
    let data = load_labeled(&a.dataset)?;
    let ckpt = Checkpoint::<f32>::load(&a.ckpt, None).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let fm = FillMaskConfig {
        mask_rate: a.mask_rate,
        top_k: a.top_k,
        max_length: a.max_length,
    };
    eprintln!(
        "# effective config\nmask_rate={}\nmax_length={}\nseed={}\ntarget={}\ntop_k={}\n",
        fm.mask_rate,
        fm.max_length,
        a.seed,
        a.target.map_or("max".to_string(), |t| t.to_string()),
        fm.top_k
    );
    let plan = make_plan(&class_distribution(&data), a.target)?;
    let up = upsample(&data, &plan, &ckpt.encoder, &ckpt.vocab, &fm, a.seed)?;
    let mut out = Vec::new();
    write_jsonl(&mut out, &up.examples)?;
    write_atomic(&a.out, &out)?;
    for c in Label::ALL {
        let i = c.index();
        eprintln!(
            "{c}: {} -> {} ({} synthetic, {:.1}%)",
            plan.current[i],
            plan.target[i],
            plan.deficit[i],
            100.0 * plan.deficit[i] as f64 / plan.target[i].max(1) as f64
        );
    }
    let degenerate = up.synthetic.iter().filter(|s| s.degenerate).count();
    let duplicate = up.synthetic.iter().filter(|s| s.duplicate).count();
    eprintln!("{} synthetic rows, {degenerate} degenerate, {duplicate} identical to their source", up.synthetic.len());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let c = sentiment_corpus(&SentimentCorpusConfig {
        seed: a.seed,
        ..Default::default()
    });
    let (train, dev) = c.train.split_at(c.train.len() * 9 / 10);
    let write = |name: &str, rows: &[LabeledExample]| -> Result<()> {
        let mut out = Vec::new();
        write_jsonl(&mut out, rows)?;
        write_atomic(&a.out_dir.join(name), &out)
    };
    write("train.jsonl", train)?;
    write("dev.jsonl", dev)?;
    write("test.jsonl", &c.test)?;
    write_atomic(&a.out_dir.join("unlabeled.txt"), (c.unlabeled.join("\n") + "\n").as_bytes())?;
    let (imb_train, imb_test) = imbalanced_corpus(1000, 10, 200, a.seed);
    write("imbalanced_train.jsonl", &imb_train)?;
    write("imbalanced_test.jsonl", &imb_test)?;
    eprintln!("wrote demo corpora to {}", a.out_dir.display());
    Ok(())
}
