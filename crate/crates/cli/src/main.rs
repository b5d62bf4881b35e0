use std::collections::BTreeSet;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use biasscreen_core::corpus::{
    encode_dataset, gen_synthetic, make_splits, read_jsonl, read_lines, tokenize, Label, SplitRatios, SyntheticSpec,
    Vocabulary,
};
use biasscreen_core::metrics::{full_report, render_per_class, render_table, EvalReport};
use biasscreen_core::net::{load_lm, save_checkpoint, Checkpoint, CheckpointModel, LmNetwork, ModelConfig};
use biasscreen_core::pipeline::{
    ablate_no_pretrain, derive_seed, finetune_classifier, holdout, init_seed, predict, run_pretrain_stage,
    ArmRegistry, FinetuneSettings, LmStageSettings, StagePlan, TrainLog, TAG_HOLDOUT, TAG_SPLIT, TAG_STAGE,
};
use biasscreen_core::screener::{ScreenResult, ScreenerEngine};
use biasscreen_gateway::GatewayConfig;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "biasscreen", version, about = "Progressive-transfer LSTM bias screening")]
struct Cli {
    /// Seed for every random choice; a random one is drawn and printed when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled set, general and domain corpora, and a plan.
    GenData(GenData),
    /// Build a vocabulary over corpora and labeled text.
    BuildVocab(BuildVocab),
    /// Train a language model on one corpus, optionally from a checkpoint.
    Pretrain(Pretrain),
    /// Run one training arm of a plan end to end.
    RunPipeline(RunPipeline),
    /// Fine-tune a classifier on top of a pretrained language model.
    Finetune(Finetune),
    /// Train a classifier from random weights on the labeled data only.
    Ablate(Ablate),
    /// Score predictions, or a classifier checkpoint, against gold labels.
    Eval(Eval),
    /// Flag biased sentences in a document.
    Screen(Screen),
    /// Serve the screening HTTP API.
    Serve(Serve),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// Labeled sentences.
    #[arg(long, default_value_t = 500)]
    size: usize,
    #[arg(long, default_value_t = 5000)]
    general_sentences: usize,
    #[arg(long, default_value_t = 2000)]
    domain_sentences: usize,
}

#[derive(Args)]
struct BuildVocab {
    /// Unlabeled corpus, one sentence per line; repeatable.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    #[arg(long, default_value_t = 30_000)]
    max_size: usize,
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout_keep: f64,
    #[arg(long, default_value_t = 32)]
    bptt_window: usize,
}

impl ModelArgs {
    fn config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            dropout_keep: self.dropout_keep,
            bptt_window: self.bptt_window,
            ..ModelConfig::new(vocab)
        }
    }
}

#[derive(Args)]
struct Pretrain {
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out corpus; otherwise a fraction of --corpus is held out.
    #[arg(long)]
    valid_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    valid_fraction: f64,
    #[arg(long)]
    vocab: PathBuf,
    /// Starting language model; random weights when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Append epoch records here as JSONL.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct RunPipeline {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value = "progressive")]
    arm: String,
    /// Overrides the plan's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct FinetuneArgs {
    #[arg(long, default_value_t = 40)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

impl FinetuneArgs {
    fn settings(&self) -> FinetuneSettings {
        FinetuneSettings { max_epochs: self.max_epochs, patience: self.patience, learning_rate: self.lr, batch_size: self.batch_size }
    }
}

#[derive(Args)]
struct Finetune {
    /// Pretrained language model checkpoint.
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: FinetuneArgs,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: FinetuneArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct Eval {
    /// Predicted labels, one per line.
    #[arg(long, requires = "gold", conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    /// Gold labels, one per line.
    #[arg(long, requires = "pred")]
    gold: Option<PathBuf>,
    /// Class scores per line as a JSON array; AUC uses one-hot predictions without it.
    #[arg(long, requires = "pred")]
    scores: Option<PathBuf>,
    /// Classifier to evaluate on --labeled.
    #[arg(long, requires = "labeled", required_unless_present = "pred")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    labeled: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct Screen {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    /// Document to screen; standard input when neither --text nor --file is given.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct Serve {
    #[arg(long, env = "BIASSCREEN_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "BIASSCREEN_VOCAB")]
    vocab: Option<PathBuf>,
    #[arg(long, env = "BIASSCREEN_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long, env = "BIASSCREEN_WORKERS", default_value_t = 8)]
    workers: usize,
    #[arg(long, env = "BIASSCREEN_THRESHOLD", default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, env = "BIASSCREEN_LOG", default_value = "requests.jsonl")]
    log_path: PathBuf,
    /// Largest accepted text in bytes.
    #[arg(long, env = "BIASSCREEN_MAX_BODY", default_value_t = 1 << 20)]
    max_body_bytes: usize,
    #[arg(long, env = "BIASSCREEN_NO_CORS")]
    no_cors: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let seed = cli.seed.unwrap_or_else(rand::random);
    eprintln!("seed: {seed}");
    match run(cli.command, seed, cli.seed.is_some()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, seed: u64, seed_given: bool) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, seed),
        Command::BuildVocab(a) => build_vocab(a),
        Command::Pretrain(a) => pretrain(a, seed),
        Command::RunPipeline(a) => run_pipeline(a, seed_given.then_some(seed)),
        Command::Finetune(a) => finetune(a, seed),
        Command::Ablate(a) => ablate(a, seed),
        Command::Eval(a) => eval(a),
        Command::Screen(a) => screen(a),
        Command::Serve(a) => serve(a),
    }
}

fn gen_data(a: GenData, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        seed,
        size: a.size,
        general_sentences: a.general_sentences,
        domain_sentences: a.domain_sentences,
        ..SyntheticSpec::default()
    };
    let corpus = gen_synthetic(&spec)?;
    corpus.write_to(&a.out)?;
    let plan = format!(
        "seed = {seed}\nlabeled = \"labeled.jsonl\"\noutput_dir = \"run\"\n\n\
         [[stages]]\ncorpus = \"general.txt\"\nrole = \"general\"\n\n\
         [[stages]]\ncorpus = \"domain.txt\"\nrole = \"domain\"\nepochs = 10\n"
    );
    std::fs::write(a.out.join("plan.toml"), plan)?;
    let counts = spec.class_counts();
    println!("wrote {} labeled, {} general, {} domain sentences to {}", corpus.labeled.len(), corpus.general.len(), corpus.domain.len(), a.out.display());
    for (label, n) in counts {
        println!("  {:<10} {n}", label.as_str());
    }
    Ok(())
}

fn build_vocab(a: BuildVocab) -> Result<()> {
    let mut sentences = Vec::new();
    for c in &a.corpus {
        sentences.extend(read_lines(c)?);
    }
    if let Some(l) = &a.labeled {
        sentences.extend(read_jsonl(l)?.into_iter().map(|s| s.text));
    }
    let vocab = Vocabulary::build(sentences.iter().map(|s| tokenize(s)), a.min_freq, a.max_size)?;
    vocab.save(&a.out)?;
    println!("{} types, digest {}", vocab.len(), vocab.digest());
    Ok(())
}

fn pretrain(a: Pretrain, seed: u64) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let sentences = read_lines(&a.corpus)?;
    let (train, valid) = match &a.valid_corpus {
        Some(v) => (sentences, read_lines(v)?),
        None => holdout(&sentences, a.valid_fraction, derive_seed(seed, TAG_HOLDOUT))?,
    };
    let init = match &a.init {
        Some(p) => load_lm(p, vocab.digest()).with_context(|| format!("loading {}", p.display()))?,
        None => LmNetwork::new(a.model.config(vocab.len()), init_seed(seed))?,
    };
    let settings = LmStageSettings { epochs: a.epochs, learning_rate: a.lr, batch_size: a.batch_size };
    let res = run_pretrain_stage("pretrain", init, &train, &valid, &vocab, &settings, derive_seed(seed, TAG_STAGE))?;
    for r in &res.records {
        println!("epoch {:>3}  valid perplexity {:.3}", r.epoch, r.valid_perplexity.unwrap_or(f64::NAN));
    }
    if let Some(path) = &a.log {
        let mut log = TrainLog::new();
        log.extend(res.records)?;
        log.append_to(path)?;
    }
    let id = save_checkpoint(&Checkpoint::new(CheckpointModel::Lm(res.network), vocab.digest()), &a.out)?;
    println!("best epoch {}, checkpoint {} ({id})", res.best_epoch, a.out.display());
    Ok(())
}

fn print_report(name: &str, report: &EvalReport) {
    println!("{}", render_table(&[(name, report)]));
    println!("{}", render_per_class(report));
}

fn run_pipeline(a: RunPipeline, seed: Option<u64>) -> Result<()> {
    let mut plan = StagePlan::load(&a.plan)?;
    if let Some(s) = seed {
        plan.seed = s;
    } else {
        eprintln!("using plan seed {}", plan.seed);
    }
    if let Some(dir) = a.output_dir {
        plan.output_dir = dir;
    }
    let registry = ArmRegistry::with_defaults();
    let arm = registry.get(&a.arm)?;
    let out = arm.run(&plan)?;
    print_report(&out.arm, &out.report);
    for c in &out.checkpoints {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

fn labeled_split(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<biasscreen_core::corpus::DatasetSplit<biasscreen_core::corpus::EncodedSentence>> {
    let data = read_jsonl(path)?;
    let split = make_splits(&data, SplitRatios::default(), derive_seed(seed, TAG_SPLIT))?;
    Ok(split.map(|part| encode_dataset(part, vocab)))
}

fn finetune(a: Finetune, seed: u64) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let lm = load_lm(&a.lm, vocab.digest()).with_context(|| format!("loading {}", a.lm.display()))?;
    let split = labeled_split(&a.labeled, &vocab, seed)?;
    let res = finetune_classifier(lm, &split, &a.train.settings(), seed)?;
    let id = save_checkpoint(&Checkpoint::new(CheckpointModel::Classifier(res.network), vocab.digest()), &a.out)?;
    print_report("finetune", &res.report);
    println!("best epoch {} of {}, checkpoint {} ({id})", res.best_epoch, res.epochs_run, a.out.display());
    Ok(())
}

fn ablate(a: Ablate, seed: u64) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let split = labeled_split(&a.labeled, &vocab, seed)?;
    let res = ablate_no_pretrain(a.model.config(vocab.len()), &split, &a.train.settings(), seed)?;
    let id = save_checkpoint(&Checkpoint::new(CheckpointModel::Classifier(res.network), vocab.digest()), &a.out)?;
    print_report("no-pretrain", &res.report);
    println!("best epoch {} of {}, checkpoint {} ({id})", res.best_epoch, res.epochs_run, a.out.display());
    Ok(())
}

/// Class names for label files: the five bias classes when every entry is
/// one of them (by name or index), otherwise the sorted distinct strings.
fn label_space(entries: &[String]) -> (Vec<String>, Vec<usize>) {
    let known: Option<Vec<usize>> = entries
        .iter()
        .map(|e| match e.parse::<usize>() {
            Ok(i) => Label::from_index(i).map(|l| l.index()),
            Err(_) => e.parse::<Label>().ok().map(|l| l.index()),
        })
        .collect();
    match known {
        Some(idx) => (Label::names(), idx),
        None => {
            let classes: Vec<String> = entries.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            let idx = entries.iter().map(|e| classes.iter().position(|c| c == e).expect("present")).collect();
            (classes, idx)
        }
    }
}

fn eval(a: Eval) -> Result<()> {
    let (report, note) = if let (Some(pred), Some(gold)) = (&a.pred, &a.gold) {
        let preds = read_lines(pred)?;
        let golds = read_lines(gold)?;
        if preds.len() != golds.len() {
            bail!("{} predictions but {} gold labels", preds.len(), golds.len());
        }
        let all: Vec<String> = golds.iter().chain(&preds).cloned().collect();
        let (classes, idx) = label_space(&all);
        let (g, p) = idx.split_at(golds.len());
        let (scores, note) = match &a.scores {
            Some(path) => {
                let rows: Vec<Vec<f64>> = read_lines(path)?
                    .iter()
                    .map(|l| serde_json::from_str(l).with_context(|| format!("{}: bad score row", path.display())))
                    .collect::<Result<_>>()?;
                (rows, None)
            }
            None => {
                let one_hot = p.iter().map(|&k| (0..classes.len()).map(|c| if c == k { 1.0 } else { 0.0 }).collect()).collect();
                (one_hot, Some("AUC computed from one-hot predictions (no --scores given)"))
            }
        };
        (full_report(g, p, &scores, &classes)?, note)
    } else {
        let ckpt = a.checkpoint.as_ref().expect("clap requires --checkpoint or --pred");
        let labeled = a.labeled.as_ref().expect("clap requires --labeled with --checkpoint");
        let engine = ScreenerEngine::load(ckpt, vocab_path(ckpt, a.vocab.as_deref()))?;
        let data = read_jsonl(labeled)?;
        let items = encode_dataset(&data, engine.vocab());
        let net = biasscreen_core::net::load_classifier(ckpt, engine.vocab().digest())?;
        let probs = predict(&net, &items)?;
        let golds: Vec<usize> = items.iter().map(|s| s.label.index()).collect();
        let preds: Vec<usize> =
            probs.iter().map(|p| (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })).collect();
        (full_report(&golds, &preds, &probs, &Label::names())?, None)
    };
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            print_report("eval", &report);
            println!("accuracy {:.4}  kappa {:.4}  auc {:.4}", report.accuracy, report.cks, report.auc);
            if let Some(n) = note {
                println!("note: {n}");
            }
        }
    }
    Ok(())
}

fn vocab_path(checkpoint: &Path, vocab: Option<&Path>) -> PathBuf {
    vocab.map(Path::to_path_buf).unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"))
}

fn render_findings(r: &ScreenResult) -> String {
    let mut out = format!("{} sentence(s), {} finding(s) at threshold {}\n", r.sentence_count, r.findings.len(), r.threshold);
    for f in &r.findings {
        out += &format!("{:<10} {:>6.4}  [{:>5}..{:<5}] {}\n", f.label.as_str(), f.confidence, f.span.start, f.span.end, f.sentence);
    }
    out
}

fn screen(a: Screen) -> Result<()> {
    let engine = ScreenerEngine::load(&a.checkpoint, vocab_path(&a.checkpoint, a.vocab.as_deref()))?.with_threshold(a.threshold)?;
    let text = match (&a.text, &a.file) {
        (Some(t), _) => t.clone(),
        (None, Some(f)) => std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let result = engine.screen_text(&text)?;
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&result)?),
        Format::Text => print!("{}", render_findings(&result)),
    }
    Ok(())
}

fn serve(a: Serve) -> Result<()> {
    let config = GatewayConfig {
        bind: a.bind,
        vocab: vocab_path(&a.checkpoint, a.vocab.as_deref()),
        checkpoint: a.checkpoint,
        workers: a.workers,
        threshold: a.threshold,
        log_path: a.log_path,
        max_body_bytes: a.max_body_bytes,
        cors: !a.no_cors,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(biasscreen_gateway::serve(config))?;
    Ok(())
}
