//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 for bad flags, configuration or input data, 2 for I/O,
//! numeric and generation failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{
    augment, gen_synthetic, load_corpus, save_corpus, stratified_split, AugmentMode, AugmentPolicy, Document,
    SplitRatios, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{by_language, by_language_csv, evaluate, measure_latency, ratio_sweep, SweepSetup};
use crate::gradcheck::{self_check, TOLERANCE};
use crate::knowledge::{load_kg, save_kg, KnowledgeGraph};
use crate::model::{load_model, predicted_label, Hyperparams, Model};
use crate::numerics::Rng;
use crate::training::{train, FitOptions, TrainConfig, DEFAULT_MAX_VOCAB, DEFAULT_PATIENCE};

pub const SEED_ENV: &str = "KGFUSE_SEED";

#[derive(Debug, Parser)]
#[command(name = "kgfuse", version, about = "Knowledge-graph fused harmful-text detection")]
struct Cli {
    /// JSON object of flag values for the chosen command; explicit flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its knowledge graph
    Gen(GenArgs),
    /// Append augmented copies of every document to a corpus
    Augment(AugmentArgs),
    /// Train a model and write it as JSON
    Train(TrainArgs),
    /// Score a labelled corpus and report metrics as JSON
    Eval(EvalArgs),
    /// Score unlabelled texts, one JSON record per line
    Predict(PredictArgs),
    /// Compare joint and baseline models across training-set ratios
    Sweep(SweepArgs),
    /// Per-language metrics as CSV
    Bylang(EvalArgs),
    /// Finite-difference check of the analytic gradients
    Gradcheck(GradcheckArgs),
    /// Median scoring latency per document
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of documents
    #[arg(long, default_value_t = SyntheticConfig::default().n_docs)]
    docs: usize,
    /// Number of knowledge-graph entities
    #[arg(long, default_value_t = SyntheticConfig::default().n_entities)]
    entities: usize,
    /// Fraction of entity pairs joined by an edge
    #[arg(long, default_value_t = SyntheticConfig::default().edge_density)]
    edge_density: f64,
    /// Size of the shared filler vocabulary
    #[arg(long, default_value_t = SyntheticConfig::default().filler_vocab_size)]
    filler_vocab: usize,
    /// Filler tokens per document
    #[arg(long, default_value_t = SyntheticConfig::default().fillers_per_doc)]
    fillers_per_doc: usize,
    /// Comma-separated language codes, assigned round-robin
    #[arg(long, value_delimiter = ',', default_value = "en")]
    langs: Vec<String>,
    #[arg(long, env = SEED_ENV, default_value_t = SyntheticConfig::default().seed)]
    seed: u64,
    #[arg(long)]
    out_corpus: PathBuf,
    #[arg(long)]
    out_kg: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Synonym,
    Delete,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output corpus: the originals followed by one augmented copy each
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// JSON object mapping a token to its substitutes (synonym mode)
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Maximum substitutions per document
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Per-token deletion probability
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct HyperArgs {
    /// Embedding width
    #[arg(long, default_value_t = Hyperparams::default().dim)]
    dim: usize,
    /// Contrastive temperature
    #[arg(long, default_value_t = Hyperparams::default().temperature)]
    temperature: f64,
    /// Weight of the text embedding in the fused representation
    #[arg(long, default_value_t = Hyperparams::default().fusion)]
    fusion: f64,
    /// Weight of the contrastive term in the training objective
    #[arg(long, default_value_t = Hyperparams::default().contrastive_weight)]
    contrastive_weight: f64,
    #[arg(long, default_value_t = Hyperparams::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = Hyperparams::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = Hyperparams::default().batch_size)]
    batch_size: usize,
    /// Negative slope of the attention LeakyReLU
    #[arg(long, default_value_t = Hyperparams::default().leaky_slope)]
    leaky_slope: f64,
    /// Epochs without a validation-accuracy gain before stopping
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    patience: usize,
    /// Vocabulary size cap, including the unknown-token slot
    #[arg(long, default_value_t = DEFAULT_MAX_VOCAB)]
    max_vocab: usize,
}

impl HyperArgs {
    fn hyper(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            dim: self.dim,
            temperature: self.temperature,
            fusion: self.fusion,
            contrastive_weight: self.contrastive_weight,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            leaky_slope: self.leaky_slope,
            use_graph: true,
        }
    }

    fn options(&self) -> FitOptions {
        FitOptions { patience: self.patience, max_vocab: self.max_vocab }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    /// Model output path
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV
    #[arg(long)]
    history: Option<PathBuf>,
    /// Train the text-only variant (graph path off, fusion 1)
    #[arg(long)]
    baseline: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Portion of the corpus to score, re-split with the model's training seed
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Timing passes for the latency figure (eval only)
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Report path; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    /// JSONL records with `id` and `text`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    /// Comma-separated training-set ratios in (0, 1]
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
    ratios: Vec<f64>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config_file(args) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_validation() {
        1
    } else {
        2
    }
}

/// Appends `--key value` for every entry of the `--config` file whose flag is
/// not already on the command line.
fn apply_config_file(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let table: BTreeMap<String, Value> = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;

    let present = |flag: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(Error::Config(format!("{}: config files cannot nest", path.display())));
        }
        if present(&flag) {
            continue;
        }
        let rendered = match &value {
            Value::Null | Value::Bool(false) => continue,
            Value::Bool(true) => None,
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Array(items) => {
                let parts: Option<Vec<String>> = items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => Some(s.clone()),
                        Value::Number(n) => Some(n.to_string()),
                        _ => None,
                    })
                    .collect();
                match parts {
                    Some(p) => Some(p.join(",")),
                    None => return Err(Error::Config(format!("{}: {key}: unsupported list item", path.display()))),
                }
            }
            Value::Object(_) => return Err(Error::Config(format!("{}: {key}: nested objects unsupported", path.display()))),
        };
        extra.push(flag.into());
        if let Some(v) = rendered {
            extra.push(v.into());
        }
    }
    args.extend(extra);
    Ok(args)
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bylang(a) => cmd_bylang(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(a),
    }?;
    Ok(0)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn select(docs: Vec<Document>, split: SplitArg, seed: u64) -> Result<Vec<Document>> {
    if split == SplitArg::All {
        return Ok(docs);
    }
    let bundle = stratified_split(&docs, SplitRatios::default(), seed)?;
    Ok(match split {
        SplitArg::Train => bundle.train,
        SplitArg::Val => bundle.val,
        _ => bundle.test,
    })
}

fn load_scoring_inputs(model: &Path, kg: &Path, corpus: &Path, split: SplitArg) -> Result<(Model, KnowledgeGraph, Vec<Document>)> {
    let kg = load_kg(kg)?;
    let model = load_model(model)?;
    let docs = select(load_corpus(corpus)?, split, model.hyper.seed)?;
    Ok((model, kg, docs))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_docs: a.docs,
        n_entities: a.entities,
        edge_density: a.edge_density,
        filler_vocab_size: a.filler_vocab,
        fillers_per_doc: a.fillers_per_doc,
        langs: a.langs,
        seed: a.seed,
    };
    let (docs, kg) = gen_synthetic(&cfg)?;
    save_corpus(&a.out_corpus, &docs)?;
    save_kg(&a.out_kg, &kg)
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let lexicon = match &a.lexicon {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
        }
        None => BTreeMap::new(),
    };
    let policy = AugmentPolicy { lexicon, replacements: a.k, delete_prob: a.p };
    policy.validate()?;
    let mode = match a.mode {
        ModeArg::Synonym => AugmentMode::Synonym,
        ModeArg::Delete => AugmentMode::Delete,
    };
    let docs = load_corpus(&a.corpus)?;
    let mut out = docs.clone();
    for (i, doc) in docs.iter().enumerate() {
        if doc.tokens().is_empty() {
            continue;
        }
        let seed = Rng::derive(a.seed, i as u64).next_u64();
        out.push(augment(doc, &policy, mode, seed)?);
    }
    save_corpus(&a.out, &out)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = TrainConfig {
        hyper: a.hyper.hyper(a.seed),
        corpus: a.corpus,
        kg: a.kg,
        model_out: a.out,
        history_out: a.history,
        baseline: a.baseline,
        options: a.hyper.options(),
    };
    let (_, history) = train(&config)?;
    if let Some(best) = history.best_epoch {
        let rec = &history.epochs[best];
        eprintln!(
            "ran {} epochs; kept epoch {best} (val accuracy {:.4}, val f1 {:.4})",
            history.epochs.len(),
            rec.val_accuracy,
            rec.val_f1
        );
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (model, kg, docs) = load_scoring_inputs(&a.model, &a.kg, &a.corpus, a.split)?;
    let mut metrics = evaluate(&model, &kg, &docs)?;
    metrics.latency_ms_per_doc = Some(measure_latency(&model, &kg, &docs, a.repeats)?.ms_per_doc);
    emit(a.out.as_deref(), &(metrics.to_json() + "\n"))
}

#[derive(Deserialize)]
struct PredictRecord {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    p_harmful: f64,
    label: String,
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let kg = load_kg(&a.kg)?;
    let model = load_model(&a.model)?;
    let input = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut out = String::new();
    for (n, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse { path: a.input.clone(), line: n + 1, msg: e.to_string() })?;
        let probs = model.predict_text(&rec.text, &kg)?;
        let pred = Prediction { id: &rec.id, p_harmful: probs[1], label: predicted_label(&probs).to_string() };
        out.push_str(&serde_json::to_string(&pred).expect("prediction serialises"));
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let docs = load_corpus(&a.corpus)?;
    let kg = load_kg(&a.kg)?;
    let setup = SweepSetup { docs: &docs, kg: &kg, hyper: a.hyper.hyper(0), options: a.hyper.options() };
    setup.hyper.validate()?;
    let result = ratio_sweep(&setup, &a.ratios, &a.seeds)?;
    emit(a.out.as_deref(), &result.to_csv())
}

fn cmd_bylang(a: EvalArgs) -> Result<()> {
    let (model, kg, docs) = load_scoring_inputs(&a.model, &a.kg, &a.corpus, a.split)?;
    let reports = by_language(&model, &kg, &docs)?;
    emit(a.out.as_deref(), &by_language_csv(&reports))
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = self_check(a.seed)?;
    let mut out = String::new();
    for (name, err) in &report.tensors {
        let _ = writeln!(out, "{name} {err:e}");
    }
    let _ = writeln!(out, "max_relative_error {:e}", report.max_error);
    emit(None, &out)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("max relative error {:e} exceeds {TOLERANCE:e}", report.max_error)))
    }
}

#[derive(Serialize)]
struct BenchReport {
    n_docs: usize,
    ms_per_doc: f64,
    samples: Vec<f64>,
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let (model, kg, docs) = load_scoring_inputs(&a.model, &a.kg, &a.corpus, a.split)?;
    let lat = measure_latency(&model, &kg, &docs, a.repeats)?;
    let report = BenchReport { n_docs: docs.len(), ms_per_doc: lat.ms_per_doc, samples: lat.samples };
    emit(None, &(serde_json::to_string_pretty(&report).expect("bench report serialises") + "\n"))
}
