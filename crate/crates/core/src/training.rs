//! Mini-batch SGD on the joint objective with best-on-validation
//! checkpointing and early stopping.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{build_vocab, load_corpus, stratified_split, Document, SplitRatios};
use crate::error::{Error, Result};
use crate::evaluation::{metrics_from_examples, Metrics};
use crate::gradcheck::batch_loss;
use crate::knowledge::{link_entities, load_kg, KnowledgeGraph};
use crate::model::{forward_backward, save_model, Example, Hyperparams, Model, ModelParams};
use crate::numerics::Rng;

pub const DEFAULT_PATIENCE: usize = 300;
pub const DEFAULT_MAX_VOCAB: usize = 20_000;

/// Knobs that shape a training run but are not stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub max_vocab: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { patience: DEFAULT_PATIENCE, max_vocab: DEFAULT_MAX_VOCAB }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    pub corpus: PathBuf,
    pub kg: PathBuf,
    pub model_out: PathBuf,
    pub history_out: Option<PathBuf>,
    /// Single-model variant: graph path disabled, fusion forced to 1.
    pub baseline: bool,
    pub options: FitOptions,
}

impl TrainConfig {
    pub fn effective_hyper(&self) -> Hyperparams {
        if self.baseline {
            self.hyper.clone().baseline()
        } else {
            self.hyper.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.options.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        for (name, p) in [("corpus", &self.corpus), ("kg", &self.kg), ("model output", &self.model_out)] {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("{name} path is empty")));
            }
        }
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy,val_f1\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_accuracy, r.val_f1);
        }
        out
    }
}

/// Seeded per-epoch shuffle of `0..n`, cut into contiguous chunks. The last
/// chunk may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be at least 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, 0xba7c_0000 + epoch as u64).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Fresh model whose vocabulary and entity table come from the training
/// documents only.
pub fn init_model(train: &[Document], kg: &KnowledgeGraph, hyper: &Hyperparams, max_vocab: usize) -> Result<Model> {
    hyper.validate()?;
    let token_lists: Vec<Vec<String>> = train.iter().map(Document::tokens).collect();
    let vocab = build_vocab(token_lists.iter().map(Vec::as_slice), max_vocab)?;
    let entities: Vec<String> = if hyper.use_graph {
        let seen: BTreeSet<String> = token_lists.iter().flat_map(|t| link_entities(t, kg)).collect();
        kg.entities().iter().map(|e| e.id.clone()).filter(|id| seen.contains(id)).collect()
    } else {
        Vec::new()
    };
    let params = ModelParams::init(vocab.len(), entities.len(), hyper.dim, hyper.seed)?;
    Model::new(hyper.clone(), vocab, entities, params)
}

pub fn prepare_all(model: &Model, docs: &[Document], kg: &KnowledgeGraph) -> Result<Vec<Example>> {
    docs.iter().map(|d| model.prepare(d, kg)).collect()
}

/// Trains on `train`, selecting parameters by validation accuracy.
pub fn fit(
    train: &[Document],
    val: &[Document],
    kg: &KnowledgeGraph,
    hyper: &Hyperparams,
    options: &FitOptions,
) -> Result<(Model, TrainHistory)> {
    if options.patience < 1 {
        return Err(Error::Config("patience must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let mut model = init_model(train, kg, hyper, options.max_vocab)?;
    let mut history = TrainHistory::default();
    if hyper.epochs == 0 {
        return Ok((model, history));
    }
    if val.is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }
    let train_ex = prepare_all(&model, train, kg)?;
    let val_ex = prepare_all(&model, val, kg)?;

    let mut params = model.params.clone();
    // Fixed partition used to report a comparable loss after every epoch.
    let report_batches: Vec<Vec<Example>> = make_batches(train_ex.len(), hyper.batch_size, hyper.seed, 0)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| train_ex[i].clone()).collect())
        .collect();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    for epoch in 0..hyper.epochs {
        let batches = make_batches(train_ex.len(), hyper.batch_size, hyper.seed, epoch)?;
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<Example> = idx.iter().map(|&i| train_ex[i].clone()).collect();
            let out = forward_backward(&batch, &params, &model.hyper)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            params.sgd_update(&out.grads, hyper.learning_rate)?;
            if !params.all_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: parameters became non-finite")));
            }
        }
        let mut total = 0.0;
        for batch in &report_batches {
            total += batch_loss(batch, &params, &model.hyper)?;
        }
        let val_metrics: Metrics = metrics_from_examples(&val_ex, &params, &model.hyper)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / report_batches.len() as f64,
            val_accuracy: val_metrics.accuracy,
            val_f1: val_metrics.f1,
        });
        let improved = best.as_ref().is_none_or(|(acc, _, _)| val_metrics.accuracy > *acc);
        if improved {
            best = Some((val_metrics.accuracy, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= options.patience {
                break;
            }
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    history.best_epoch = Some(best_epoch);
    model.params = best_params;
    Ok((model, history))
}

/// Loads corpus and graph, splits 80/10/10 with the run seed, trains and
/// writes the model (and history CSV when requested).
pub fn train(config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    let docs = load_corpus(&config.corpus)?;
    let kg = load_kg(&config.kg)?;
    let hyper = config.effective_hyper();
    let split = stratified_split(&docs, SplitRatios::default(), hyper.seed)?;
    let (model, history) = fit(&split.train, &split.val, &kg, &hyper, &config.options)?;
    save_model(&config.model_out, &model)?;
    if let Some(path) = &config.history_out {
        write_text(path, &history.to_csv())?;
    }
    Ok((model, history))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
