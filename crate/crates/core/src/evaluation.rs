//! Detection metrics, latency measurement, the training-ratio sweep and the
//! per-language breakdown.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{stratified_split, stratified_subsample, Document, Label, SplitRatios};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeGraph;
use crate::model::{forward, predicted_label, Example, Hyperparams, Model, ModelParams};
use crate::training::{fit, prepare_all, FitOptions};

/// Language groups smaller than this are flagged as low-support.
pub const LOW_SUPPORT: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Harmful, Label::Harmful) => self.tp += 1,
            (Label::Benign, Label::Harmful) => self.fp += 1,
            (Label::Benign, Label::Benign) => self.tn += 1,
            (Label::Harmful, Label::Benign) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmful is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n_docs: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Median milliseconds per document, when measured.
    pub latency_ms_per_doc: Option<f64>,
    #[serde(flatten)]
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Metrics {
            n_docs: c.total(),
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            latency_ms_per_doc: None,
            confusion: c,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}

pub fn metrics_from_examples(examples: &[Example], params: &ModelParams, hyper: &Hyperparams) -> Result<Metrics> {
    let mut c = Confusion::default();
    for ex in examples {
        let probs = forward(ex, params, hyper)?.probs;
        c.record(ex.label, predicted_label(&probs));
    }
    Ok(Metrics::from_confusion(c))
}

pub fn evaluate(model: &Model, kg: &KnowledgeGraph, docs: &[Document]) -> Result<Metrics> {
    if docs.is_empty() {
        return Err(Error::Validation("no documents to evaluate".into()));
    }
    let examples = prepare_all(model, docs, kg)?;
    metrics_from_examples(&examples, &model.params, &model.hyper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Latency {
    /// Median over `samples`.
    pub ms_per_doc: f64,
    pub samples: Vec<f64>,
}

/// Median over `repeats` full scoring passes (tokenise, link, forward) of
/// wall-clock milliseconds per document.
pub fn measure_latency(model: &Model, kg: &KnowledgeGraph, docs: &[Document], repeats: usize) -> Result<Latency> {
    if docs.is_empty() {
        return Err(Error::Validation("no documents to time".into()));
    }
    if repeats < 3 {
        return Err(Error::Config(format!("latency needs at least 3 repeats, got {repeats}")));
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for d in docs {
            let ex = model.prepare(d, kg)?;
            std::hint::black_box(model.predict_example(&ex)?);
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / docs.len() as f64;
        // Clock resolution can round a very fast pass down to zero.
        samples.push(ms.max(f64::MIN_POSITIVE));
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let ms_per_doc = if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 };
    Ok(Latency { ms_per_doc, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Joint,
    Baseline,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Joint => "joint",
            Variant::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub variant: Variant,
    pub seed: u64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,variant,seed,test_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.ratio, r.variant, r.seed, r.test_accuracy);
        }
        out
    }

    /// Mean test accuracy over seeds for one cell of the sweep.
    pub fn mean_accuracy(&self, ratio: f64, variant: Variant) -> Option<f64> {
        let accs: Vec<f64> =
            self.rows.iter().filter(|r| r.ratio == ratio && r.variant == variant).map(|r| r.test_accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

/// Inputs shared by every cell of a sweep. `hyper.seed` is replaced by each sweep seed.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub docs: &'a [Document],
    pub kg: &'a KnowledgeGraph,
    pub hyper: Hyperparams,
    pub options: FitOptions,
}

/// For each seed the corpus is split exactly as `train` would; the train
/// split is then stratified-subsampled per ratio and both variants are fit
/// and scored on the untouched test split.
pub fn ratio_sweep(setup: &SweepSetup<'_>, ratios: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if let Some(bad) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Config(format!("sweep ratio {bad} outside (0, 1]")));
    }
    let mut result = SweepResult::default();
    for &ratio in ratios {
        for &seed in seeds {
            let hyper = Hyperparams { seed, ..setup.hyper.clone() };
            let split = stratified_split(setup.docs, SplitRatios::default(), seed)?;
            let train = stratified_subsample(&split.train, ratio, seed)?;
            for label in [Label::Benign, Label::Harmful] {
                let n = train.iter().filter(|d| d.label == label).count();
                if n < 2 {
                    return Err(Error::Config(format!(
                        "ratio {ratio} leaves {n} {label} training documents for seed {seed}; need at least 2"
                    )));
                }
            }
            for variant in [Variant::Joint, Variant::Baseline] {
                let h = match variant {
                    Variant::Joint => hyper.clone(),
                    Variant::Baseline => hyper.clone().baseline(),
                };
                let (model, _) = fit(&train, &split.val, setup.kg, &h, &setup.options)?;
                let metrics = evaluate(&model, setup.kg, &split.test)?;
                result.rows.push(SweepRow { ratio, variant, seed, test_accuracy: metrics.accuracy });
            }
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageReport {
    pub metrics: Metrics,
    pub low_support: bool,
}

pub fn by_language(model: &Model, kg: &KnowledgeGraph, docs: &[Document]) -> Result<BTreeMap<String, LanguageReport>> {
    let mut groups: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for d in docs {
        groups.entry(d.lang.clone()).or_default().push(d.clone());
    }
    groups
        .into_iter()
        .map(|(lang, group)| {
            let metrics = evaluate(model, kg, &group)?;
            Ok((lang, LanguageReport { low_support: group.len() < LOW_SUPPORT, metrics }))
        })
        .collect()
}

pub fn by_language_csv(reports: &BTreeMap<String, LanguageReport>) -> String {
    let mut out = String::from("lang,n_docs,accuracy,recall,f1,low_support\n");
    for (lang, r) in reports {
        let m = &r.metrics;
        let _ = writeln!(out, "{lang},{},{},{},{},{}", m.n_docs, m.accuracy, m.recall, m.f1, r.low_support);
    }
    out
}
