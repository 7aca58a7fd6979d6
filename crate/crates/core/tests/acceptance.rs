//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use kgfuse::corpus::{
    gen_synthetic, label_of, stratified_split, Document, Label, SplitRatios, Stratum, SyntheticConfig,
};
use kgfuse::evaluation::{evaluate, ratio_sweep, SweepSetup, Variant};
use kgfuse::gradcheck::{self_check, TOLERANCE};
use kgfuse::knowledge::KnowledgeGraph;
use kgfuse::model::{classify, contrastive_loss, gat_layer, pool_and_fuse, predicted_label, Hyperparams, ModelParams};
use kgfuse::numerics::{softmax, Rng};
use kgfuse::training::{fit, FitOptions};

const BIN: &str = env!("CARGO_BIN_EXE_kgfuse");

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < budget, format!("took {took:.1?}, budget {budget:?}"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in [1, 2, 3] {
        let report = self_check(seed).map_err(|e| e.to_string())?;
        for (name, err) in &report.tensors {
            check(*err <= TOLERANCE, format!("seed {seed}: {name} relative error {err:e}"))?;
        }
        worst = worst.max(report.max_error);
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!("max relative error {worst:.2e} over seeds 1-3, {:.2?}", start.elapsed()))
}

fn structural_identities() -> Outcome {
    let tol = 1e-12;
    let mut rng = Rng::new(20);
    for trial in 0..100 {
        let n = 1 + rng.below(20);
        let graph = common::random_graph(n, rng.next_f64(), &mut rng);
        let params = ModelParams::init(2, n, 8, trial).map_err(|e| e.to_string())?;
        let nodes: Vec<usize> = (0..n).collect();
        let out = gat_layer(&graph, &nodes, &params, 0.2).map_err(|e| e.to_string())?;
        for row in &out.attention {
            let total: f64 = row.iter().sum();
            check((total - 1.0).abs() <= tol && row.iter().all(|&a| a >= 0.0), format!("trial {trial}: row sums to {total}"))?;
        }
    }

    for trial in 0..20 {
        let h: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let nodes: Vec<Vec<f64>> = (0..1 + trial % 4).map(|_| (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let (pooled, at0) = pool_and_fuse(&h, &nodes, 0.0);
        let (_, at1) = pool_and_fuse(&h, &nodes, 1.0);
        let (_, quarter) = pool_and_fuse(&h, &nodes, 0.25);
        check(at1 == h, "fusion weight 1 does not return h")?;
        check(Some(at0.clone()) == pooled, "fusion weight 0 does not return the pooled graph feature")?;
        for k in 0..8 {
            let mean = nodes.iter().map(|v| v[k]).sum::<f64>() / nodes.len() as f64;
            check((at0[k] - mean).abs() <= tol, "fusion weight 0 differs from the node mean")?;
            let affine = at0[k] + 0.25 * (at1[k] - at0[k]);
            check((quarter[k] - affine).abs() <= tol, format!("not affine at 0.25: {} vs {affine}", quarter[k]))?;
        }
    }

    let same = vec![vec![0.3, -0.7, 1.1]; 4];
    let labels = [Label::Benign, Label::Benign, Label::Harmful, Label::Harmful];
    let loss = contrastive_loss(&same, &labels, 0.1).map_err(|e| e.to_string())?;
    check((loss - 4.0 * 2f64.ln()).abs() <= tol, format!("uniform-similarity contrastive loss {loss}"))?;

    for _ in 0..100 {
        let logits = [rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)];
        let c = rng.uniform(-100.0, 100.0);
        let p = softmax(&logits).map_err(|e| e.to_string())?;
        let q = softmax(&[logits[0] + c, logits[1] + c]).map_err(|e| e.to_string())?;
        check((p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol, "softmax not shift invariant")?;
        check(predicted_label(&[p[0], p[1]]) == predicted_label(&[q[0], q[1]]), "argmax changed under shift")?;
    }
    let params = ModelParams::init(2, 0, 4, 9).map_err(|e| e.to_string())?;
    let mut shifted = params.clone();
    shifted.cls_bias.iter_mut().for_each(|b| *b += 3.5);
    let h = [0.2, -0.1, 0.4, 0.9];
    let a = classify(&h, &params).map_err(|e| e.to_string())?;
    let b = classify(&h, &shifted).map_err(|e| e.to_string())?;
    check(predicted_label(&a) == predicted_label(&b), "classifier argmax changed under a common logit shift")?;
    Ok("attention rows (100 graphs), fusion endpoints and affinity, 4·ln 2 identity, shift invariance".into())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn joint_beats_single_model() -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticConfig { n_docs: 500, n_entities: 20, edge_density: 0.3, seed: 7, ..Default::default() };
    let (docs, kg) = gen_synthetic(&cfg).map_err(|e| e.to_string())?;

    let (mut bow, mut informed, mut joint, mut single) = (vec![], vec![], vec![], vec![]);
    for seed in [1, 2, 3] {
        let split = stratified_split(&docs, SplitRatios::default(), seed).map_err(|e| e.to_string())?;
        bow.push(common::logistic_oracle(&split.train, &split.test, &|_| 0.0));
        // Same learner given the one feature that decides the label.
        informed.push(common::logistic_oracle(&split.train, &split.test, &|d| edge_feature(d, &kg)));
        for (baseline, out) in [(false, &mut joint), (true, &mut single)] {
            let mut hyper = Hyperparams { seed, ..Default::default() };
            if baseline {
                hyper = hyper.baseline();
            }
            let (model, _) = fit(&split.train, &split.val, &kg, &hyper, &FitOptions::default()).map_err(|e| e.to_string())?;
            out.push(evaluate(&model, &kg, &split.test).map_err(|e| e.to_string())?.accuracy);
        }
    }
    let summary = format!(
        "joint {:.3}, baseline {:.3}, bag-of-words oracle {:.3} (with edge feature {:.3}), {:.1?}",
        mean(&joint),
        mean(&single),
        mean(&bow),
        mean(&informed),
        start.elapsed()
    );
    check(mean(&informed) >= 0.95, format!("oracle learner itself is broken: {summary}"))?;
    check(mean(&bow) <= 0.65, format!("corpus is token-separable: {summary}"))?;
    check(mean(&joint) >= 0.9, format!("joint below 0.9: {summary}"))?;
    check(mean(&single) <= 0.7, format!("baseline above 0.7: {summary}"))?;
    within_budget(start, Duration::from_secs(180))?;
    Ok(summary)
}

/// 1 when the document's two entity surfaces are adjacent in the graph.
fn edge_feature(doc: &Document, kg: &KnowledgeGraph) -> f64 {
    let ids: Vec<String> = doc
        .text
        .split_whitespace()
        .filter_map(|t| t.strip_prefix("ent").map(|n| format!("e{n}")))
        .collect();
    match ids.as_slice() {
        [a, b] if kg.related(a, b) => 1.0,
        _ => 0.0,
    }
}

fn low_resource_advantage() -> Outcome {
    let start = Instant::now();
    let (docs, kg) = gen_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let ratios = [0.1, 0.3, 0.5, 0.7, 0.9];
    let setup = SweepSetup { docs: &docs, kg: &kg, hyper: Hyperparams::default(), options: FitOptions::default() };
    let result = ratio_sweep(&setup, &ratios, &[1, 2, 3]).map_err(|e| e.to_string())?;
    let mut cells = Vec::new();
    for r in ratios {
        let j = result.mean_accuracy(r, Variant::Joint).ok_or("missing joint cell")?;
        let b = result.mean_accuracy(r, Variant::Baseline).ok_or("missing baseline cell")?;
        cells.push(format!("{r}: {j:.3}/{b:.3}"));
        check(j >= b, format!("ratio {r}: joint {j:.3} < baseline {b:.3}"))?;
    }
    let lo = result.mean_accuracy(0.1, Variant::Joint).unwrap();
    let hi = result.mean_accuracy(0.9, Variant::Joint).unwrap();
    check(hi >= lo, format!("joint at 0.9 ({hi:.3}) below joint at 0.1 ({lo:.3})"))?;
    within_budget(start, Duration::from_secs(600))?;
    Ok(format!("joint/baseline {}, {:.1?}", cells.join(", "), start.elapsed()))
}

fn stratum_counts(docs: &[Document]) -> [usize; 3] {
    let mut c = [0; 3];
    for d in docs {
        c[match Stratum::of(d.score) {
            Stratum::Low => 0,
            Stratum::Medium => 1,
            Stratum::High => 2,
        }] += 1;
    }
    c
}

fn data_pipeline_exactness() -> Outcome {
    let (synthetic, _) = gen_synthetic(&SyntheticConfig { n_docs: 1000, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(3);
    let spread: Vec<Document> = (0..1000)
        .map(|i| Document::new(format!("d{i}"), "several plain tokens here", "en", rng.next_f64()).unwrap())
        .collect();
    for (name, docs) in [("synthetic", &synthetic), ("three-stratum", &spread)] {
        let split = stratified_split(docs, SplitRatios::default(), 11).map_err(|e| e.to_string())?;
        let sizes = (split.train.len(), split.val.len(), split.test.len());
        check(sizes == (800, 100, 100), format!("{name}: sizes {sizes:?}"))?;
        let whole = stratum_counts(docs);
        for (part, frac) in [(&split.train, 0.8), (&split.val, 0.1), (&split.test, 0.1)] {
            let got = stratum_counts(part);
            for s in 0..3 {
                let want = whole[s] as f64 * frac;
                check((got[s] as f64 - want).abs() <= 1.0, format!("{name}: stratum {s} has {} docs, expected {want}", got[s]))?;
            }
        }
    }
    check(matches!(label_of(0.7), Ok(Label::Harmful)), "label_of(0.7) is not harmful")?;
    check(matches!(label_of(0.5), Ok(Label::Benign)), "label_of(0.5) is not benign")?;
    Ok("800/100/100 on two corpora, strata within ±1, threshold strict at 0.5".into())
}

fn kgfuse(dir: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(BIN).args(args).current_dir(dir).env_remove("KGFUSE_SEED").output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("kgfuse {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, String> {
    fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    for tag in ["a", "b"] {
        kgfuse(p, &["gen", "--docs", "300", "--entities", "12", "--seed", "5", "--out-corpus", &format!("c_{tag}.jsonl"), "--out-kg", &format!("kg_{tag}.json")])?;
    }
    check(read(p, "c_a.jsonl")? == read(p, "c_b.jsonl")?, "gen corpus differs between runs")?;
    check(read(p, "kg_a.json")? == read(p, "kg_b.json")?, "gen graph differs between runs")?;
    for tag in ["a", "b"] {
        kgfuse(p, &["train", "--corpus", "c_a.jsonl", "--kg", "kg_a.json", "--seed", "2", "--epochs", "40", "--out", &format!("m_{tag}.json")])?;
        kgfuse(p, &["sweep", "--corpus", "c_a.jsonl", "--kg", "kg_a.json", "--ratios", "0.3,1", "--seeds", "1,2", "--epochs", "20", "--out", &format!("s_{tag}.csv")])?;
    }
    check(read(p, "m_a.json")? == read(p, "m_b.json")?, "train model files differ between runs")?;
    check(read(p, "s_a.csv")? == read(p, "s_b.csv")?, "sweep CSVs differ between runs")?;
    Ok("gen, train and sweep outputs byte-identical across two runs".into())
}

fn reporting_completeness() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = dir.path();
    kgfuse(p, &["gen", "--docs", "300", "--entities", "12", "--langs", "en,de", "--out-corpus", "c.jsonl", "--out-kg", "kg.json"])?;
    kgfuse(p, &["train", "--corpus", "c.jsonl", "--kg", "kg.json", "--epochs", "40", "--seed", "1", "--out", "m.json"])?;
    kgfuse(p, &["eval", "--model", "m.json", "--kg", "kg.json", "--corpus", "c.jsonl", "--out", "eval.json"])?;
    let metrics: serde_json::Value = serde_json::from_slice(&read(p, "eval.json")?).map_err(|e| e.to_string())?;
    for key in ["accuracy", "recall", "f1", "latency_ms_per_doc"] {
        check(metrics[key].is_number(), format!("eval output lacks {key}"))?;
    }
    let latency = metrics["latency_ms_per_doc"].as_f64().unwrap();
    check(latency > 0.0, "latency not positive")?;

    kgfuse(p, &["bylang", "--model", "m.json", "--kg", "kg.json", "--corpus", "c.jsonl", "--out", "lang.csv"])?;
    let csv = String::from_utf8(read(p, "lang.csv")?).map_err(|e| e.to_string())?;
    let mut weighted = 0.0;
    let mut total = 0usize;
    let mut langs = Vec::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let n: usize = cols[1].parse().map_err(|_| format!("bad row {line}"))?;
        let acc: f64 = cols[2].parse().map_err(|_| format!("bad row {line}"))?;
        weighted += acc * n as f64;
        total += n;
        langs.push(cols[0].to_string());
    }
    check(langs == ["de", "en"], format!("languages {langs:?}"))?;
    let overall = metrics["accuracy"].as_f64().unwrap();
    let gap = (weighted / total as f64 - overall).abs();
    check(gap <= 1e-9, format!("weighted per-language accuracy off by {gap:e}"))?;
    Ok(format!("accuracy {overall:.3}, latency {latency:.4} ms/doc, per-language weighted gap {gap:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 structural identities", structural_identities),
        ("3 joint vs single-model ordering", joint_beats_single_model),
        ("4 low-resource advantage", low_resource_advantage),
        ("5 data pipeline exactness", data_pipeline_exactness),
        ("6 determinism", determinism),
        ("7 reporting completeness", reporting_completeness),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
