use kgfuse::corpus::{gen_synthetic, save_corpus, stratified_split, Document, SplitRatios, SyntheticConfig};
use kgfuse::evaluation::{by_language, evaluate, measure_latency, ratio_sweep, SweepSetup, Variant, LOW_SUPPORT};
use kgfuse::knowledge::{save_kg, KnowledgeGraph};
use kgfuse::model::{Hyperparams, Model};
use kgfuse::training::{fit, train, FitOptions, TrainConfig};

fn small_corpus(langs: &[&str]) -> (Vec<Document>, KnowledgeGraph) {
    let cfg = SyntheticConfig {
        n_docs: 200,
        n_entities: 10,
        langs: langs.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    gen_synthetic(&cfg).unwrap()
}

fn trained(docs: &[Document], kg: &KnowledgeGraph) -> Model {
    let split = stratified_split(docs, SplitRatios::default(), 1).unwrap();
    let hyper = Hyperparams { seed: 1, epochs: 30, ..Default::default() };
    fit(&split.train, &split.val, kg, &hyper, &FitOptions::default()).unwrap().0
}

#[test]
fn metrics_ignore_document_order() {
    let (docs, kg) = small_corpus(&["en"]);
    let model = trained(&docs, &kg);
    let forward = evaluate(&model, &kg, &docs).unwrap();
    let mut reversed = docs.clone();
    reversed.reverse();
    assert_eq!(forward, evaluate(&model, &kg, &reversed).unwrap());
    assert_eq!(forward.confusion.total(), docs.len());
    assert_eq!(forward.n_docs, docs.len());
    for v in [forward.accuracy, forward.precision, forward.recall, forward.f1] {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn per_language_groups_partition_the_corpus() {
    let (docs, kg) = small_corpus(&["en", "de"]);
    let model = trained(&docs, &kg);
    let reports = by_language(&model, &kg, &docs).unwrap();
    assert_eq!(reports.keys().collect::<Vec<_>>(), ["de", "en"]);

    let overall = evaluate(&model, &kg, &docs).unwrap();
    let mut weighted = 0.0;
    for (lang, r) in &reports {
        let subset: Vec<Document> = docs.iter().filter(|d| &d.lang == lang).cloned().collect();
        assert_eq!(r.metrics, evaluate(&model, &kg, &subset).unwrap());
        assert!(!r.low_support);
        weighted += r.metrics.accuracy * r.metrics.n_docs as f64;
    }
    assert!((weighted / docs.len() as f64 - overall.accuracy).abs() <= 1e-9);

    let (single, kg1) = small_corpus(&["en"]);
    assert_eq!(by_language(&model, &kg1, &single).unwrap().len(), 1);

    let tiny: Vec<Document> = docs.iter().take(LOW_SUPPORT - 1).cloned().collect();
    assert!(by_language(&model, &kg, &tiny).unwrap().values().all(|r| r.low_support));
}

#[test]
fn latency_is_positive_and_per_document() {
    let (docs, kg) = small_corpus(&["en"]);
    let model = trained(&docs, &kg);
    let lat = measure_latency(&model, &kg, &docs, 3).unwrap();
    assert_eq!(lat.samples.len(), 3);
    assert!(lat.ms_per_doc > 0.0);
    assert!(measure_latency(&model, &kg, &docs, 2).is_err());

    let doubled: Vec<Document> = docs.iter().chain(&docs).cloned().collect();
    let base = measure_latency(&model, &kg, &docs, 7).unwrap().ms_per_doc;
    let twice = measure_latency(&model, &kg, &doubled, 7).unwrap().ms_per_doc;
    assert!(twice > 0.5 * base && twice < 1.5 * base, "{base} vs {twice}");
}

#[test]
fn full_ratio_sweep_cell_reproduces_plain_training() {
    let (docs, kg) = small_corpus(&["en"]);
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let kg_path = dir.path().join("kg.json");
    save_corpus(&corpus, &docs).unwrap();
    save_kg(&kg_path, &kg).unwrap();

    let hyper = Hyperparams { epochs: 20, ..Default::default() };
    let options = FitOptions::default();
    let setup = SweepSetup { docs: &docs, kg: &kg, hyper: hyper.clone(), options: options.clone() };
    let result = ratio_sweep(&setup, &[1.0, 0.5], &[5, 6]).unwrap();
    assert_eq!(result.rows.len(), 2 * 2 * 2);

    for (variant, baseline) in [(Variant::Joint, false), (Variant::Baseline, true)] {
        let config = TrainConfig {
            hyper: Hyperparams { seed: 5, ..hyper.clone() },
            corpus: corpus.clone(),
            kg: kg_path.clone(),
            model_out: dir.path().join("m.json"),
            history_out: None,
            baseline,
            options: options.clone(),
        };
        let (model, _) = train(&config).unwrap();
        let test = stratified_split(&docs, SplitRatios::default(), 5).unwrap().test;
        let acc = evaluate(&model, &kg, &test).unwrap().accuracy;
        let row = result.rows.iter().find(|r| r.ratio == 1.0 && r.seed == 5 && r.variant == variant).unwrap();
        assert_eq!(row.test_accuracy, acc);
    }
}

#[test]
fn sweep_rejects_tiny_subsamples_and_bad_ratios() {
    let (docs, kg) = small_corpus(&["en"]);
    let setup = SweepSetup { docs: &docs, kg: &kg, hyper: Hyperparams { epochs: 1, ..Default::default() }, options: FitOptions::default() };
    let err = ratio_sweep(&setup, &[0.01], &[1]).unwrap_err();
    assert!(err.to_string().contains("0.01"), "{err}");
    assert!(ratio_sweep(&setup, &[1.5], &[1]).is_err());
    assert!(ratio_sweep(&setup, &[0.0], &[1]).is_err());
}
