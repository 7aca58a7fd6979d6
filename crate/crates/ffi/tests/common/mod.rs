use std::path::{Path, PathBuf};

use kgfuse::corpus::{gen_synthetic, stratified_split, SplitRatios, SyntheticConfig};
use kgfuse::knowledge::save_kg;
use kgfuse::model::{save_model, Hyperparams, Model};
use kgfuse::training::{fit, FitOptions};

/// Trains a small model on a synthetic corpus and writes model and graph files.
pub fn trained_files(dir: &Path) -> (PathBuf, PathBuf, Model) {
    let (docs, kg) = gen_synthetic(&SyntheticConfig { n_docs: 120, n_entities: 8, ..Default::default() }).unwrap();
    let split = stratified_split(&docs, SplitRatios::default(), 1).unwrap();
    let hyper = Hyperparams { dim: 8, epochs: 5, seed: 1, ..Default::default() };
    let (model, _) = fit(&split.train, &split.val, &kg, &hyper, &FitOptions::default()).unwrap();
    let model_path = dir.join("model.json");
    let kg_path = dir.join("kg.json");
    save_model(&model_path, &model).unwrap();
    save_kg(&kg_path, &kg).unwrap();
    (model_path, kg_path, model)
}
