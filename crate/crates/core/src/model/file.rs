use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{Hyperparams, Model, ModelParams};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    hyperparams: Hyperparams,
    vocab: Vec<String>,
    entities: Vec<String>,
    token_emb: Vec<Vec<f64>>,
    enc_weight: Vec<Vec<f64>>,
    enc_bias: Vec<f64>,
    entity_emb: Vec<Vec<f64>>,
    gat_weight: Vec<Vec<f64>>,
    attention: Vec<f64>,
    cls_weight: Vec<Vec<f64>>,
    cls_bias: Vec<f64>,
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, cols: usize) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    Matrix::from_rows(&rows).map_err(|e| Error::Validation(format!("tensor {name}: {e}")))
}

pub fn model_to_json(model: &Model) -> String {
    let p = &model.params;
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        hyperparams: model.hyper.clone(),
        vocab: model.vocab.tokens().to_vec(),
        entities: model.entities().to_vec(),
        token_emb: p.token_emb.to_rows(),
        enc_weight: p.enc_weight.to_rows(),
        enc_bias: p.enc_bias.clone(),
        entity_emb: p.entity_emb.to_rows(),
        gat_weight: p.gat_weight.to_rows(),
        attention: p.attention.clone(),
        cls_weight: p.cls_weight.to_rows(),
        cls_bias: p.cls_bias.clone(),
    };
    serde_json::to_string(&file).expect("model serialises")
}

pub fn model_from_json(json: &str, origin: &Path) -> Result<Model> {
    let f: ModelFile = serde_json::from_str(json).map_err(|e| Error::json(origin, e))?;
    if f.version != MODEL_FILE_VERSION {
        return Err(Error::Validation(format!(
            "{}: unsupported model file version {} (expected {MODEL_FILE_VERSION})",
            origin.display(),
            f.version
        )));
    }
    let d = f.hyperparams.dim;
    let params = ModelParams {
        token_emb: matrix("token_emb", f.token_emb, d)?,
        enc_weight: matrix("enc_weight", f.enc_weight, d)?,
        enc_bias: f.enc_bias,
        entity_emb: matrix("entity_emb", f.entity_emb, d)?,
        gat_weight: matrix("gat_weight", f.gat_weight, d)?,
        attention: f.attention,
        cls_weight: matrix("cls_weight", f.cls_weight, d)?,
        cls_bias: f.cls_bias,
    };
    if !params.all_finite() {
        return Err(Error::Numeric(format!("{}: model contains non-finite values", origin.display())));
    }
    Model::new(f.hyperparams, Vocab::from_tokens(f.vocab)?, f.entities, params)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model) + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text, path)
}
