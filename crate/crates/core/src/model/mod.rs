//! The differentiable detection pipeline: bag-of-embeddings text encoder,
//! single-head graph attention over linked entities, fusion, a linear
//! classifier and the two training losses, with hand-derived gradients.

mod file;
mod ops;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{preprocess, Document, Label, Vocab};
use crate::error::{Error, Result};
use crate::knowledge::{build_doc_graph, link_entities, DocGraph, KnowledgeGraph};
use crate::numerics::{Matrix, Rng};

pub use file::{load_model, model_from_json, model_to_json, save_model, MODEL_FILE_VERSION};
pub use ops::{
    ce_loss, classify, contrastive_loss, contrastive_loss_with_grad, encode, forward, forward_backward, gat_layer,
    pool_and_fuse, predicted_label, BatchLoss, ContrastiveGrad, Encoded, ForwardTrace, GatOutput, PROB_FLOOR,
};

/// Half-width of the uniform initialisation range.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Embedding width.
    pub dim: usize,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Weight of the text embedding in the fused representation; `1 - fusion` goes to the graph feature.
    pub fusion: f64,
    /// Weight of the contrastive term in the joint objective.
    pub contrastive_weight: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    /// `false` disables the knowledge-graph path entirely (single-model baseline).
    pub use_graph: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 32,
            temperature: 0.1,
            fusion: 0.5,
            contrastive_weight: 0.5,
            learning_rate: 0.25,
            epochs: 300,
            batch_size: 32,
            seed: 0,
            leaky_slope: 0.2,
            use_graph: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim < 2 {
            return fail(format!("dim must be at least 2, got {}", self.dim));
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.fusion) {
            return fail(format!("fusion weight must lie in [0, 1], got {}", self.fusion));
        }
        if !(self.contrastive_weight >= 0.0) {
            return fail(format!("contrastive weight must be non-negative, got {}", self.contrastive_weight));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !self.leaky_slope.is_finite() {
            return fail("leaky slope must be finite".into());
        }
        Ok(())
    }

    /// The single-model variant: graph path off and all weight on the text embedding.
    pub fn baseline(mut self) -> Self {
        self.use_graph = false;
        self.fusion = 1.0;
        self
    }
}

/// Every trainable tensor. [`Gradients`] shares the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `|V_tok| x d`
    pub token_emb: Matrix,
    /// `d x d`
    pub enc_weight: Matrix,
    /// `d`
    pub enc_bias: Vec<f64>,
    /// `|V_ent| x d`
    pub entity_emb: Matrix,
    /// Shared GAT projection, `d x d`.
    pub gat_weight: Matrix,
    /// Attention vector over `[W h_i ‖ W h_j]`, length `2d`.
    pub attention: Vec<f64>,
    /// `2 x d`
    pub cls_weight: Matrix,
    /// `2`
    pub cls_bias: Vec<f64>,
}

pub type Gradients = ModelParams;

pub const TENSOR_NAMES: [&str; 8] = [
    "token_emb",
    "enc_weight",
    "enc_bias",
    "entity_emb",
    "gat_weight",
    "attention",
    "cls_weight",
    "cls_bias",
];

impl ModelParams {
    pub fn init(n_tokens: usize, n_entities: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {dim}")));
        }
        if n_tokens == 0 {
            return Err(Error::Config("token vocabulary is empty".into()));
        }
        let mut rng = Rng::derive(seed, 0x1417);
        let s = INIT_SCALE;
        let token_emb = Matrix::uniform(n_tokens, dim, s, &mut rng);
        let enc_weight = Matrix::uniform(dim, dim, s, &mut rng);
        let enc_bias = (0..dim).map(|_| rng.uniform(-s, s)).collect();
        let entity_emb = Matrix::uniform(n_entities, dim, s, &mut rng);
        let gat_weight = Matrix::uniform(dim, dim, s, &mut rng);
        let attention = (0..2 * dim).map(|_| rng.uniform(-s, s)).collect();
        let cls_weight = Matrix::uniform(2, dim, s, &mut rng);
        let cls_bias = (0..2).map(|_| rng.uniform(-s, s)).collect();
        Ok(ModelParams { token_emb, enc_weight, enc_bias, entity_emb, gat_weight, attention, cls_weight, cls_bias })
    }

    pub fn zeros_like(other: &ModelParams) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        ModelParams {
            token_emb: z(&other.token_emb),
            enc_weight: z(&other.enc_weight),
            enc_bias: vec![0.0; other.enc_bias.len()],
            entity_emb: z(&other.entity_emb),
            gat_weight: z(&other.gat_weight),
            attention: vec![0.0; other.attention.len()],
            cls_weight: z(&other.cls_weight),
            cls_bias: vec![0.0; other.cls_bias.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.enc_weight.rows()
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            self.token_emb.as_slice(),
            self.enc_weight.as_slice(),
            &self.enc_bias,
            self.entity_emb.as_slice(),
            self.gat_weight.as_slice(),
            &self.attention,
            self.cls_weight.as_slice(),
            &self.cls_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.token_emb.as_mut_slice(),
            self.enc_weight.as_mut_slice(),
            &mut self.enc_bias,
            self.entity_emb.as_mut_slice(),
            self.gat_weight.as_mut_slice(),
            &mut self.attention,
            self.cls_weight.as_mut_slice(),
            &mut self.cls_bias,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self -= lr · grads`
    pub fn sgd_update(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for ((name, p), g) in TENSOR_NAMES.iter().zip(self.tensors_mut()).zip(grads.tensors()) {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!("{name}: {} params vs {} grads", p.len(), g.len())));
            }
            crate::numerics::axpy(-lr, g, p);
        }
        Ok(())
    }
}

/// One document prepared for the model: token ids, entity-table rows of the
/// linked entities, their adjacency, and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<usize>,
    pub nodes: Vec<usize>,
    pub graph: DocGraph,
    pub label: Label,
}

/// Trained parameters together with the lookup tables they index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hyper: Hyperparams,
    pub vocab: Vocab,
    entities: Vec<String>,
    entity_index: HashMap<String, usize>,
    pub params: ModelParams,
}

impl Model {
    pub fn new(hyper: Hyperparams, vocab: Vocab, entities: Vec<String>, params: ModelParams) -> Result<Self> {
        let d = hyper.dim;
        let shapes = [
            ("token_emb", params.token_emb.shape(), (vocab.len(), d)),
            ("enc_weight", params.enc_weight.shape(), (d, d)),
            ("enc_bias", (params.enc_bias.len(), 1), (d, 1)),
            ("entity_emb", params.entity_emb.shape(), (entities.len(), d)),
            ("gat_weight", params.gat_weight.shape(), (d, d)),
            ("attention", (params.attention.len(), 1), (2 * d, 1)),
            ("cls_weight", params.cls_weight.shape(), (2, d)),
            ("cls_bias", (params.cls_bias.len(), 1), (2, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Dimension(format!("{name} has shape {got:?}, expected {want:?}")));
            }
        }
        let mut entity_index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if entity_index.insert(e.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate entity {e:?} in model entity table")));
            }
        }
        Ok(Model { hyper, vocab, entities, entity_index, params })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    /// Tokenise, link and build the document graph. Linked entities missing
    /// from the model's entity table are left out of the graph.
    pub fn prepare_text(&self, id: &str, text: &str, label: Label, kg: &KnowledgeGraph) -> Result<Example> {
        let words = preprocess(text);
        if words.is_empty() {
            return Err(Error::Validation(format!("document {id:?} has no tokens")));
        }
        let tokens = self.vocab.encode(&words);
        let linked: Vec<String> = if self.hyper.use_graph {
            link_entities(&words, kg).into_iter().filter(|e| self.entity_index.contains_key(e)).collect()
        } else {
            Vec::new()
        };
        let graph = build_doc_graph(&linked, kg)?;
        let nodes = linked.iter().map(|e| self.entity_index[e]).collect();
        Ok(Example { id: id.to_string(), tokens, nodes, graph, label })
    }

    pub fn prepare(&self, doc: &Document, kg: &KnowledgeGraph) -> Result<Example> {
        self.prepare_text(&doc.id, &doc.text, doc.label, kg)
    }

    /// Class probabilities `[p(benign), p(harmful)]`.
    pub fn predict_example(&self, ex: &Example) -> Result<[f64; 2]> {
        Ok(forward(ex, &self.params, &self.hyper)?.probs)
    }

    pub fn predict_text(&self, text: &str, kg: &KnowledgeGraph) -> Result<[f64; 2]> {
        let ex = self.prepare_text("", text, Label::Benign, kg)?;
        self.predict_example(&ex)
    }
}
