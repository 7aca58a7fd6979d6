//! Finite-difference verification of the analytic gradients of the joint
//! objective, tensor by tensor.

use crate::corpus::{build_vocab, preprocess, Document};
use crate::error::Result;
use crate::knowledge::{Entity, KnowledgeGraph};
use crate::model::{
    ce_loss, contrastive_loss_with_grad, forward, forward_backward, Example, Hyperparams, Model, ModelParams,
    TENSOR_NAMES,
};
use crate::numerics::grad_check;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per tensor, in `TENSOR_NAMES` order.
    pub tensors: Vec<(&'static str, f64)>,
    pub max_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }
}

/// The joint objective evaluated from forward passes only.
pub fn batch_loss(batch: &[Example], params: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    let traces = batch.iter().map(|ex| forward(ex, params, hyper)).collect::<Result<Vec<_>>>()?;
    let ce = batch.iter().zip(&traces).map(|(ex, t)| ce_loss(&t.probs, ex.label)).sum::<f64>() / batch.len() as f64;
    let mut contrastive = 0.0;
    if hyper.contrastive_weight > 0.0 && batch.len() >= 2 {
        let hs: Vec<Vec<f64>> = traces.iter().map(|t| t.encoded.h.clone()).collect();
        let labels: Vec<_> = batch.iter().map(|ex| ex.label).collect();
        let c = contrastive_loss_with_grad(&hs, &labels, hyper.temperature)?;
        if c.pairs > 0 {
            contrastive = c.loss / c.pairs as f64;
        }
    }
    Ok(ce + hyper.contrastive_weight * contrastive)
}

pub fn check_gradients(batch: &[Example], params: &ModelParams, hyper: &Hyperparams, step: f64) -> Result<GradCheckReport> {
    let analytic = forward_backward(batch, params, hyper)?.grads;
    let mut tensors = Vec::with_capacity(TENSOR_NAMES.len());
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let base = params.tensors()[t].to_vec();
        let mut probe = params.clone();
        let loss = |values: &[f64]| {
            probe.tensors_mut()[t].copy_from_slice(values);
            batch_loss(batch, &probe, hyper)
        };
        let err = grad_check(loss, &base, analytic.tensors()[t], step)?;
        tensors.push((*name, err));
    }
    let max_error = tensors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport { tensors, max_error })
}

/// A four-document batch over a three-entity path graph covering an
/// adjacent pair, a non-adjacent pair, a three-node document and a document
/// with no linked entities.
pub fn fixture(dim: usize, seed: u64) -> Result<(Model, KnowledgeGraph, Vec<Example>)> {
    let kg = KnowledgeGraph::new(
        vec![
            Entity { id: "e0".into(), surface: vec![preprocess("alpha")] },
            Entity { id: "e1".into(), surface: vec![preprocess("beta")] },
            Entity { id: "e2".into(), surface: vec![preprocess("gamma corp")] },
        ],
        vec![("e0".into(), "e1".into(), None), ("e1".into(), "e2".into(), None)],
    )?;
    let docs = [
        ("d0", "alpha met beta today", 0.9),
        ("d1", "alpha beta and gamma corp together", 0.8),
        ("d2", "alpha visited gamma corp quietly", 0.1),
        ("d3", "nothing linked in here at all", 0.2),
    ]
    .into_iter()
    .map(|(id, text, score)| Document::new(id, text, "en", score))
    .collect::<Result<Vec<_>>>()?;
    let token_lists: Vec<Vec<String>> = docs.iter().map(Document::tokens).collect();
    let vocab = build_vocab(token_lists.iter().map(Vec::as_slice), 1000)?;
    let hyper = Hyperparams { dim, seed, ..Default::default() };
    let mut params = ModelParams::init(vocab.len(), 3, dim, seed)?;
    // Push activations out of the near-linear regime so every term is exercised.
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= 5.0);
    }
    let model = Model::new(hyper, vocab, vec!["e0".into(), "e1".into(), "e2".into()], params)?;
    let batch = docs.iter().map(|d| model.prepare(d, &kg)).collect::<Result<Vec<_>>>()?;
    Ok((model, kg, batch))
}

/// Gradient check on [`fixture`] at `dim = 8`.
pub fn self_check(seed: u64) -> Result<GradCheckReport> {
    let (model, _, batch) = fixture(8, seed)?;
    check_gradients(&batch, &model.params, &model.hyper, DEFAULT_STEP)
}
