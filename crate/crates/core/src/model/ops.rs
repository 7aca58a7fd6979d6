use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::knowledge::DocGraph;
use crate::numerics::{axpy, dot, leaky_relu, leaky_relu_grad, log_sum_exp, norm, softmax};

use super::{Example, Gradients, Hyperparams, ModelParams};

/// Probabilities are clamped to this before taking a log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Norm floor for cosine similarity.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// Mean of the token embeddings.
    pub pooled: Vec<f64>,
    /// `tanh(W_enc · pooled + b_enc)`
    pub h: Vec<f64>,
}

pub fn encode(tokens: &[usize], params: &ModelParams) -> Result<Encoded> {
    if tokens.is_empty() {
        return Err(Error::Validation("cannot encode an empty token list".into()));
    }
    let vocab = params.token_emb.rows();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Dimension(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let mut pooled = vec![0.0; params.dim()];
    for &t in tokens {
        axpy(1.0, params.token_emb.row(t), &mut pooled);
    }
    let inv = 1.0 / tokens.len() as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);
    let mut h = params.enc_weight.matvec(&pooled);
    for (v, b) in h.iter_mut().zip(&params.enc_bias) {
        *v = (*v + b).tanh();
    }
    Ok(Encoded { pooled, h })
}

/// Per-node results of one attention layer, with what backprop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GatOutput {
    /// `W h_i` for each node.
    pub projected: Vec<Vec<f64>>,
    /// `N(i)` for each node, self included.
    pub neighbors: Vec<Vec<usize>>,
    /// Pre-activation scores `a · [W h_i ‖ W h_j]`, aligned with `neighbors`.
    pub scores: Vec<Vec<f64>>,
    /// Attention weights `α_ij`, aligned with `neighbors`.
    pub attention: Vec<Vec<f64>>,
    /// `h'_i = Σ_j α_ij W h_j`
    pub outputs: Vec<Vec<f64>>,
}

/// Single-head graph attention over a document graph. `nodes[i]` is the
/// entity-table row feeding node `i`.
pub fn gat_layer(graph: &DocGraph, nodes: &[usize], params: &ModelParams, leaky_slope: f64) -> Result<GatOutput> {
    let n = graph.len();
    if n == 0 {
        return Err(Error::Validation("attention layer needs at least one node".into()));
    }
    if nodes.len() != n {
        return Err(Error::Dimension(format!("{} node rows for a {n}-node graph", nodes.len())));
    }
    let table = params.entity_emb.rows();
    if let Some(&bad) = nodes.iter().find(|&&r| r >= table) {
        return Err(Error::Dimension(format!("entity row {bad} outside table of {table}")));
    }
    let d = params.dim();
    let (att_left, att_right) = params.attention.split_at(d);
    let projected: Vec<Vec<f64>> = nodes.iter().map(|&r| params.gat_weight.matvec(params.entity_emb.row(r))).collect();
    let left: Vec<f64> = projected.iter().map(|z| dot(att_left, z)).collect();
    let right: Vec<f64> = projected.iter().map(|z| dot(att_right, z)).collect();

    let mut neighbors = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut attention = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let nb = graph.neighbors(i);
        let s: Vec<f64> = nb.iter().map(|&j| left[i] + right[j]).collect();
        let e: Vec<f64> = s.iter().map(|&x| leaky_relu(x, leaky_slope)).collect();
        let alpha = softmax(&e)?;
        let mut out = vec![0.0; d];
        for (&j, &a) in nb.iter().zip(&alpha) {
            axpy(a, &projected[j], &mut out);
        }
        neighbors.push(nb);
        scores.push(s);
        attention.push(alpha);
        outputs.push(out);
    }
    Ok(GatOutput { projected, neighbors, scores, attention, outputs })
}

/// Mean-pools node features into `h'` and returns `(h', H)` with
/// `H = fusion · h + (1 − fusion) · h'`. With no nodes, `H = h`.
pub fn pool_and_fuse(h: &[f64], node_outputs: &[Vec<f64>], fusion: f64) -> (Option<Vec<f64>>, Vec<f64>) {
    if node_outputs.is_empty() {
        return (None, h.to_vec());
    }
    let mut pooled = vec![0.0; h.len()];
    for out in node_outputs {
        axpy(1.0, out, &mut pooled);
    }
    let inv = 1.0 / node_outputs.len() as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);
    let fused = h.iter().zip(&pooled).map(|(a, b)| fusion * a + (1.0 - fusion) * b).collect();
    (Some(pooled), fused)
}

/// `softmax(W_c H + b_c)` as `[p(benign), p(harmful)]`.
pub fn classify(fused: &[f64], params: &ModelParams) -> Result<[f64; 2]> {
    let mut logits = params.cls_weight.matvec(fused);
    axpy(1.0, &params.cls_bias, &mut logits);
    let p = softmax(&logits)?;
    Ok([p[0], p[1]])
}

/// Argmax with ties going to benign.
pub fn predicted_label(probs: &[f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::Harmful
    } else {
        Label::Benign
    }
}

pub fn ce_loss(probs: &[f64; 2], label: Label) -> f64 {
    -probs[label.index()].max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    /// Number of (anchor, positive) terms that contributed.
    pub pairs: usize,
    /// `∂loss/∂h_b` for every embedding.
    pub grads: Vec<Vec<f64>>,
}

/// Supervised contrastive loss with cosine similarity, summed over ordered
/// same-label pairs. Each term's denominator runs over the anchor's
/// opposite-label embeddings only.
pub fn contrastive_loss_with_grad(embeddings: &[Vec<f64>], labels: &[Label], temperature: f64) -> Result<ContrastiveGrad> {
    if embeddings.len() != labels.len() {
        return Err(Error::Dimension(format!("{} embeddings vs {} labels", embeddings.len(), labels.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let b = embeddings.len();
    let mut norms = Vec::with_capacity(b);
    let mut unit = Vec::with_capacity(b);
    for (i, h) in embeddings.iter().enumerate() {
        let nrm = norm(h);
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::Numeric(format!("embedding {i} has norm {nrm}; cosine similarity undefined")));
        }
        let nrm = nrm.max(NORM_FLOOR);
        norms.push(nrm);
        unit.push(h.iter().map(|v| v / nrm).collect::<Vec<f64>>());
    }
    let sim = |i: usize, j: usize| dot(&unit[i], &unit[j]);

    let mut loss = 0.0;
    let mut pairs = 0;
    let mut dsim = vec![vec![0.0; b]; b];
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let negatives: Vec<usize> = (0..b).filter(|&k| labels[k] != labels[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let logits: Vec<f64> = negatives.iter().map(|&k| sim(i, k) / temperature).collect();
        let lse = log_sum_exp(&logits);
        for &j in &positives {
            loss += lse - sim(i, j) / temperature;
            dsim[i][j] -= 1.0 / temperature;
        }
        let weight = positives.len() as f64 / temperature;
        for (&k, &z) in negatives.iter().zip(&logits) {
            dsim[i][k] += weight * (z - lse).exp();
        }
        pairs += positives.len();
    }

    let mut grads = vec![vec![0.0; embeddings.first().map_or(0, Vec::len)]; b];
    if pairs > 0 {
        for i in 0..b {
            let mut du = vec![0.0; grads[i].len()];
            for j in 0..b {
                let g = dsim[i][j] + dsim[j][i];
                if g != 0.0 {
                    axpy(g, &unit[j], &mut du);
                }
            }
            let radial = dot(&unit[i], &du);
            grads[i] = du.iter().zip(&unit[i]).map(|(g, u)| (g - u * radial) / norms[i]).collect();
        }
    }
    Ok(ContrastiveGrad { loss, pairs, grads })
}

pub fn contrastive_loss(embeddings: &[Vec<f64>], labels: &[Label], temperature: f64) -> Result<f64> {
    Ok(contrastive_loss_with_grad(embeddings, labels, temperature)?.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub encoded: Encoded,
    pub gat: Option<GatOutput>,
    /// Mean of the node outputs, absent when the graph path is skipped.
    pub pooled: Option<Vec<f64>>,
    pub fused: Vec<f64>,
    pub probs: [f64; 2],
}

impl ForwardTrace {
    pub fn h(&self) -> &[f64] {
        &self.encoded.h
    }
}

pub fn forward(ex: &Example, params: &ModelParams, hyper: &Hyperparams) -> Result<ForwardTrace> {
    let encoded = encode(&ex.tokens, params)?;
    let gat = if hyper.use_graph && !ex.nodes.is_empty() {
        Some(gat_layer(&ex.graph, &ex.nodes, params, hyper.leaky_slope)?)
    } else {
        None
    };
    let node_outputs = gat.as_ref().map_or(&[][..], |g| &g.outputs[..]);
    let (pooled, fused) = pool_and_fuse(&encoded.h, node_outputs, hyper.fusion);
    let probs = classify(&fused, params)?;
    Ok(ForwardTrace { encoded, gat, pooled, fused, probs })
}

/// Loss of one batch and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// `ce + contrastive_weight · contrastive`
    pub loss: f64,
    /// Mean cross-entropy over the batch.
    pub ce: f64,
    /// Contrastive sum divided by the number of contributing pairs (0 when none).
    pub contrastive: f64,
    pub grads: Gradients,
}

/// Joint objective: mean cross-entropy plus `contrastive_weight` times the
/// pair-averaged contrastive loss on the encoder outputs `h`.
pub fn forward_backward(batch: &[Example], params: &ModelParams, hyper: &Hyperparams) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let traces = batch
        .iter()
        .map(|ex| {
            forward(ex, params, hyper).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} on document {:?}", ex.id)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let b = batch.len() as f64;

    let mut ce = 0.0;
    for (ex, tr) in batch.iter().zip(&traces) {
        let l = ce_loss(&tr.probs, ex.label);
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite cross-entropy on document {:?}", ex.id)));
        }
        ce += l;
    }
    ce /= b;

    let mut contrastive = 0.0;
    let mut h_grads: Option<Vec<Vec<f64>>> = None;
    if hyper.contrastive_weight > 0.0 && batch.len() >= 2 {
        let hs: Vec<Vec<f64>> = traces.iter().map(|t| t.encoded.h.clone()).collect();
        let labels: Vec<Label> = batch.iter().map(|ex| ex.label).collect();
        let cg = contrastive_loss_with_grad(&hs, &labels, hyper.temperature).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg} (batch starting at document {:?})", batch[0].id)),
            other => other,
        })?;
        if cg.pairs > 0 {
            let scale = hyper.contrastive_weight / cg.pairs as f64;
            contrastive = cg.loss / cg.pairs as f64;
            h_grads = Some(cg.grads.into_iter().map(|g| g.into_iter().map(|v| v * scale).collect()).collect());
        }
    }
    let loss = ce + hyper.contrastive_weight * contrastive;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite joint loss in batch starting at document {:?}", batch[0].id)));
    }

    let mut grads = Gradients::zeros_like(params);
    for (k, (ex, tr)) in batch.iter().zip(&traces).enumerate() {
        let y = ex.label.index();
        let dlogits: [f64; 2] = if tr.probs[y] > PROB_FLOOR {
            let mut g = [tr.probs[0] / b, tr.probs[1] / b];
            g[y] -= 1.0 / b;
            g
        } else {
            [0.0, 0.0]
        };
        let extra = h_grads.as_ref().map(|g| g[k].as_slice());
        backward(ex, tr, &dlogits, extra, params, hyper, &mut grads);
    }
    Ok(BatchLoss { loss, ce, contrastive, grads })
}

/// Accumulates the gradient of one document's contribution into `grads`.
fn backward(
    ex: &Example,
    tr: &ForwardTrace,
    dlogits: &[f64; 2],
    dh_extra: Option<&[f64]>,
    params: &ModelParams,
    hyper: &Hyperparams,
    grads: &mut Gradients,
) {
    let d = params.dim();
    grads.cls_weight.add_outer(1.0, dlogits, &tr.fused);
    axpy(1.0, dlogits, &mut grads.cls_bias);
    let dfused = params.cls_weight.matvec_t(dlogits);

    let mut dh = match &tr.gat {
        Some(_) => dfused.iter().map(|g| hyper.fusion * g).collect::<Vec<f64>>(),
        None => dfused.clone(),
    };
    if let Some(extra) = dh_extra {
        axpy(1.0, extra, &mut dh);
    }

    if let Some(gat) = &tr.gat {
        let n = gat.outputs.len();
        let dout: Vec<f64> = dfused.iter().map(|g| (1.0 - hyper.fusion) * g / n as f64).collect();
        let (att_left, att_right) = params.attention.split_at(d);
        let mut dz = vec![vec![0.0; d]; n];
        let mut datt = vec![0.0; 2 * d];
        for i in 0..n {
            let nb = &gat.neighbors[i];
            let alpha = &gat.attention[i];
            let dalpha: Vec<f64> = nb.iter().map(|&j| dot(&dout, &gat.projected[j])).collect();
            let mean_dalpha = dot(alpha, &dalpha);
            for (idx, &j) in nb.iter().enumerate() {
                axpy(alpha[idx], &dout, &mut dz[j]);
                let de = alpha[idx] * (dalpha[idx] - mean_dalpha);
                let ds = de * leaky_relu_grad(gat.scores[i][idx], hyper.leaky_slope);
                if ds != 0.0 {
                    axpy(ds, &gat.projected[i], &mut datt[..d]);
                    axpy(ds, &gat.projected[j], &mut datt[d..]);
                    axpy(ds, att_left, &mut dz[i]);
                    axpy(ds, att_right, &mut dz[j]);
                }
            }
        }
        axpy(1.0, &datt, &mut grads.attention);
        for (i, &row) in ex.nodes.iter().enumerate() {
            let input = params.entity_emb.row(row);
            grads.gat_weight.add_outer(1.0, &dz[i], input);
            let dinput = params.gat_weight.matvec_t(&dz[i]);
            axpy(1.0, &dinput, grads.entity_emb.row_mut(row));
        }
    }

    let dpre: Vec<f64> = dh.iter().zip(&tr.encoded.h).map(|(g, h)| g * (1.0 - h * h)).collect();
    grads.enc_weight.add_outer(1.0, &dpre, &tr.encoded.pooled);
    axpy(1.0, &dpre, &mut grads.enc_bias);
    let dpooled = params.enc_weight.matvec_t(&dpre);
    let inv = 1.0 / ex.tokens.len() as f64;
    for &t in &ex.tokens {
        axpy(inv, &dpooled, grads.token_emb.row_mut(t));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::DocGraph;
    use crate::numerics::Matrix;

    fn params(d: usize, vocab: usize, ents: usize, seed: u64) -> ModelParams {
        ModelParams::init(vocab, ents, d, seed).unwrap()
    }

    fn zeroed(p: &ModelParams) -> ModelParams {
        ModelParams::zeros_like(p)
    }

    fn graph(adj: Vec<Vec<u8>>) -> DocGraph {
        DocGraph { entities: (0..adj.len()).map(|i| format!("e{i}")).collect(), adjacency: adj }
    }

    #[test]
    fn encode_zero_params_gives_zero() {
        let p = zeroed(&params(4, 3, 1, 0));
        let enc = encode(&[0, 1, 2], &p).unwrap();
        assert!(enc.h.iter().all(|&v| v == 0.0));
        assert!(encode(&[], &p).is_err());
        assert!(matches!(encode(&[9], &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn encode_is_mean_invariant() {
        let p = params(4, 3, 1, 5);
        assert_eq!(encode(&[2, 2, 2], &p).unwrap().h, encode(&[2], &p).unwrap().h);
    }

    #[test]
    fn encode_matches_hand_computation_at_d2() {
        let mut p = zeroed(&params(2, 3, 1, 0));
        p.token_emb = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.2, -0.4], vec![0.6, 0.8]]).unwrap();
        p.enc_weight = Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0]]).unwrap();
        p.enc_bias = vec![0.1, -0.2];
        // mean of rows 1 and 2 = [0.4, 0.2]; W·x + b = [0.4+0.1+0.1, -0.12+0.4-0.2] = [0.6, 0.08]
        let h = encode(&[1, 2], &p).unwrap().h;
        assert!((h[0] - 0.6f64.tanh()).abs() < 1e-15);
        assert!((h[1] - 0.08f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let p = params(3, 2, 2, 1);
        let out = gat_layer(&graph(vec![vec![1]]), &[1], &p, 0.2).unwrap();
        assert_eq!(out.attention[0], vec![1.0]);
        assert_eq!(out.outputs[0], p.gat_weight.matvec(p.entity_emb.row(1)));
    }

    #[test]
    fn zero_attention_vector_gives_uniform_weights() {
        let mut p = params(3, 2, 2, 1);
        p.attention = vec![0.0; 6];
        let out = gat_layer(&graph(vec![vec![1, 1], vec![1, 1]]), &[0, 1], &p, 0.2).unwrap();
        let z0 = p.gat_weight.matvec(p.entity_emb.row(0));
        let z1 = p.gat_weight.matvec(p.entity_emb.row(1));
        for i in 0..2 {
            assert_eq!(out.attention[i], vec![0.5, 0.5]);
            for k in 0..3 {
                assert!((out.outputs[i][k] - (z0[k] + z1[k]) / 2.0).abs() < 1e-15);
            }
        }
        assert!(gat_layer(&DocGraph::default(), &[], &p, 0.2).is_err());
    }

    #[test]
    fn fusion_examples() {
        let h = [2.0, 0.0];
        assert_eq!(pool_and_fuse(&h, &[vec![0.0, 2.0]], 0.5).1, vec![1.0, 1.0]);
        assert_eq!(pool_and_fuse(&h, &[vec![0.0, 2.0]], 1.0).1, h.to_vec());
        assert_eq!(pool_and_fuse(&h, &[vec![0.0, 2.0]], 0.0).1, vec![0.0, 2.0]);
        let (pooled, fused) = pool_and_fuse(&h, &[], 0.0);
        assert!(pooled.is_none());
        assert_eq!(fused, h.to_vec());
    }

    #[test]
    fn classify_examples() {
        let mut p = zeroed(&params(2, 1, 0, 0));
        let probs = classify(&[0.3, -0.7], &p).unwrap();
        assert_eq!(probs, [0.5, 0.5]);
        assert_eq!(predicted_label(&probs), Label::Benign);
        p.cls_bias = vec![0.0, 10.0];
        let probs = classify(&[0.3, -0.7], &p).unwrap();
        assert!(probs[1] > 0.9999);
        assert_eq!(predicted_label(&probs), Label::Harmful);
    }

    #[test]
    fn classify_matches_direct_softmax() {
        let mut p = zeroed(&params(2, 1, 0, 0));
        p.cls_weight = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        p.cls_bias = vec![0.1, -0.3];
        // logits: [0.5*0.4 - 1.0*0.8 + 0.1, 2.0*0.4 + 0.25*0.8 - 0.3] = [-0.5, 0.7]
        let probs = classify(&[0.4, 0.8], &p).unwrap();
        let want = 1.0 / (1.0 + (-1.2f64).exp());
        assert!((probs[1] - want).abs() < 1e-15);
    }

    #[test]
    fn ce_examples() {
        assert!((ce_loss(&[0.5, 0.5], Label::Harmful) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(ce_loss(&[1.0, 0.0], Label::Benign).abs() < 1e-15);
        assert!((ce_loss(&[0.9, 0.1], Label::Harmful) - 2.302585092994046).abs() < 1e-12);
        assert!((ce_loss(&[1.0, 0.0], Label::Harmful) - 30.0 * std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn contrastive_uniform_identity_and_single_class() {
        let e = vec![vec![0.3, -0.2]; 4];
        let labels = [Label::Harmful, Label::Harmful, Label::Benign, Label::Benign];
        let loss = contrastive_loss(&e, &labels, 0.1).unwrap();
        assert!((loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(contrastive_loss(&e, &[Label::Benign; 4], 0.1).unwrap(), 0.0);
        assert!(matches!(contrastive_loss(&[vec![0.0, 0.0], vec![1.0, 0.0]], &labels[1..3], 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn contrastive_hand_evaluated_three_points() {
        // h0 = (1,0) harmful, h1 = (0,1) harmful, h2 = (1,1) benign; τ = 0.5.
        // Anchor 0: positive 1 (cos 0), negative 2 (cos 1/√2): term = −(0 − (1/√2)/0.5) = √2.
        // Anchor 1: symmetric, also √2. Anchor 2: no positives.
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let labels = [Label::Harmful, Label::Harmful, Label::Benign];
        let loss = contrastive_loss(&e, &labels, 0.5).unwrap();
        assert!((loss - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }
}
