//! Helpers shared by the integration tests. Oracles here deliberately avoid
//! the crate's model code.
#![allow(dead_code)]

use std::collections::BTreeMap;

use kgfuse::corpus::{Document, Label};
use kgfuse::knowledge::DocGraph;
use kgfuse::numerics::Rng;

/// Random symmetric 0/1 adjacency over `n` nodes with self-loops.
pub fn random_graph(n: usize, density: f64, rng: &mut Rng) -> DocGraph {
    let mut adjacency = vec![vec![0u8; n]; n];
    for i in 0..n {
        adjacency[i][i] = 1;
        for j in i + 1..n {
            if rng.bernoulli(density) {
                adjacency[i][j] = 1;
                adjacency[j][i] = 1;
            }
        }
    }
    DocGraph { entities: (0..n).map(|i| format!("n{i}")).collect(), adjacency }
}

pub fn is_harmful(d: &Document) -> bool {
    d.label == Label::Harmful
}

/// Bag-of-words logistic regression trained by full-batch gradient descent
/// on token counts, optionally with one extra indicator feature per
/// document. Returns test accuracy.
pub fn logistic_oracle(
    train: &[Document],
    test: &[Document],
    extra: &dyn Fn(&Document) -> f64,
) -> f64 {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for d in train {
        for t in d.text.split_whitespace() {
            let n = index.len();
            index.entry(t.to_lowercase()).or_insert(n);
        }
    }
    let width = index.len() + 2;
    let features = |d: &Document| {
        let mut x = vec![0.0; width];
        for t in d.text.split_whitespace() {
            if let Some(&i) = index.get(&t.to_lowercase()) {
                x[i] += 1.0;
            }
        }
        x[width - 2] = extra(d);
        x[width - 1] = 1.0;
        x
    };
    let xs: Vec<Vec<f64>> = train.iter().map(features).collect();
    let ys: Vec<f64> = train.iter().map(|d| if is_harmful(d) { 1.0 } else { 0.0 }).collect();
    let mut w = vec![0.0; width];
    let n = xs.len() as f64;
    for _ in 0..2000 {
        let mut g = vec![0.0; width];
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += (p - y) * xi / n;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= 0.5 * (gi + 1e-3 * *wi);
        }
    }
    let correct = test
        .iter()
        .filter(|d| {
            let z: f64 = features(d).iter().zip(&w).map(|(a, b)| a * b).sum();
            (z > 0.0) == is_harmful(d)
        })
        .count();
    correct as f64 / test.len() as f64
}
