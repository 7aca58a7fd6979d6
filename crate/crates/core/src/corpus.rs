//! Labeled documents: JSONL ingestion, text normalisation, vocabulary,
//! stratified splitting, augmentation and the synthetic KG-separable corpus.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{Entity, KnowledgeGraph};
use crate::numerics::Rng;

/// Scores strictly above this are harmful.
pub const HARMFUL_THRESHOLD: f64 = 0.5;

/// Documents shorter than this (in tokens) are dropped before splitting.
pub const MIN_TOKENS: usize = 3;

pub const DEFAULT_LANG: &str = "en";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Harmful,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Harmful => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Harmful
        } else {
            Label::Benign
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Benign => Label::Harmful,
            Label::Harmful => Label::Benign,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Harmful => "harmful",
        })
    }
}

pub fn label_of(score: f64) -> Result<Label> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Validation(format!("toxicity score {score} outside [0, 1]")));
    }
    Ok(if score > HARMFUL_THRESHOLD { Label::Harmful } else { Label::Benign })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub score: f64,
    pub label: Label,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, lang: impl Into<String>, score: f64) -> Result<Self> {
        Ok(Document { id: id.into(), text: text.into(), lang: lang.into(), score, label: label_of(score)? })
    }

    pub fn tokens(&self) -> Vec<String> {
        preprocess(&self.text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lang: Option<String>,
}

pub fn parse_corpus(input: &str, origin: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let doc = Document::new(rec.id, rec.text, rec.lang.unwrap_or_else(|| DEFAULT_LANG.to_string()), rec.score)
            .map_err(|e| Error::Validation(format!("{}:{line_no}: {e}", origin.display())))?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{line_no}: duplicate document id {:?}",
                origin.display(),
                doc.id
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn write_corpus<W: Write>(mut out: W, docs: &[Document]) -> std::io::Result<()> {
    for d in docs {
        let rec = Record { id: d.id.clone(), text: d.text.clone(), score: d.score, lang: Some(d.lang.clone()) };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(&mut buf, docs).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Lowercase, replace every non-alphanumeric character with a space (an
/// apostrophe survives only between two alphanumerics), split on whitespace.
pub fn preprocess(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut cleaned = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || (c == '\''
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        cleaned.push(if keep { c } else { ' ' });
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub fn is_short(tokens: &[String]) -> bool {
    tokens.len() < MIN_TOKENS
}

pub const OOV_TOKEN: &str = "<unk>";

/// Token index. Index 0 is reserved for out-of-vocabulary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its token list in index order; entry 0 must be the OOV marker.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::Validation(format!("vocabulary must start with {OOV_TOKEN:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(1) {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Keeps the `max_size - 1` most frequent tokens (ties broken
/// lexicographically) plus the OOV slot.
pub fn build_vocab<'a, I>(token_lists: I, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size < 2 {
        return Err(Error::Config(format!("vocabulary max size must be at least 2, got {max_size}")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for list in token_lists {
        for t in list {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| *t != OOV_TOKEN).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = std::iter::once(OOV_TOKEN.to_string())
        .chain(ranked.into_iter().take(max_size - 1).map(|(t, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stratum {
    Low,
    Medium,
    High,
}

impl Stratum {
    pub fn of(score: f64) -> Self {
        if score < 1.0 / 3.0 {
            Stratum::Low
        } else if score < 2.0 / 3.0 {
            Stratum::Medium
        } else {
            Stratum::High
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(*r > 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<Document>,
    pub val: Vec<Document>,
    pub test: Vec<Document>,
}

/// Groups documents by toxicity stratum, preserving input order inside each group.
fn by_stratum(docs: &[Document]) -> BTreeMap<Stratum, Vec<&Document>> {
    let mut groups: BTreeMap<Stratum, Vec<&Document>> = BTreeMap::new();
    for d in docs {
        groups.entry(Stratum::of(d.score)).or_default().push(d);
    }
    groups
}

/// Largest-remainder rounding of `total · ratios`; ties go to the earlier part.
fn largest_remainder(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| total as f64 * r);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let assigned: usize = counts.iter().sum();
    for &p in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[p] += 1;
    }
    counts
}

/// Per-stratum part sizes. Every cell is the floor or ceiling of its
/// proportional share, part totals equal the largest-remainder rounding of
/// the corpus size, and among such tables the one closest to proportional wins.
fn apportion(sizes: &[usize], ratios: [f64; 3]) -> Result<Vec<[usize; 3]>> {
    let targets = largest_remainder(sizes.iter().sum(), ratios);
    let exact: Vec<[f64; 3]> = sizes.iter().map(|&n| ratios.map(|r| n as f64 * r)).collect();
    let floors: Vec<[usize; 3]> = exact.iter().map(|row| row.map(|x| x.floor() as usize)).collect();
    let cells = sizes.len() * 3;
    let mut best: Option<(f64, usize)> = None;
    for mask in 0u32..1 << cells {
        let bit = |s: usize, p: usize| (mask >> (s * 3 + p)) & 1 == 1;
        let rows_ok = (0..sizes.len()).all(|s| floors[s].iter().sum::<usize>() + (0..3).filter(|&p| bit(s, p)).count() == sizes[s]);
        let cols_ok = (0..3).all(|p| {
            (0..sizes.len()).map(|s| floors[s][p] + usize::from(bit(s, p))).sum::<usize>() == targets[p]
        });
        if !(rows_ok && cols_ok) {
            continue;
        }
        // Total absolute deviation from the exact shares, negated.
        let score: f64 = (0..sizes.len())
            .flat_map(|s| (0..3).map(move |p| (s, p)))
            .map(|(s, p)| {
                let f = exact[s][p] - floors[s][p] as f64;
                if bit(s, p) { f - 1.0 } else { -f }
            })
            .sum();
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, mask as usize));
        }
    }
    let (_, mask) = best.ok_or_else(|| Error::Validation(format!("cannot apportion strata {sizes:?}")))?;
    Ok((0..sizes.len())
        .map(|s| {
            let mut row = floors[s];
            for (p, v) in row.iter_mut().enumerate() {
                *v += (mask >> (s * 3 + p)) & 1;
            }
            row
        })
        .collect())
}

/// Drops short documents, shuffles every toxicity stratum with the seed and
/// cuts it into train/val/test. Split sizes are the rounded corpus-level
/// targets and each stratum's share of a split is within one document of
/// proportional.
pub fn stratified_split(docs: &[Document], ratios: SplitRatios, seed: u64) -> Result<SplitBundle> {
    ratios.validate()?;
    let kept: Vec<Document> = docs.iter().filter(|d| !is_short(&d.tokens())).cloned().collect();
    if kept.is_empty() {
        return Err(Error::Validation("corpus is empty after dropping short documents".into()));
    }
    let groups = by_stratum(&kept);
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let plan = apportion(&sizes, [ratios.train, ratios.val, ratios.test])?;
    let mut bundle = SplitBundle::default();
    for ((stratum, mut group), [n_train, n_val, _]) in groups.into_iter().zip(plan) {
        let mut rng = Rng::derive(seed, 0x5711 + stratum as u64);
        rng.shuffle(&mut group);
        let (train, rest) = group.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        bundle.train.extend(train.iter().map(|d| (*d).clone()));
        bundle.val.extend(val.iter().map(|d| (*d).clone()));
        bundle.test.extend(test.iter().map(|d| (*d).clone()));
    }
    Ok(bundle)
}

/// Keeps `round(ratio · n)` documents of every stratum, chosen by seeded
/// shuffle, and returns them in their original order. `ratio >= 1` is the identity.
pub fn stratified_subsample(docs: &[Document], ratio: f64, seed: u64) -> Result<Vec<Document>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("subsample ratio must lie in (0, 1], got {ratio}")));
    }
    if ratio == 1.0 {
        return Ok(docs.to_vec());
    }
    let mut keep = vec![false; docs.len()];
    let mut groups: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        groups.entry(Stratum::of(d.score)).or_default().push(i);
    }
    for (stratum, mut idx) in groups {
        let mut rng = Rng::derive(seed, 0x5a3b + stratum as u64);
        rng.shuffle(&mut idx);
        let take = (idx.len() as f64 * ratio).round() as usize;
        for &i in &idx[..take] {
            keep[i] = true;
        }
    }
    Ok(docs.iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d.clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Synonym,
    Delete,
}

impl AugmentMode {
    fn suffix(self) -> &'static str {
        match self {
            AugmentMode::Synonym => "syn",
            AugmentMode::Delete => "del",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentPolicy {
    pub lexicon: BTreeMap<String, Vec<String>>,
    /// Maximum number of synonym substitutions per document.
    pub replacements: usize,
    /// Per-token deletion probability.
    pub delete_prob: f64,
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delete_prob) {
            return Err(Error::Config(format!("deletion probability must lie in [0, 1), got {}", self.delete_prob)));
        }
        Ok(())
    }
}

pub fn augment(doc: &Document, policy: &AugmentPolicy, mode: AugmentMode, seed: u64) -> Result<Document> {
    policy.validate()?;
    let mut tokens = doc.tokens();
    if tokens.is_empty() {
        return Err(Error::Validation(format!("document {:?} has no tokens to augment", doc.id)));
    }
    let mut rng = Rng::new(seed);
    match mode {
        AugmentMode::Synonym => {
            let mut slots: Vec<usize> = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| policy.lexicon.get(*t).is_some_and(|s| !s.is_empty()))
                .map(|(i, _)| i)
                .collect();
            rng.shuffle(&mut slots);
            for &i in slots.iter().take(policy.replacements) {
                let subs = &policy.lexicon[&tokens[i]];
                tokens[i] = subs[rng.below(subs.len())].clone();
            }
        }
        AugmentMode::Delete => {
            let kept: Vec<String> = tokens.iter().filter(|_| !rng.bernoulli(policy.delete_prob)).cloned().collect();
            tokens = if kept.is_empty() { vec![tokens[rng.below(tokens.len())].clone()] } else { kept };
        }
    }
    Ok(Document {
        id: format!("{}#{}", doc.id, mode.suffix()),
        text: tokens.join(" "),
        lang: doc.lang.clone(),
        score: doc.score,
        label: doc.label,
    })
}

/// Knobs for [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub n_entities: usize,
    pub edge_density: f64,
    pub filler_vocab_size: usize,
    pub fillers_per_doc: usize,
    /// Language codes assigned round-robin over the shuffled documents.
    pub langs: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_docs: 500,
            n_entities: 20,
            edge_density: 0.3,
            filler_vocab_size: 20,
            fillers_per_doc: 6,
            langs: vec![DEFAULT_LANG.to_string()],
            seed: 7,
        }
    }
}

pub const SYNTHETIC_HARMFUL_SCORE: f64 = 0.9;
pub const SYNTHETIC_BENIGN_SCORE: f64 = 0.1;
pub const SYNTHETIC_RATE_RANGE: (f64, f64) = (0.3, 0.7);

const GRAPH_ATTEMPTS: usize = 50;
const PAIR_ATTEMPTS: usize = 200;

pub fn entity_id(i: usize) -> String {
    format!("e{i:02}")
}

fn entity_surface(i: usize) -> String {
    format!("ent{i:02}")
}

fn filler_token(i: usize) -> String {
    format!("w{i:03}")
}

/// Generates a corpus whose label depends only on whether the document's two
/// entities are adjacent in a random knowledge graph.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<Document>, KnowledgeGraph)> {
    let n = cfg.n_entities;
    if n < 4 {
        return Err(Error::Config(format!("need at least 4 entities, got {n}")));
    }
    if !(cfg.edge_density > 0.0 && cfg.edge_density < 1.0) {
        return Err(Error::Config(format!("edge density must lie in (0, 1), got {}", cfg.edge_density)));
    }
    if cfg.n_docs < 20 {
        return Err(Error::Config(format!("need at least 20 documents, got {}", cfg.n_docs)));
    }
    if cfg.filler_vocab_size == 0 || cfg.fillers_per_doc + 2 < MIN_TOKENS {
        return Err(Error::Config("filler vocabulary must be nonempty and documents at least 3 tokens".into()));
    }
    if cfg.langs.is_empty() {
        return Err(Error::Config("at least one language code is required".into()));
    }

    let mut rng = Rng::derive(cfg.seed, 0x9e4);
    let all_pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let n_edges = ((all_pairs.len() as f64 * cfg.edge_density).round() as usize).clamp(1, all_pairs.len() - 1);
    let n_harmful = cfg.n_docs / 2;

    for _ in 0..GRAPH_ATTEMPTS {
        let mut shuffled = all_pairs.clone();
        rng.shuffle(&mut shuffled);
        let mut edges = shuffled[..n_edges].to_vec();
        edges.sort_unstable();
        let edge_set: HashSet<(usize, usize)> = edges.iter().copied().collect();

        let mut linked = vec![Vec::new(); n];
        let mut unlinked = vec![Vec::new(); n];
        for &(i, j) in &all_pairs {
            let bucket = if edge_set.contains(&(i, j)) { &mut linked } else { &mut unlinked };
            bucket[i].push(j);
            bucket[j].push(i);
        }
        if (0..n).any(|i| linked[i].is_empty() || unlinked[i].is_empty()) {
            continue;
        }

        for _ in 0..PAIR_ATTEMPTS {
            let pairs: Vec<(usize, usize, Label)> = (0..cfg.n_docs)
                .map(|k| {
                    let label = if k < n_harmful { Label::Harmful } else { Label::Benign };
                    let anchor = rng.below(n);
                    let pool = if label == Label::Harmful { &linked[anchor] } else { &unlinked[anchor] };
                    let partner = pool[rng.below(pool.len())];
                    (anchor, partner, label)
                })
                .collect();
            if rates_within_range(&pairs, n) {
                let kg = synthetic_kg(n, &edges)?;
                let docs = synthetic_docs(cfg, pairs, &mut rng)?;
                return Ok((docs, kg));
            }
        }
    }
    Err(Error::Generation(format!(
        "could not keep every entity's harmful rate within [{}, {}] for {} documents over {n} entities; \
         increase the document count",
        SYNTHETIC_RATE_RANGE.0, SYNTHETIC_RATE_RANGE.1, cfg.n_docs
    )))
}

fn rates_within_range(pairs: &[(usize, usize, Label)], n: usize) -> bool {
    let mut counts = vec![[0usize; 2]; n];
    for &(a, b, label) in pairs {
        counts[a][label.index()] += 1;
        counts[b][label.index()] += 1;
    }
    counts.iter().all(|[benign, harmful]| {
        let total = benign + harmful;
        if total == 0 {
            return false;
        }
        let rate = *harmful as f64 / total as f64;
        (SYNTHETIC_RATE_RANGE.0..=SYNTHETIC_RATE_RANGE.1).contains(&rate)
    })
}

fn synthetic_kg(n: usize, edges: &[(usize, usize)]) -> Result<KnowledgeGraph> {
    let entities = (0..n).map(|i| Entity { id: entity_id(i), surface: vec![vec![entity_surface(i)]] }).collect();
    let edges = edges.iter().map(|&(i, j)| (entity_id(i), entity_id(j), Some("related".to_string()))).collect();
    KnowledgeGraph::new(entities, edges)
}

fn synthetic_docs(cfg: &SyntheticConfig, pairs: Vec<(usize, usize, Label)>, rng: &mut Rng) -> Result<Vec<Document>> {
    let mut docs = Vec::with_capacity(pairs.len());
    for (anchor, partner, label) in pairs {
        let mut words: Vec<String> =
            (0..cfg.fillers_per_doc).map(|_| filler_token(rng.below(cfg.filler_vocab_size))).collect();
        words.push(entity_surface(anchor));
        words.push(entity_surface(partner));
        rng.shuffle(&mut words);
        let score = match label {
            Label::Harmful => SYNTHETIC_HARMFUL_SCORE,
            Label::Benign => SYNTHETIC_BENIGN_SCORE,
        };
        docs.push((words.join(" "), score));
    }
    rng.shuffle(&mut docs);
    docs.into_iter()
        .enumerate()
        .map(|(k, (text, score))| Document::new(format!("syn{k:05}"), text, cfg.langs[k % cfg.langs.len()].clone(), score))
        .collect()
}
