//! Knowledge-graph store, greedy surface-form entity linking and per-document
//! adjacency construction.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest surface form, in tokens, that the linker will try.
pub const MAX_SPAN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    /// Each surface form is a lowercase token sequence of 1..=3 tokens.
    pub surface: Vec<Vec<String>>,
}

/// Undirected entity-relation graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    index: HashMap<String, usize>,
    /// Keyed by `(min, max)` entity index; value is the optional relation label.
    edges: BTreeMap<(usize, usize), Option<String>>,
    surfaces: HashMap<Vec<String>, usize>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl KnowledgeGraph {
    pub fn new(entities: Vec<Entity>, edges: Vec<(String, String, Option<String>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entities.len());
        let mut surfaces: HashMap<Vec<String>, usize> = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate entity id {:?}", e.id)));
            }
            if e.surface.is_empty() {
                return Err(Error::Validation(format!("entity {:?} has no surface forms", e.id)));
            }
            for form in &e.surface {
                if form.is_empty() || form.len() > MAX_SPAN {
                    return Err(Error::Validation(format!(
                        "entity {:?}: surface forms must have 1..={MAX_SPAN} tokens, got {:?}",
                        e.id, form
                    )));
                }
                let key: Vec<String> = form.iter().map(|t| t.to_lowercase()).collect();
                if let Some(&other) = surfaces.get(&key) {
                    if other != i {
                        return Err(Error::Validation(format!(
                            "surface form {:?} is shared by {:?} and {:?}",
                            key.join(" "),
                            entities[other].id,
                            e.id
                        )));
                    }
                }
                surfaces.insert(key, i);
            }
        }
        let mut edge_map = BTreeMap::new();
        for (a, b, rel) in edges {
            let ia = index.get(&a).copied();
            let ib = index.get(&b).copied();
            let (Some(ia), Some(ib)) = (ia, ib) else {
                return Err(Error::Validation(format!("edge ({a:?}, {b:?}) references an unknown entity")));
            };
            if ia == ib {
                return Err(Error::Validation(format!("self-edge on entity {a:?}")));
            }
            edge_map.insert(edge_key(ia, ib), rel);
        }
        Ok(KnowledgeGraph { entities, index, edges: edge_map, surfaces })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn related(&self, a: &str, b: &str) -> bool {
        match (self.entity_index(a), self.entity_index(b)) {
            (Some(ia), Some(ib)) => self.edges.contains_key(&edge_key(ia, ib)),
            _ => false,
        }
    }

    pub fn relation(&self, a: &str, b: &str) -> Option<&str> {
        let key = edge_key(self.entity_index(a)?, self.entity_index(b)?);
        self.edges.get(&key)?.as_deref()
    }

    /// Edges as `(id, id, relation)` in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, Option<&str>)> {
        self.edges
            .iter()
            .map(|(&(a, b), rel)| (self.entities[a].id.as_str(), self.entities[b].id.as_str(), rel.as_deref()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KgFile {
    entities: Vec<EntityRecord>,
    edges: Vec<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    id: String,
    surface: Vec<String>,
}

pub fn parse_kg(json: &str, origin: &Path) -> Result<KnowledgeGraph> {
    let file: KgFile = serde_json::from_str(json).map_err(|e| Error::json(origin, e))?;
    let entities = file
        .entities
        .into_iter()
        .map(|r| Entity { id: r.id, surface: r.surface.iter().map(|s| crate::corpus::preprocess(s)).collect() })
        .collect();
    let mut edges = Vec::with_capacity(file.edges.len());
    for e in file.edges {
        match <[String; 2]>::try_from(e) {
            Ok([a, b]) => edges.push((a, b, None)),
            Err(e) => match <[String; 3]>::try_from(e) {
                Ok([a, b, rel]) => edges.push((a, b, Some(rel))),
                Err(e) => {
                    return Err(Error::Validation(format!("edge {e:?} must have two ids and an optional relation")))
                }
            },
        }
    }
    KnowledgeGraph::new(entities, edges)
}

pub fn load_kg(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kg(&text, path)
}

pub fn kg_to_json(kg: &KnowledgeGraph) -> String {
    let file = KgFile {
        entities: kg
            .entities
            .iter()
            .map(|e| EntityRecord { id: e.id.clone(), surface: e.surface.iter().map(|s| s.join(" ")).collect() })
            .collect(),
        edges: kg
            .edges()
            .map(|(a, b, rel)| {
                let mut v = vec![a.to_string(), b.to_string()];
                v.extend(rel.map(str::to_string));
                v
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("knowledge graph serialises")
}

pub fn save_kg(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, kg_to_json(kg) + "\n").map_err(|e| Error::io(path, e))
}

/// Greedy left-to-right longest match over spans of up to [`MAX_SPAN`]
/// tokens. Returns entity ids in order of first mention, without duplicates.
pub fn link_entities(tokens: &[String], kg: &KnowledgeGraph) -> Vec<String> {
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let mut found: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < lowered.len() {
        let longest = (1..=MAX_SPAN.min(lowered.len() - i))
            .rev()
            .find_map(|n| kg.surfaces.get(&lowered[i..i + n]).map(|&e| (n, e)));
        match longest {
            Some((n, e)) => {
                if !found.contains(&e) {
                    found.push(e);
                }
                i += n;
            }
            None => i += 1,
        }
    }
    found.into_iter().map(|e| kg.entities[e].id.clone()).collect()
}

/// Linked entities of one document plus their 0/1 adjacency with self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocGraph {
    pub entities: Vec<String>,
    pub adjacency: Vec<Vec<u8>>,
}

impl DocGraph {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// `N(i)`: every `j` with `A_ij = 1`, including `i` itself.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.adjacency[i].iter().enumerate().filter(|(_, &a)| a == 1).map(|(j, _)| j).collect()
    }
}

pub fn build_doc_graph(entity_ids: &[String], kg: &KnowledgeGraph) -> Result<DocGraph> {
    if let Some(bad) = entity_ids.iter().find(|id| !kg.contains(id)) {
        return Err(Error::Validation(format!("unknown entity id {bad:?}")));
    }
    let n = entity_ids.len();
    let adjacency = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| u8::from(i == j || kg.related(&entity_ids[i], &entity_ids[j])))
                .collect()
        })
        .collect();
    Ok(DocGraph { entities: entity_ids.to_vec(), adjacency })
}
