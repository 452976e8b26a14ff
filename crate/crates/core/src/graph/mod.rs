//! The three-layer entity / proposition / passage graph.

mod bm25;
mod persist;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Passage;
use crate::extraction::ExtractionResult;
use crate::vector::Embedding;

pub use bm25::{keyword_terms, Bm25Stats, B, K1};
pub use persist::{load, persist, Manifest, SCHEMA_VERSION};

pub type PropId = u32;
pub type EntityId = u32;

/// Default type-similarity threshold for entity merging.
pub const DEFAULT_TAU: f64 = 0.7;
/// Slack on the `tau` comparison; stored vectors are `f32`.
pub const TAU_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("embedding dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown passage id {0:?}")]
    UnknownPassage(String),
    #[error("passage {0:?} is already in the index")]
    DuplicatePassage(String),
    #[error("unknown proposition id {0}")]
    UnknownProposition(PropId),
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
    #[error("{expected} proposition embeddings expected, {found} given")]
    EmbeddingCount { expected: usize, found: usize },
    #[error("no type embedding supplied for type label {0:?}")]
    MissingTypeEmbedding(String),
    #[error("entity {name:?} references proposition {index} of passage {passage_id:?}")]
    BadPropositionIndex { name: String, index: usize, passage_id: String },
    #[error("missing manifest in {0}")]
    MissingManifest(String),
    #[error("index schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{0} does not match the manifest checksum")]
    Tampered(String),
    #[error("{file} line {line}: {message}")]
    Corrupt { file: String, line: usize, message: String },
    #[error("inconsistent index: {0}")]
    Inconsistent(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Retrieval unit granularity of an index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    #[default]
    Proposition,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionNode {
    pub prop_id: PropId,
    pub text: String,
    pub embedding: Embedding,
    pub passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: EntityId,
    pub canonical_name: String,
    /// Distinct type labels merged into this node, first-seen first.
    pub type_labels: Vec<String>,
    /// Embedding of `type_labels[0]`.
    pub type_embedding: Embedding,
    /// Embeddings of `type_labels[1..]`.
    pub variant_embeddings: Vec<Embedding>,
    pub prop_ids: BTreeSet<PropId>,
}

impl EntityNode {
    pub fn degree(&self) -> usize {
        self.prop_ids.len()
    }

    fn type_vectors(&self) -> impl Iterator<Item = &Embedding> {
        std::iter::once(&self.type_embedding).chain(&self.variant_embeddings)
    }
}

/// Build provenance recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub chat_model: String,
    pub embedding_model: String,
    pub lambda: f64,
    pub tau: f64,
    pub unit_kind: UnitKind,
}

impl Default for BuildInfo {
    fn default() -> Self {
        Self {
            chat_model: "unspecified".into(),
            embedding_model: "unspecified".into(),
            lambda: crate::retrieval::DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            unit_kind: UnitKind::Proposition,
        }
    }
}

/// Counts returned by [`GraphIndex::insert_extraction`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertSummary {
    pub propositions: usize,
    pub new_entities: usize,
    pub merged_entities: usize,
}

impl std::ops::AddAssign for InsertSummary {
    fn add_assign(&mut self, o: Self) {
        self.propositions += o.propositions;
        self.new_entities += o.new_entities;
        self.merged_entities += o.merged_entities;
    }
}

/// Outcome of [`GraphIndex::resolve_entity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub entity_id: EntityId,
    pub merged: bool,
}

fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

/// SHA-256 over passage ids, titles and texts in corpus order.
pub fn corpus_hash(passages: &[Passage]) -> String {
    let mut h = Sha256::new();
    for p in passages {
        for field in [&p.passage_id, &p.title, &p.text] {
            h.update(field.as_bytes());
            h.update([0u8]);
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphIndex {
    passage_order: Vec<String>,
    passages: BTreeMap<String, Passage>,
    passage_embeddings: BTreeMap<String, Embedding>,
    extracted: BTreeSet<String>,
    propositions: Vec<PropositionNode>,
    entities: Vec<EntityNode>,
    bm25: Bm25Stats,
    dimension: usize,
    info: BuildInfo,
    corpus_sha256: String,
    // derived
    entities_of_prop: Vec<BTreeSet<EntityId>>,
    names: BTreeMap<String, Vec<EntityId>>,
}

impl GraphIndex {
    pub fn new(passages: &[Passage], dimension: usize, info: BuildInfo) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for p in passages {
            if map.insert(p.passage_id.clone(), p.clone()).is_some() {
                return Err(GraphError::DuplicatePassage(p.passage_id.clone()));
            }
        }
        Ok(Self {
            passage_order: passages.iter().map(|p| p.passage_id.clone()).collect(),
            passages: map,
            passage_embeddings: BTreeMap::new(),
            extracted: BTreeSet::new(),
            propositions: Vec::new(),
            entities: Vec::new(),
            bm25: Bm25Stats::default(),
            dimension,
            info,
            corpus_sha256: corpus_hash(passages),
            entities_of_prop: Vec::new(),
            names: BTreeMap::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn info(&self) -> &BuildInfo {
        &self.info
    }

    pub fn unit_kind(&self) -> UnitKind {
        self.info.unit_kind
    }

    pub fn corpus_sha256(&self) -> &str {
        &self.corpus_sha256
    }

    pub fn bm25_stats(&self) -> &Bm25Stats {
        &self.bm25
    }

    /// Passages in corpus order.
    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.passage_order.iter().map(|id| &self.passages[id])
    }

    pub fn passage(&self, passage_id: &str) -> Option<&Passage> {
        self.passages.get(passage_id)
    }

    pub fn passage_count(&self) -> usize {
        self.passage_order.len()
    }

    pub fn passage_embedding(&self, passage_id: &str) -> Option<&Embedding> {
        self.passage_embeddings.get(passage_id)
    }

    pub fn has_passage_embeddings(&self) -> bool {
        !self.passage_embeddings.is_empty()
    }

    pub fn propositions(&self) -> &[PropositionNode] {
        &self.propositions
    }

    pub fn proposition(&self, id: PropId) -> Result<&PropositionNode, GraphError> {
        self.propositions.get(id as usize).ok_or(GraphError::UnknownProposition(id))
    }

    pub fn entities(&self) -> &[EntityNode] {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> Result<&EntityNode, GraphError> {
        self.entities.get(id as usize).ok_or(GraphError::UnknownEntity(id))
    }

    /// Entity ids whose canonical name matches `name` case-insensitively.
    pub fn find_entities(&self, name: &str) -> &[EntityId] {
        self.names.get(&name_key(name)).map_or(&[], Vec::as_slice)
    }

    pub fn props_of_entity(&self, id: EntityId) -> Result<&BTreeSet<PropId>, GraphError> {
        Ok(&self.entity(id)?.prop_ids)
    }

    pub fn passage_of_prop(&self, id: PropId) -> Result<&str, GraphError> {
        Ok(&self.proposition(id)?.passage_id)
    }

    pub fn degree(&self, id: EntityId) -> Result<usize, GraphError> {
        Ok(self.entity(id)?.degree())
    }

    pub fn entities_of_prop(&self, id: PropId) -> Result<&BTreeSet<EntityId>, GraphError> {
        self.entities_of_prop.get(id as usize).ok_or(GraphError::UnknownProposition(id))
    }

    /// Propositions belonging to `passage_id`, ascending.
    pub fn props_of_passage(&self, passage_id: &str) -> Vec<PropId> {
        self.propositions.iter().filter(|p| p.passage_id == passage_id).map(|p| p.prop_id).collect()
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), GraphError> {
        if e.dimension() != self.dimension {
            return Err(GraphError::DimensionMismatch { expected: self.dimension, found: e.dimension() });
        }
        Ok(())
    }

    pub fn set_passage_embedding(&mut self, passage_id: &str, embedding: Embedding) -> Result<(), GraphError> {
        self.check_dim(&embedding)?;
        if !self.passages.contains_key(passage_id) {
            return Err(GraphError::UnknownPassage(passage_id.to_string()));
        }
        self.passage_embeddings.insert(passage_id.to_string(), embedding);
        Ok(())
    }

    /// Resolve a mention to an existing node or create a new one.
    ///
    /// Same-name nodes are compared through every type label they hold; the
    /// mention joins the node with the best-matching label when that cosine is
    /// at least `tau`. A freshly created node has no propositions until the
    /// caller links some.
    pub fn resolve_entity(
        &mut self,
        name: &str,
        type_label: &str,
        type_embedding: &Embedding,
        tau: f64,
    ) -> Result<Resolution, GraphError> {
        self.check_dim(type_embedding)?;
        let key = name_key(name);
        let mut best: Option<(f64, EntityId)> = None;
        for &id in self.names.get(&key).into_iter().flatten() {
            for v in self.entities[id as usize].type_vectors() {
                let c = v.dot(type_embedding);
                if best.is_none_or(|(b, _)| c > b) {
                    best = Some((c, id));
                }
            }
        }
        if let Some((c, id)) = best {
            if c >= tau - TAU_EPSILON {
                let node = &mut self.entities[id as usize];
                if !node.type_labels.iter().any(|l| l == type_label) {
                    node.type_labels.push(type_label.to_string());
                    node.variant_embeddings.push(type_embedding.clone());
                }
                return Ok(Resolution { entity_id: id, merged: true });
            }
        }
        let id = self.entities.len() as EntityId;
        self.entities.push(EntityNode {
            entity_id: id,
            canonical_name: name.trim().to_string(),
            type_labels: vec![type_label.to_string()],
            type_embedding: type_embedding.clone(),
            variant_embeddings: Vec::new(),
            prop_ids: BTreeSet::new(),
        });
        self.names.entry(key).or_default().push(id);
        Ok(Resolution { entity_id: id, merged: false })
    }

    /// Insert parsed extraction output.
    ///
    /// `embeddings` align with the propositions of `result.passages` in order;
    /// `type_embeddings` must cover every entity type label. Validation runs
    /// before any mutation, so a rejected insert leaves the index unchanged.
    pub fn insert_extraction(
        &mut self,
        result: &ExtractionResult,
        embeddings: &[Embedding],
        type_embeddings: &BTreeMap<String, Embedding>,
    ) -> Result<InsertSummary, GraphError> {
        let total: usize = result.passages.iter().map(|p| p.propositions.len()).sum();
        if embeddings.len() != total {
            return Err(GraphError::EmbeddingCount { expected: total, found: embeddings.len() });
        }
        let mut seen = BTreeSet::new();
        for p in &result.passages {
            if !self.passages.contains_key(&p.passage_id) {
                return Err(GraphError::UnknownPassage(p.passage_id.clone()));
            }
            if self.extracted.contains(&p.passage_id) || !seen.insert(&p.passage_id) {
                return Err(GraphError::DuplicatePassage(p.passage_id.clone()));
            }
            for e in &p.entities {
                if let Some(&index) = e.proposition_indices.iter().find(|&&i| i >= p.propositions.len()) {
                    return Err(GraphError::BadPropositionIndex {
                        name: e.canonical_name.clone(),
                        index,
                        passage_id: p.passage_id.clone(),
                    });
                }
                let t = type_embeddings
                    .get(&e.entity_type)
                    .ok_or_else(|| GraphError::MissingTypeEmbedding(e.entity_type.clone()))?;
                self.check_dim(t)?;
            }
        }
        for e in embeddings {
            self.check_dim(e)?;
        }

        let mut summary = InsertSummary::default();
        let mut vectors = embeddings.iter();
        for p in &result.passages {
            let base = self.propositions.len() as PropId;
            for prop in &p.propositions {
                let id = self.propositions.len() as PropId;
                self.bm25.add_document(&prop.text);
                self.propositions.push(PropositionNode {
                    prop_id: id,
                    text: prop.text.clone(),
                    embedding: vectors.next().expect("count checked").clone(),
                    passage_id: p.passage_id.clone(),
                });
                self.entities_of_prop.push(BTreeSet::new());
            }
            summary.propositions += p.propositions.len();
            for e in &p.entities {
                let r = self.resolve_entity(
                    &e.canonical_name,
                    &e.entity_type,
                    &type_embeddings[&e.entity_type],
                    self.info.tau,
                )?;
                if r.merged {
                    summary.merged_entities += 1;
                } else {
                    summary.new_entities += 1;
                }
                for &i in &e.proposition_indices {
                    let pid = base + i as PropId;
                    self.entities[r.entity_id as usize].prop_ids.insert(pid);
                    self.entities_of_prop[pid as usize].insert(r.entity_id);
                }
            }
            self.extracted.insert(p.passage_id.clone());
        }
        Ok(summary)
    }

    /// Warnings about using this index with an encoder of `dimension`.
    pub fn compatibility_warnings(&self, dimension: usize) -> Vec<String> {
        let mut w = Vec::new();
        if dimension != self.dimension {
            w.push(format!(
                "index embedding_dimension is {} but the configured encoder produces {}",
                self.dimension, dimension
            ));
        }
        w
    }

    /// Check structural invariants: one parent passage per proposition,
    /// non-empty entity links, unit embeddings and consistent BM25 statistics.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Inconsistent(m));
        for (i, p) in self.propositions.iter().enumerate() {
            if p.prop_id as usize != i {
                return bad(format!("proposition at position {i} has id {}", p.prop_id));
            }
            if !self.passages.contains_key(&p.passage_id) {
                return bad(format!("proposition {i} links to unknown passage {:?}", p.passage_id));
            }
            if p.embedding.dimension() != self.dimension || !p.embedding.is_unit() {
                return bad(format!("proposition {i} embedding is not a unit vector of dimension {}", self.dimension));
            }
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.entity_id as usize != i {
                return bad(format!("entity at position {i} has id {}", e.entity_id));
            }
            if e.prop_ids.is_empty() {
                return bad(format!("entity {i} ({}) has no propositions", e.canonical_name));
            }
            if let Some(p) = e.prop_ids.iter().find(|&&p| p as usize >= self.propositions.len()) {
                return bad(format!("entity {i} links to unknown proposition {p}"));
            }
            if e.type_labels.len() != e.variant_embeddings.len() + 1 {
                return bad(format!("entity {i} type labels and embeddings disagree"));
            }
        }
        for id in self.passage_embeddings.keys() {
            if !self.passages.contains_key(id) {
                return bad(format!("passage embedding for unknown passage {id:?}"));
            }
        }
        let recomputed = Bm25Stats::from_texts(self.propositions.iter().map(|p| p.text.as_str()));
        if recomputed != self.bm25 {
            return bad("bm25 statistics do not match proposition texts".into());
        }
        Ok(())
    }

    fn rebuild_derived(&mut self) {
        self.entities_of_prop = vec![BTreeSet::new(); self.propositions.len()];
        self.names.clear();
        for e in &self.entities {
            for &p in &e.prop_ids {
                if let Some(s) = self.entities_of_prop.get_mut(p as usize) {
                    s.insert(e.entity_id);
                }
            }
            self.names.entry(name_key(&e.canonical_name)).or_default().push(e.entity_id);
        }
    }
}
