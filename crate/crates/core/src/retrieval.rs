//! Hybrid proposition scoring, entity aggregation and reciprocal-rank
//! passage voting over a [`GraphIndex`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{keyword_terms, EntityId, GraphError, GraphIndex, PropId, UnitKind};
use crate::llm::{EmbedPurpose, Gateway, LlmError};
use crate::vector::Embedding;

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_M: usize = 50;
pub const DEFAULT_K_ENTITIES: usize = 5;
pub const DEFAULT_D_PASSAGES: usize = 2;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("statement embedding has dimension {found}, index has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dense passage search needs passage embeddings; rebuild the index with them")]
    NoPassageEmbeddings,
    #[error("invalid retrieval config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStatement {
    pub statement: String,
    pub keywords: Vec<String>,
    pub embedding: Embedding,
}

impl SearchStatement {
    pub fn new(statement: impl Into<String>, keywords: Vec<String>, embedding: Embedding) -> Self {
        Self { statement: statement.into(), keywords, embedding }
    }

    /// Embed `statement` through the gateway.
    pub fn embed(gateway: &Gateway, statement: &str, keywords: Vec<String>) -> Result<Self, LlmError> {
        let embedding = gateway.embed_one(statement, EmbedPurpose::Statement)?;
        Ok(Self::new(statement, keywords, embedding))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedProposition {
    pub prop_id: PropId,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub entity_id: EntityId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageScore {
    pub passage_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Rankvote,
    Uniform,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Full,
    DprBypass,
    NoEntitySelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub lambda: f64,
    pub m: usize,
    pub k_entities: usize,
    pub d_passages: usize,
    pub weighting: Weighting,
    pub mode: RetrievalMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            m: DEFAULT_M,
            k_entities: DEFAULT_K_ENTITIES,
            d_passages: DEFAULT_D_PASSAGES,
            weighting: Weighting::Rankvote,
            mode: RetrievalMode::Full,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.m == 0 || self.k_entities == 0 || self.d_passages == 0 {
            return Err(RetrievalError::Config("m, k_entities and d_passages must be at least 1".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(RetrievalError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn check_dim(index: &GraphIndex, e: &Embedding) -> Result<(), RetrievalError> {
    if e.dimension() != index.dimension() {
        return Err(RetrievalError::DimensionMismatch { expected: index.dimension(), found: e.dimension() });
    }
    Ok(())
}

/// Okapi BM25 of `keywords` against one proposition.
pub fn bm25(index: &GraphIndex, keywords: &[String], prop_id: PropId) -> Result<f64, RetrievalError> {
    index.proposition(prop_id)?;
    Ok(index.bm25_stats().score(&keyword_terms(keywords), prop_id as usize))
}

/// `cos + lambda * ln(1 + bm25)`.
pub fn combine_scores(cos: f64, bm25: f64, lambda: f64) -> f64 {
    cos + lambda * (1.0 + bm25).ln()
}

/// [`combine_scores`] for one proposition.
pub fn hybrid_score(
    index: &GraphIndex,
    stmt: &SearchStatement,
    prop_id: PropId,
    lambda: f64,
) -> Result<f64, RetrievalError> {
    check_dim(index, &stmt.embedding)?;
    let p = index.proposition(prop_id)?;
    let lexical = index.bm25_stats().score(&keyword_terms(&stmt.keywords), prop_id as usize);
    Ok(combine_scores(p.embedding.dot(&stmt.embedding), lexical, lambda))
}

fn by_score_then_id<K: Ord>(a: &(f64, K), b: &(f64, K)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

/// Top-`m` non-excluded propositions by hybrid score.
pub fn search_propositions(
    index: &GraphIndex,
    stmt: &SearchStatement,
    lambda: f64,
    m: usize,
    excluded: &BTreeSet<PropId>,
) -> Result<Vec<RankedProposition>, RetrievalError> {
    check_dim(index, &stmt.embedding)?;
    let terms = keyword_terms(&stmt.keywords);
    let stats = index.bm25_stats();
    let mut scored: Vec<(f64, PropId)> = index
        .propositions()
        .iter()
        .filter(|p| !excluded.contains(&p.prop_id))
        .map(|p| {
            let lexical = stats.score(&terms, p.prop_id as usize);
            (combine_scores(p.embedding.dot(&stmt.embedding), lexical, lambda), p.prop_id)
        })
        .collect();
    scored.sort_by(by_score_then_id);
    scored.truncate(m);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, prop_id))| RankedProposition { prop_id, score, rank: i + 1 })
        .collect())
}

/// Degree-damped entity scores: sum of linked retrieved scores over
/// `sqrt(1 + degree)`, top `k`, excluding `excluded`.
pub fn aggregate_entities(
    index: &GraphIndex,
    ranked: &[RankedProposition],
    k: usize,
    excluded: &BTreeSet<EntityId>,
) -> Result<Vec<EntityScore>, RetrievalError> {
    let mut sums: BTreeMap<EntityId, f64> = BTreeMap::new();
    for r in ranked {
        for &e in index.entities_of_prop(r.prop_id)? {
            if !excluded.contains(&e) {
                *sums.entry(e).or_insert(0.0) += r.score;
            }
        }
    }
    let mut scored: Vec<(f64, EntityId)> = sums
        .into_iter()
        .map(|(e, s)| Ok((s / (1.0 + index.degree(e)? as f64).sqrt(), e)))
        .collect::<Result<_, RetrievalError>>()?;
    scored.sort_by(by_score_then_id);
    scored.truncate(k);
    Ok(scored.into_iter().map(|(score, entity_id)| EntityScore { entity_id, score }).collect())
}

/// The proposition pool reachable from `selected`, minus `excluded`.
pub fn entity_pool(
    index: &GraphIndex,
    selected: &BTreeSet<EntityId>,
    excluded: &BTreeSet<PropId>,
) -> Result<BTreeSet<PropId>, RetrievalError> {
    let mut pool = BTreeSet::new();
    for &e in selected {
        pool.extend(index.props_of_entity(e)?.iter().filter(|p| !excluded.contains(p)));
    }
    Ok(pool)
}

/// Rank `pool` by cosine (1-based) and vote passages, returning the top `d`
/// and the ranked pool.
pub fn vote_passages(
    index: &GraphIndex,
    stmt: &SearchStatement,
    pool: &BTreeSet<PropId>,
    d: usize,
    weighting: Weighting,
) -> Result<(Vec<PassageScore>, Vec<RankedProposition>), RetrievalError> {
    check_dim(index, &stmt.embedding)?;
    let mut ranked: Vec<(f64, PropId)> = pool
        .iter()
        .map(|&p| Ok((index.proposition(p)?.embedding.dot(&stmt.embedding), p)))
        .collect::<Result<_, RetrievalError>>()?;
    ranked.sort_by(by_score_then_id);
    let ranked: Vec<RankedProposition> = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (score, prop_id))| RankedProposition { prop_id, score, rank: i + 1 })
        .collect();
    let mut votes: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &ranked {
        let v = match weighting {
            Weighting::Rankvote => 1.0 / (1.0 + r.rank as f64),
            Weighting::Uniform => 1.0,
        };
        *votes.entry(index.passage_of_prop(r.prop_id)?).or_insert(0.0) += v;
    }
    let mut scored: Vec<(f64, &str)> = votes.into_iter().map(|(p, s)| (s, p)).collect();
    scored.sort_by(by_score_then_id);
    scored.truncate(d);
    let passages = scored.into_iter().map(|(score, p)| PassageScore { passage_id: p.to_string(), score }).collect();
    Ok((passages, ranked))
}

/// Passage ranking for a set of selected entities.
pub fn rank_passages(
    index: &GraphIndex,
    stmt: &SearchStatement,
    selected: &BTreeSet<EntityId>,
    d: usize,
    weighting: Weighting,
    excluded_props: &BTreeSet<PropId>,
) -> Result<Vec<PassageScore>, RetrievalError> {
    let pool = entity_pool(index, selected, excluded_props)?;
    Ok(vote_passages(index, stmt, &pool, d, weighting)?.0)
}

/// Cosine over whole-passage embeddings, skipping the graph.
pub fn dense_passage_search(
    index: &GraphIndex,
    stmt: &SearchStatement,
    d: usize,
    excluded: &BTreeSet<String>,
) -> Result<Vec<PassageScore>, RetrievalError> {
    check_dim(index, &stmt.embedding)?;
    if !index.has_passage_embeddings() {
        return Err(RetrievalError::NoPassageEmbeddings);
    }
    let mut scored: Vec<(f64, &str)> = index
        .passages()
        .filter(|p| !excluded.contains(&p.passage_id))
        .filter_map(|p| index.passage_embedding(&p.passage_id).map(|e| (e.dot(&stmt.embedding), p.passage_id.as_str())))
        .collect();
    scored.sort_by(by_score_then_id);
    scored.truncate(d);
    Ok(scored.into_iter().map(|(score, p)| PassageScore { passage_id: p.to_string(), score }).collect())
}

/// One non-agentic retrieval for a statement: hybrid search, entity
/// aggregation, and voting over all top entities (or over the searched units
/// themselves on sentence indexes).
pub fn retrieve_for_statement(
    index: &GraphIndex,
    stmt: &SearchStatement,
    config: &RetrievalConfig,
    k: usize,
) -> Result<Vec<PassageScore>, RetrievalError> {
    config.validate()?;
    if config.mode == RetrievalMode::DprBypass {
        return dense_passage_search(index, stmt, k, &BTreeSet::new());
    }
    let ranked = search_propositions(index, stmt, config.lambda, config.m, &BTreeSet::new())?;
    let pool: BTreeSet<PropId> = match index.unit_kind() {
        UnitKind::Sentence => ranked.iter().map(|r| r.prop_id).collect(),
        UnitKind::Proposition => {
            let entities = aggregate_entities(index, &ranked, config.k_entities, &BTreeSet::new())?;
            let selected = entities.iter().map(|e| e.entity_id).collect();
            entity_pool(index, &selected, &BTreeSet::new())?
        }
    };
    Ok(vote_passages(index, stmt, &pool, k, config.weighting)?.0)
}

/// Embed the raw question (no keywords) and retrieve `k` passages without any
/// LLM call.
pub fn single_pass_retrieve(
    index: &GraphIndex,
    gateway: &Gateway,
    question: &str,
    k: usize,
    config: &RetrievalConfig,
) -> Result<Vec<String>, RetrievalError> {
    let stmt = SearchStatement::embed(gateway, question, Vec::new())?;
    Ok(retrieve_for_statement(index, &stmt, config, k)?.into_iter().map(|p| p.passage_id).collect())
}

/// Union of single-pass retrievals for each gold sub-question, first-seen order.
pub fn simulated_agentic_retrieve(
    index: &GraphIndex,
    gateway: &Gateway,
    sub_questions: &[String],
    k: usize,
    config: &RetrievalConfig,
) -> Result<Vec<String>, RetrievalError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for q in sub_questions {
        for p in single_pass_retrieve(index, gateway, q, k, config)? {
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
    }
    Ok(out)
}
