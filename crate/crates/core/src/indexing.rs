//! Index construction: batched extraction (or sentence splitting),
//! embedding, and graph insertion.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::extraction::{
    build_extraction_request, parse_extraction_output, ExtractedProposition, ExtractionError, ExtractionResult,
    PassageExtraction, PassageIssue,
};
use crate::graph::{BuildInfo, GraphError, GraphIndex, InsertSummary, UnitKind, DEFAULT_TAU};
use crate::llm::{CompletionRequest, EmbedPurpose, EmbeddingRequest, Gateway, LlmError, Scope, Stage};
use crate::retrieval::DEFAULT_LAMBDA;
use crate::text::split_sentences;

pub const DEFAULT_BATCH_SIZE: usize = 10;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub batch_size: usize,
    pub unit_kind: UnitKind,
    /// Also embed whole passages (needed for dense passage search).
    pub embed_passages: bool,
    pub tau: f64,
    pub lambda: f64,
    pub chat_model: String,
    pub embedding_model: String,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            unit_kind: UnitKind::Proposition,
            embed_passages: true,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            chat_model: "unspecified".into(),
            embedding_model: "unspecified".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub summary: InsertSummary,
    pub extraction_calls: usize,
    /// Passages re-queued as singleton batches.
    pub retried: Vec<String>,
    /// Passages abandoned after the retry.
    pub failed: Vec<PassageIssue>,
    pub flagged: Vec<PassageIssue>,
    pub indexing_tokens: u64,
}

fn extract_batch(gateway: &Gateway, batch: &[Passage], system: &str, user: &str) -> Result<ExtractionResult, LlmError> {
    let resp = gateway.complete(CompletionRequest::new(Stage::Extraction, Scope::Indexing, system, user))?;
    Ok(parse_extraction_output(&resp.text, batch).unwrap_or_else(|e| ExtractionResult {
        failed: batch
            .iter()
            .map(|p| PassageIssue { passage_id: p.passage_id.clone(), reason: e.to_string() })
            .collect(),
        ..Default::default()
    }))
}

fn llm_extract(
    passages: &[Passage],
    gateway: &Gateway,
    batch_size: usize,
    report: &mut BuildReport,
) -> Result<ExtractionResult, IndexError> {
    let mut all = ExtractionResult::default();
    for req in build_extraction_request(passages, batch_size)? {
        report.extraction_calls += 1;
        all.absorb(extract_batch(gateway, &req.passages, &req.system, &req.user)?);
    }
    let failed = std::mem::take(&mut all.failed);
    for issue in failed {
        let Some(p) = passages.iter().find(|p| p.passage_id == issue.passage_id) else { continue };
        report.retried.push(p.passage_id.clone());
        let req = build_extraction_request(std::slice::from_ref(p), 1)?.remove(0);
        report.extraction_calls += 1;
        let retry = extract_batch(gateway, &req.passages, &req.system, &req.user)?;
        all.flagged.retain(|f| f.passage_id != p.passage_id);
        all.absorb(retry);
    }
    Ok(all)
}

fn sentence_units(passages: &[Passage]) -> ExtractionResult {
    ExtractionResult {
        passages: passages
            .iter()
            .map(|p| PassageExtraction {
                passage_id: p.passage_id.clone(),
                propositions: split_sentences(&p.text)
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| ExtractedProposition { local_index: i, text, passage_id: p.passage_id.clone() })
                    .collect(),
                entities: Vec::new(),
            })
            .filter(|p| !p.propositions.is_empty())
            .collect(),
        ..Default::default()
    }
}

/// Build a graph index over `passages`.
pub fn build_index(
    passages: &[Passage],
    gateway: &Gateway,
    config: &IndexConfig,
) -> Result<(GraphIndex, BuildReport), IndexError> {
    let info = BuildInfo {
        chat_model: config.chat_model.clone(),
        embedding_model: config.embedding_model.clone(),
        lambda: config.lambda,
        tau: config.tau,
        unit_kind: config.unit_kind,
    };
    let mut index = GraphIndex::new(passages, gateway.embedding_dimension(), info)?;
    let mut report = BuildReport::default();
    let before = gateway.ledger().indexing_total();

    let mut extraction = match config.unit_kind {
        UnitKind::Proposition => llm_extract(passages, gateway, config.batch_size, &mut report)?,
        UnitKind::Sentence => sentence_units(passages),
    };
    let order: BTreeMap<&str, usize> = passages.iter().enumerate().map(|(i, p)| (p.passage_id.as_str(), i)).collect();
    extraction.passages.sort_by_key(|p| order.get(p.passage_id.as_str()).copied().unwrap_or(usize::MAX));

    let texts: Vec<String> =
        extraction.passages.iter().flat_map(|p| p.propositions.iter().map(|x| x.text.clone())).collect();
    let embeddings = if texts.is_empty() {
        Vec::new()
    } else {
        gateway.embed(&EmbeddingRequest { texts, purpose: EmbedPurpose::Proposition })?
    };
    let labels: Vec<String> = extraction
        .passages
        .iter()
        .flat_map(|p| p.entities.iter().map(|e| e.entity_type.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let type_embeddings: BTreeMap<String, _> = if labels.is_empty() {
        BTreeMap::new()
    } else {
        let vs = gateway.embed(&EmbeddingRequest { texts: labels.clone(), purpose: EmbedPurpose::TypeLabel })?;
        labels.into_iter().zip(vs).collect()
    };
    report.summary = index.insert_extraction(&extraction, &embeddings, &type_embeddings)?;

    if config.embed_passages && !passages.is_empty() {
        let texts: Vec<String> = passages.iter().map(passage_embedding_text).collect();
        let vs = gateway.embed(&EmbeddingRequest { texts, purpose: EmbedPurpose::Passage })?;
        for (p, v) in passages.iter().zip(vs) {
            index.set_passage_embedding(&p.passage_id, v)?;
        }
    }
    report.failed = extraction.failed;
    report.flagged = extraction.flagged;
    report.indexing_tokens = gateway.ledger().indexing_total() - before;
    Ok((index, report))
}

/// Text embedded for a whole passage.
pub fn passage_embedding_text(p: &Passage) -> String {
    if p.title.trim().is_empty() {
        p.text.clone()
    } else {
        format!("{}\n{}", p.title, p.text)
    }
}
