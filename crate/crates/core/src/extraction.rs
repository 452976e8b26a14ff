//! Joint proposition and entity extraction: request building and parsing of
//! the `Passage [N]: / Propositions: / Entities:` output format.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::prompts;

/// Type assigned to entity rows whose type field is blank.
pub const DEFAULT_ENTITY_TYPE: &str = "Entity";

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("no passages to extract")]
    NoPassages,
    #[error("model output contains no parsable passage block")]
    NoPassageBlocks,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedProposition {
    pub local_index: usize,
    pub text: String,
    pub passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub canonical_name: String,
    pub entity_type: String,
    pub proposition_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageExtraction {
    pub passage_id: String,
    pub propositions: Vec<ExtractedProposition>,
    pub entities: Vec<ExtractedEntity>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassageIssue {
    pub passage_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub passages: Vec<PassageExtraction>,
    /// Passages with no usable block; nothing from them is inserted.
    pub failed: Vec<PassageIssue>,
    /// Parsed passages that had rows dropped.
    pub flagged: Vec<PassageIssue>,
}

impl ExtractionResult {
    pub fn failed_passage_ids(&self) -> Vec<&str> {
        self.failed.iter().map(|f| f.passage_id.as_str()).collect()
    }

    pub fn is_flagged(&self, passage_id: &str) -> bool {
        self.flagged.iter().any(|f| f.passage_id == passage_id)
    }

    /// Merge another result, e.g. from a retry batch.
    pub fn absorb(&mut self, other: ExtractionResult) {
        self.passages.extend(other.passages);
        self.failed.extend(other.failed);
        self.flagged.extend(other.flagged);
    }
}

/// One extraction call: system prompt, numbered passages and the ids they cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionRequest {
    pub system: String,
    pub user: String,
    pub passages: Vec<Passage>,
}

pub fn format_passages(passages: &[Passage]) -> String {
    passages
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Passage [{i}]:\nDocument Title: {}\nContent: {}", p.title, p.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Split `passages` into requests of at most `batch_size` passages each.
pub fn build_extraction_request(
    passages: &[Passage],
    batch_size: usize,
) -> Result<Vec<ExtractionRequest>, ExtractionError> {
    if batch_size == 0 {
        return Err(ExtractionError::ZeroBatchSize);
    }
    if passages.is_empty() {
        return Err(ExtractionError::NoPassages);
    }
    Ok(passages
        .chunks(batch_size)
        .map(|chunk| ExtractionRequest {
            system: prompts::JOINT_EXTRACTION.to_string(),
            user: format_passages(chunk),
            passages: chunk.to_vec(),
        })
        .collect())
}

/// Render extractions in the output format the parser accepts; the `i`-th
/// entry is written as `Passage [i]`.
pub fn render_extraction_output(passages: &[PassageExtraction]) -> String {
    let mut out = String::new();
    for (i, p) in passages.iter().enumerate() {
        out.push_str(&format!("Passage [{i}]:\nPropositions:\n"));
        for prop in &p.propositions {
            out.push_str(&format!("[{}] {}\n", prop.local_index, prop.text));
        }
        out.push_str("\nEntities:\n");
        for e in &p.entities {
            let idx: Vec<String> = e.proposition_indices.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{}|{}|{}\n", e.canonical_name, e.entity_type, idx.join(" ")));
        }
        out.push('\n');
    }
    out
}

static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t>#*]*Passage\s*\[(\d+)\]\s*:?[ \t*\r]*$").expect("static regex"));
static PROPOSITION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[-*\s]*\[(\d+)\]\s*(.*)$").expect("static regex"));

fn section_label(line: &str) -> Option<&'static str> {
    let l = line.trim().trim_matches('*').trim().to_ascii_lowercase();
    match l.as_str() {
        "propositions:" | "propositions" => Some("propositions"),
        "entities:" | "entities" => Some("entities"),
        _ => None,
    }
}

enum BlockOutcome {
    Parsed(PassageExtraction, Vec<String>),
    Failed(String),
}

fn parse_block(block: &str, passage_id: &str) -> BlockOutcome {
    let mut section = None;
    let mut props: Vec<(usize, String)> = Vec::new();
    let mut entity_lines: Vec<&str> = Vec::new();
    let mut saw_entities = false;
    for line in block.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(s) = section_label(line) {
            section = Some(s);
            saw_entities |= s == "entities";
            continue;
        }
        match section {
            Some("propositions") => {
                if let Some(c) = PROPOSITION.captures(line.trim()) {
                    let idx: usize = match c[1].parse() {
                        Ok(i) => i,
                        Err(_) => return BlockOutcome::Failed(format!("bad proposition index in {line:?}")),
                    };
                    props.push((idx, c[2].trim().to_string()));
                } else if let Some(last) = props.last_mut() {
                    // wrapped proposition text
                    last.1.push(' ');
                    last.1.push_str(line.trim());
                }
            }
            Some("entities") => entity_lines.push(line.trim()),
            _ => {}
        }
    }
    if props.is_empty() {
        return BlockOutcome::Failed("no propositions".into());
    }
    for (expected, (idx, text)) in props.iter().enumerate() {
        if *idx != expected {
            return BlockOutcome::Failed(format!(
                "proposition indices not contiguous: expected [{expected}], found [{idx}]"
            ));
        }
        if text.is_empty() {
            return BlockOutcome::Failed(format!("proposition [{idx}] is empty"));
        }
    }
    let n = props.len();
    let mut warnings = Vec::new();
    if !saw_entities {
        warnings.push("no entity section".to_string());
    }
    let mut entities = Vec::new();
    for line in entity_lines {
        let line = line.trim_start_matches(['-', '*', ' ']);
        let fields: Vec<&str> = line.splitn(3, '|').map(str::trim).collect();
        if fields.len() < 3 {
            warnings.push(format!("entity row without three fields dropped: {line:?}"));
            continue;
        }
        let name = fields[0].trim_matches(['[', ']']).trim();
        if name.is_empty() {
            warnings.push(format!("entity row with empty name dropped: {line:?}"));
            continue;
        }
        let ty = fields[1].trim_matches(['[', ']']).trim();
        let ty = if ty.is_empty() { DEFAULT_ENTITY_TYPE } else { ty };
        let mut indices = BTreeSet::new();
        let mut bad = None;
        for tok in fields[2].split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let tok = tok.trim_matches(['[', ']']);
            if tok.is_empty() {
                continue;
            }
            match tok.parse::<usize>() {
                Ok(i) if i < n => {
                    indices.insert(i);
                }
                Ok(i) => {
                    bad = Some(format!("index {i} out of range for {n} propositions"));
                    break;
                }
                Err(_) => {
                    bad = Some(format!("non-numeric index {tok:?}"));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            warnings.push(format!("entity {name:?} dropped: {reason}"));
            continue;
        }
        if indices.is_empty() {
            warnings.push(format!("entity {name:?} dropped: no proposition indices"));
            continue;
        }
        entities.push(ExtractedEntity {
            canonical_name: name.to_string(),
            entity_type: ty.to_string(),
            proposition_indices: indices.into_iter().collect(),
        });
    }
    let propositions = props
        .into_iter()
        .map(|(local_index, text)| ExtractedProposition { local_index, text, passage_id: passage_id.to_string() })
        .collect();
    BlockOutcome::Parsed(PassageExtraction { passage_id: passage_id.to_string(), propositions, entities }, warnings)
}

/// Parse one extraction reply for `batch`.
///
/// Per-passage faults land in `failed` or `flagged`; only an output with no
/// passage block at all is an error.
pub fn parse_extraction_output(raw: &str, batch: &[Passage]) -> Result<ExtractionResult, ExtractionError> {
    let headers: Vec<(usize, usize, usize)> = HEADER
        .captures_iter(raw)
        .filter_map(|c| {
            let m = c.get(0)?;
            Some((c[1].parse().ok()?, m.start(), m.end()))
        })
        .collect();
    if headers.is_empty() {
        return Err(ExtractionError::NoPassageBlocks);
    }
    let mut blocks: Vec<Option<&str>> = vec![None; batch.len()];
    let mut result = ExtractionResult::default();
    for (i, &(n, _, body_start)) in headers.iter().enumerate() {
        let body_end = headers.get(i + 1).map_or(raw.len(), |h| h.1);
        let body = &raw[body_start..body_end];
        match blocks.get_mut(n) {
            Some(slot @ None) => *slot = Some(body),
            Some(Some(_)) => result.flagged.push(PassageIssue {
                passage_id: batch[n].passage_id.clone(),
                reason: format!("duplicate block Passage [{n}] ignored"),
            }),
            None => {}
        }
    }
    for (passage, block) in batch.iter().zip(blocks) {
        let Some(block) = block else {
            result.failed.push(PassageIssue { passage_id: passage.passage_id.clone(), reason: "missing block".into() });
            continue;
        };
        match parse_block(block, &passage.passage_id) {
            BlockOutcome::Parsed(p, warnings) => {
                result.flagged.extend(
                    warnings.into_iter().map(|reason| PassageIssue { passage_id: passage.passage_id.clone(), reason }),
                );
                result.passages.push(p);
            }
            BlockOutcome::Failed(reason) => {
                result.failed.push(PassageIssue { passage_id: passage.passage_id.clone(), reason })
            }
        }
    }
    Ok(result)
}
