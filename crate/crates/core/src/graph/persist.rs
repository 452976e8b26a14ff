//! On-disk index layout: `manifest.json`, `passages.jsonl`,
//! `propositions.jsonl`, `entities.jsonl`, `bm25.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex, Bm25Stats, BuildInfo, EntityNode, GraphError, GraphIndex, PropositionNode};
use crate::corpus::Passage;
use crate::vector::Embedding;

pub const SCHEMA_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const PASSAGES: &str = "passages.jsonl";
const PROPOSITIONS: &str = "propositions.jsonl";
const ENTITIES: &str = "entities.jsonl";
const BM25: &str = "bm25.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub embedding_dimension: usize,
    #[serde(flatten)]
    pub info: BuildInfo,
    pub corpus_sha256: String,
    pub passage_count: usize,
    pub proposition_count: usize,
    pub entity_count: usize,
    /// SHA-256 of each data file.
    pub files: BTreeMap<String, String>,
    /// SHA-256 of this manifest serialized with an empty `checksum`.
    pub checksum: String,
}

impl Manifest {
    fn compute_checksum(&self) -> String {
        let mut m = self.clone();
        m.checksum = String::new();
        sha256_hex(&serde_json::to_vec(&m).expect("manifest serializes"))
    }
}

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    passage_id: String,
    title: String,
    text: String,
    extracted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Embedding>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.display().to_string(), source }
}

/// Write `index` to `dir`, creating it if needed.
pub fn persist(index: &GraphIndex, dir: &Path) -> Result<Manifest, GraphError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let passages = jsonl(index.passages().map(|p| PassageRecord {
        passage_id: p.passage_id.clone(),
        title: p.title.clone(),
        text: p.text.clone(),
        extracted: index.extracted.contains(&p.passage_id),
        embedding: index.passage_embeddings.get(&p.passage_id).cloned(),
    }));
    let files: Vec<(&str, Vec<u8>)> = vec![
        (PASSAGES, passages),
        (PROPOSITIONS, jsonl(&index.propositions)),
        (ENTITIES, jsonl(&index.entities)),
        (BM25, serde_json::to_vec(&index.bm25).expect("bm25 serializes")),
    ];
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        embedding_dimension: index.dimension,
        info: index.info.clone(),
        corpus_sha256: index.corpus_sha256.clone(),
        passage_count: index.passage_count(),
        proposition_count: index.propositions.len(),
        entity_count: index.entities.len(),
        files: files.iter().map(|(n, b)| (n.to_string(), sha256_hex(b))).collect(),
        checksum: String::new(),
    };
    manifest.checksum = manifest.compute_checksum();
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>, GraphError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    match manifest.files.get(name) {
        Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
        _ => Err(GraphError::Tampered(name.to_string())),
    }
}

fn parse_jsonl<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Vec<T>, GraphError> {
    let text = std::str::from_utf8(bytes).map_err(|e| GraphError::Corrupt {
        file: name.into(),
        line: 0,
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GraphError::Corrupt {
                file: name.into(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Read just the manifest of a persisted index.
pub fn read_manifest(dir: &Path) -> Result<Manifest, GraphError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(GraphError::MissingManifest(dir.display().to_string()));
    }
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| GraphError::Corrupt {
        file: MANIFEST.into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != SCHEMA_VERSION {
        return Err(GraphError::VersionMismatch { found: version, expected: SCHEMA_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| GraphError::Corrupt {
        file: MANIFEST.into(),
        line: 0,
        message: e.to_string(),
    })?;
    if manifest.checksum != manifest.compute_checksum() {
        return Err(GraphError::Tampered(MANIFEST.into()));
    }
    Ok(manifest)
}

/// Load and verify an index written by [`persist`].
pub fn load(dir: &Path) -> Result<GraphIndex, GraphError> {
    let manifest = read_manifest(dir)?;
    let passages: Vec<PassageRecord> = parse_jsonl(PASSAGES, &read_checked(dir, PASSAGES, &manifest)?)?;
    let propositions: Vec<PropositionNode> = parse_jsonl(PROPOSITIONS, &read_checked(dir, PROPOSITIONS, &manifest)?)?;
    let entities: Vec<EntityNode> = parse_jsonl(ENTITIES, &read_checked(dir, ENTITIES, &manifest)?)?;
    let bm25: Bm25Stats = serde_json::from_slice(&read_checked(dir, BM25, &manifest)?)
        .map_err(|e| GraphError::Corrupt { file: BM25.into(), line: e.line(), message: e.to_string() })?;

    let plain: Vec<Passage> = passages
        .iter()
        .map(|p| Passage { passage_id: p.passage_id.clone(), title: p.title.clone(), text: p.text.clone() })
        .collect();
    let mut index = GraphIndex::new(&plain, manifest.embedding_dimension, manifest.info.clone())?;
    if index.corpus_sha256 != manifest.corpus_sha256 {
        return Err(GraphError::Inconsistent("corpus hash does not match passages".into()));
    }
    for p in passages {
        if p.extracted {
            index.extracted.insert(p.passage_id.clone());
        }
        if let Some(e) = p.embedding {
            index.set_passage_embedding(&p.passage_id, e)?;
        }
    }
    index.propositions = propositions;
    index.entities = entities;
    index.bm25 = bm25;
    index.rebuild_derived();
    if (index.passage_count(), index.propositions.len(), index.entities.len())
        != (manifest.passage_count, manifest.proposition_count, manifest.entity_count)
    {
        return Err(GraphError::Inconsistent("record counts differ from the manifest".into()));
    }
    index.validate()?;
    Ok(index)
}
