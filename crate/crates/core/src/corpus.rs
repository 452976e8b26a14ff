//! Corpus and question-set loading.
//!
//! Both the retrieval-split and the extended-context (LongBench) settings are
//! read from newline-delimited JSON. Retrieval corpora carry one passage per
//! line; LongBench corpora carry one long context per question which is split
//! into its constituent passages on a configurable delimiter.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("empty corpus")]
    Empty,
    #[error("duplicate passage_id {0:?}")]
    DuplicatePassage(String),
    #[error("question {0:?} has no gold answer")]
    NoGoldAnswer(String),
    #[error("invalid passage delimiter: {0}")]
    Delimiter(#[from] regex::Error),
}

/// A source document chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    RetrievalSplit,
    Longbench,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusBatch {
    pub passages: Vec<Passage>,
    pub source_format: SourceFormat,
}

impl CorpusBatch {
    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Write the batch as retrieval-split JSONL.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for p in &self.passages {
            let line = serde_json::to_string(p).expect("passage serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// One evaluation question with its gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub gold_passage_ids: Vec<String>,
    pub hop_count: Option<u32>,
    pub gold_sub_questions: Option<Vec<String>>,
}

/// How LongBench contexts are cut into passages.
#[derive(Debug, Clone)]
pub struct LongbenchSplit {
    pub delimiter: String,
    pub first_line_is_title: bool,
}

pub const DEFAULT_LONGBENCH_DELIMITER: &str = r"(?m)^Passage \d+:[ \t]*$";

impl Default for LongbenchSplit {
    fn default() -> Self {
        Self { delimiter: DEFAULT_LONGBENCH_DELIMITER.to_string(), first_line_is_title: true }
    }
}

#[derive(Deserialize)]
struct PassageRecord {
    passage_id: Option<String>,
    #[serde(default)]
    title: String,
    text: Option<String>,
}

#[derive(Deserialize)]
struct ContextRecord {
    #[serde(alias = "_id")]
    question_id: Option<String>,
    context: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct RawQuestion {
    #[serde(alias = "_id", alias = "id")]
    question_id: Option<String>,
    #[serde(alias = "input")]
    question: Option<String>,
    #[serde(default)]
    answers: Option<OneOrMany>,
    #[serde(default)]
    gold_passage_ids: Vec<String>,
    #[serde(default)]
    hops: Option<u32>,
    #[serde(default)]
    sub_questions: Option<Vec<String>>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            out.push((i, line));
        }
    }
    Ok(out)
}

fn parse_record<T: for<'de> Deserialize<'de>>(index: usize, line: &str) -> Result<T, CorpusError> {
    serde_json::from_str(line).map_err(|e| CorpusError::Schema { index, message: e.to_string() })
}

fn missing(index: usize, field: &str) -> CorpusError {
    CorpusError::Schema { index, message: format!("missing required field `{field}`") }
}

/// Load a corpus with the default LongBench splitting rules.
pub fn load_corpus(path: &Path, format: SourceFormat) -> Result<CorpusBatch, CorpusError> {
    load_corpus_with(path, format, &LongbenchSplit::default())
}

pub fn load_corpus_with(path: &Path, format: SourceFormat, split: &LongbenchSplit) -> Result<CorpusBatch, CorpusError> {
    let lines = read_lines(path)?;
    let mut passages = Vec::new();
    match format {
        SourceFormat::RetrievalSplit => {
            for (record_index, (_, line)) in lines.iter().enumerate() {
                let rec: PassageRecord = parse_record(record_index, line)?;
                let passage_id = rec.passage_id.ok_or_else(|| missing(record_index, "passage_id"))?;
                let text = rec.text.ok_or_else(|| missing(record_index, "text"))?;
                if text.trim().is_empty() {
                    return Err(CorpusError::Schema { index: record_index, message: "empty passage text".into() });
                }
                passages.push(Passage { passage_id, title: rec.title, text });
            }
        }
        SourceFormat::Longbench => {
            let delimiter = Regex::new(&split.delimiter)?;
            for (record_index, (_, line)) in lines.iter().enumerate() {
                let rec: ContextRecord = parse_record(record_index, line)?;
                let qid = rec.question_id.ok_or_else(|| missing(record_index, "question_id"))?;
                let context = rec.context.ok_or_else(|| missing(record_index, "context"))?;
                passages.extend(split_context(&qid, &context, &delimiter, split.first_line_is_title));
            }
        }
    }
    if passages.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut seen = HashSet::new();
    for p in &passages {
        if !seen.insert(p.passage_id.as_str()) {
            return Err(CorpusError::DuplicatePassage(p.passage_id.clone()));
        }
    }
    Ok(CorpusBatch { passages, source_format: format })
}

/// Split one LongBench context into passages with ids `<question_id>#<k>`.
pub fn split_context(question_id: &str, context: &str, delimiter: &Regex, first_line_is_title: bool) -> Vec<Passage> {
    delimiter
        .split(context)
        .map(str::trim)
        .filter(|chunk| !chunk.is_empty())
        .enumerate()
        .map(|(k, chunk)| {
            let (title, text) = match chunk.split_once('\n') {
                Some((first, rest)) if first_line_is_title && !rest.trim().is_empty() => {
                    (first.trim().to_string(), rest.trim().to_string())
                }
                _ => (String::new(), chunk.to_string()),
            };
            Passage { passage_id: format!("{question_id}#{k}"), title, text }
        })
        .collect()
}

/// Load a question set. The record schema is shared by both settings; the
/// LongBench field names `_id` and `input` are accepted as aliases.
pub fn load_question_set(path: &Path, _format: SourceFormat) -> Result<Vec<QuestionRecord>, CorpusError> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len());
    for (index, (_, line)) in lines.iter().enumerate() {
        let raw: RawQuestion = parse_record(index, line)?;
        let question_id = raw.question_id.ok_or_else(|| missing(index, "question_id"))?;
        let question = raw.question.filter(|q| !q.trim().is_empty()).ok_or_else(|| missing(index, "question"))?;
        let gold_answers: Vec<String> = match raw.answers {
            Some(OneOrMany::One(a)) => vec![a],
            Some(OneOrMany::Many(v)) => v,
            None => Vec::new(),
        }
        .into_iter()
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
        if gold_answers.is_empty() {
            return Err(CorpusError::NoGoldAnswer(question_id));
        }
        if let Some(h) = raw.hops {
            if h < 2 {
                return Err(CorpusError::Schema {
                    index,
                    message: format!("hop count {h} below 2 for question {question_id:?}"),
                });
            }
        }
        out.push(QuestionRecord {
            question_id,
            question,
            gold_answers,
            gold_passage_ids: raw.gold_passage_ids,
            hop_count: raw.hops,
            gold_sub_questions: raw.sub_questions,
        });
    }
    Ok(out)
}

/// Write a question set in the canonical record layout.
pub fn write_question_set(records: &[QuestionRecord], path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        let mut obj = serde_json::json!({
            "question_id": r.question_id,
            "question": r.question,
            "answers": r.gold_answers,
            "gold_passage_ids": r.gold_passage_ids,
        });
        if let Some(h) = r.hop_count {
            obj["hops"] = h.into();
        }
        if let Some(s) = &r.gold_sub_questions {
            obj["sub_questions"] = serde_json::to_value(s).expect("strings serialize");
        }
        writeln!(out, "{obj}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
