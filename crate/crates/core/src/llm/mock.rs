//! Deterministic offline backends.
//!
//! [`ScriptedChat`] replays a fixture queue, [`FnChat`] wraps a closure and
//! [`HeuristicChat`] answers every pipeline prompt with simple rules so the
//! whole system runs without a model. [`MockEmbedder`] derives vectors from
//! a seeded hash, optionally overridden by an injected table.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatCall, ChatReply, EmbedPurpose, EmbeddingBackend, Stage, Usage};
use crate::text::{split_sentences, tokenize};

/// One scripted reply. A `stage`, when given, must match the request.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub stage: Option<Stage>,
    pub text: String,
    #[serde(default)]
    pub input_tokens: Option<u64>,
    #[serde(default)]
    pub output_tokens: Option<u64>,
}

impl ScriptedReply {
    pub fn new(stage: Stage, text: impl Into<String>) -> Self {
        Self { stage: Some(stage), text: text.into(), input_tokens: None, output_tokens: None }
    }
}

impl From<String> for ScriptedReply {
    fn from(text: String) -> Self {
        Self { stage: None, text, input_tokens: None, output_tokens: None }
    }
}

impl From<&str> for ScriptedReply {
    fn from(text: &str) -> Self {
        text.to_string().into()
    }
}

/// Replays replies in FIFO order; running dry is a fatal backend error.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    queue: Mutex<VecDeque<ScriptedReply>>,
}

impl ScriptedChat {
    pub fn new<I, R>(replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<ScriptedReply>,
    {
        Self { queue: Mutex::new(replies.into_iter().map(Into::into).collect()) }
    }

    /// Load a JSON array of replies: either bare strings or
    /// `{"stage", "text", "input_tokens", "output_tokens"}` objects.
    pub fn from_json_file(path: &Path) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Item {
            Bare(String),
            Full(ScriptedReply),
        }
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let items: Vec<Item> = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::new(items.into_iter().map(|i| match i {
            Item::Bare(s) => ScriptedReply::from(s),
            Item::Full(r) => r,
        })))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script poisoned").len()
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
        let mut q = self.queue.lock().expect("script poisoned");
        let next =
            q.pop_front().ok_or_else(|| BackendError::Fatal(format!("script exhausted at {} call", call.stage)))?;
        if let Some(expected) = next.stage {
            if expected != call.stage {
                return Err(BackendError::Fatal(format!("script expected a {expected} call, got {}", call.stage)));
            }
        }
        let usage = match (next.input_tokens, next.output_tokens) {
            (Some(i), Some(o)) => Some(Usage { input_tokens: i, output_tokens: o }),
            _ => None,
        };
        Ok(ChatReply { text: next.text, usage })
    }
}

type ChatFn = dyn Fn(&ChatCall<'_>) -> Result<ChatReply, BackendError> + Send + Sync;

/// Closure-backed chat backend.
pub struct FnChat(Box<ChatFn>);

impl FnChat {
    pub fn new(f: impl Fn(&ChatCall<'_>) -> Result<ChatReply, BackendError> + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }
}

impl ChatBackend for FnChat {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
        (self.0)(call)
    }
}

/// Text following `label` up to the end of its line.
fn line_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(label)? + label.len();
    Some(text[start..].lines().next().unwrap_or("").trim())
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let rest = &text[s..];
    let e = rest.find(end).unwrap_or(rest.len());
    Some(rest[..e].trim())
}

const LEADING_STOPWORDS: &[&str] = &[
    "The",
    "A",
    "An",
    "In",
    "On",
    "At",
    "It",
    "He",
    "She",
    "They",
    "This",
    "That",
    "These",
    "Those",
    "According",
    "After",
    "Before",
    "During",
    "Who",
    "What",
    "When",
    "Where",
    "Which",
    "Why",
    "How",
    "Is",
    "Was",
    "Did",
    "Does",
];

/// Runs of capitalized words and four-digit years.
pub fn capitalized_spans(sentence: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let flush = |current: &mut Vec<&str>, spans: &mut Vec<String>| {
        if !current.is_empty() {
            spans.push(current.join(" "));
            current.clear();
        }
    };
    for w in words {
        let clean = w.trim_matches(|c: char| !c.is_alphanumeric());
        if clean.is_empty() {
            flush(&mut current, &mut spans);
            continue;
        }
        let is_year = clean.len() == 4 && clean.chars().all(|c| c.is_ascii_digit());
        let is_cap = clean.chars().next().is_some_and(char::is_uppercase);
        if is_year {
            flush(&mut current, &mut spans);
            spans.push(clean.to_string());
        } else if is_cap && !(current.is_empty() && LEADING_STOPWORDS.contains(&clean)) {
            current.push(clean);
        } else {
            flush(&mut current, &mut spans);
        }
        if w.ends_with([',', '.', ';', ':', '!', '?', ')']) {
            flush(&mut current, &mut spans);
        }
    }
    flush(&mut current, &mut spans);
    spans
}

/// Rule-based responder for every pipeline stage.
#[derive(Debug, Default, Clone)]
pub struct HeuristicChat;

impl HeuristicChat {
    fn extraction(user: &str) -> String {
        let mut out = String::new();
        let mut rest = user;
        while let Some(pos) = rest.find("Passage [") {
            let block_start = &rest[pos..];
            let header_end = block_start.find("]:").map(|e| e + 2).unwrap_or(block_start.len());
            let header = &block_start[..header_end];
            let body = &block_start[header_end..];
            let next = body.find("\nPassage [").unwrap_or(body.len());
            let block = &body[..next];
            rest = &body[next..];
            let title = line_after(block, "Document Title:").unwrap_or("");
            let content = block.find("Content:").map(|i| block[i + 8..].trim()).unwrap_or("");
            let props = split_sentences(content);
            out.push_str(header);
            out.push_str("\nPropositions:\n");
            let mut entities: Vec<(String, String, Vec<usize>)> = Vec::new();
            for (i, p) in props.iter().enumerate() {
                out.push_str(&format!("[{i}] {p}\n"));
                let mut spans = capitalized_spans(p);
                if !title.is_empty() && p.contains(title) {
                    spans.push(title.to_string());
                }
                for span in spans {
                    let ty = if span.len() == 4 && span.chars().all(|c| c.is_ascii_digit()) {
                        "Year"
                    } else {
                        "Named Entity"
                    };
                    match entities.iter_mut().find(|(n, _, _)| n.eq_ignore_ascii_case(&span)) {
                        Some((_, _, idx)) => {
                            if !idx.contains(&i) {
                                idx.push(i);
                            }
                        }
                        None => entities.push((span, ty.to_string(), vec![i])),
                    }
                }
            }
            out.push_str("\nEntities:\n");
            for (name, ty, idx) in entities {
                let idx: Vec<String> = idx.iter().map(ToString::to_string).collect();
                out.push_str(&format!("{name}|{ty}|{}\n", idx.join(" ")));
            }
            out.push('\n');
        }
        out
    }

    fn planning(user: &str) -> String {
        let q = user.trim().trim_start_matches("Question:").trim().trim_matches('"');
        format!("Rational Plan: Look up the answer to the question directly.\nSub-questions:\n1. {q}")
    }

    fn rewriting(user: &str) -> String {
        let raw = line_after(user, "Raw Sub-question:").unwrap_or("");
        let history = between(user, "Context History:", "\nRaw Sub-question:").unwrap_or("");
        let mut statement = raw.trim_end_matches('?').to_string();
        for line in history.lines() {
            if let Some(rest) = line.trim().strip_prefix("Step ") {
                if let Some((n, answer)) = rest.split_once(" Answer:") {
                    let answer = strip_citations(answer.trim());
                    statement = statement.replace(&format!("#{}", n.trim()), answer.trim_end_matches('.'));
                }
            }
        }
        let keywords: Vec<String> = capitalized_spans(&statement);
        format!(
            "Search Statement: {statement}.\nKeywords: {}",
            serde_json::to_string(&keywords).expect("strings serialize")
        )
    }

    fn selection(user: &str) -> String {
        let first = user
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- node_id:"))
            .filter_map(|l| l.split('|').next()?.trim().parse::<u64>().ok())
            .next();
        match first {
            Some(id) => format!("node_ids: [{id}]\nreasoning: highest scoring candidate"),
            None => "node_ids: []\nreasoning: no candidates".to_string(),
        }
    }

    fn evaluation(user: &str) -> String {
        let sub_question = line_after(user, "Sub-question:").unwrap_or("");
        let statement = line_after(user, "Current search statement:").unwrap_or(sub_question);
        let wanted: Vec<String> = tokenize(sub_question);
        let evidence = user.split("== NEW EVIDENCE ==").nth(1).unwrap_or("");
        let mut best: Option<(usize, u64, &str)> = None;
        for line in evidence.lines() {
            let line = line.trim();
            let Some(rest) = line.strip_prefix("[ID: ") else { continue };
            let Some((id, text)) = rest.split_once(']') else { continue };
            let Ok(id) = id.trim().parse::<u64>() else { continue };
            let overlap = tokenize(text).iter().filter(|t| wanted.contains(t)).count();
            if best.is_none_or(|(o, _, _)| overlap > o) {
                best = Some((overlap, id, text.trim()));
            }
        }
        match best {
            Some((_, id, text)) => format!(
                "action: DONE\nanswer: {} [ID: {id}]\nsupporting_prop_ids: [{id}]\nnode_findings: {}\nreasoning_frontier: resolved",
                text.trim_end_matches('.'),
                text
            ),
            None => format!(
                "action: QUERY_AGAIN\nanswer: \nnew_search_statement: {statement}\nkeywords: []\nnode_findings: no relevant evidence\nreasoning_frontier: {sub_question}"
            ),
        }
    }

    fn synthesis(user: &str) -> String {
        let research = between(user, "Research:", "\nQ:").unwrap_or("");
        let last = research
            .lines()
            .filter_map(|l| l.split_once(" Answer:").map(|(_, a)| a.trim()))
            .next_back()
            .unwrap_or("unknown");
        let answer = strip_citations(last);
        format!("Rationale:\n- [Conclusion]: {answer}\n- So the answer is: {answer}")
    }

    fn judge(user: &str) -> String {
        let prediction = between(user, "John's answer to the question was:", "\n\n").unwrap_or("");
        let truth = between(user, "The ground truth answer was:", "\n\n").unwrap_or("");
        let p = tokenize(prediction).join(" ");
        let agrees = truth.split(" | ").any(|t| {
            let t = tokenize(t).join(" ");
            !t.is_empty() && p.contains(&t)
        });
        if agrees {
            "Yes".into()
        } else {
            "No".into()
        }
    }
}

/// Remove `[ID: n]` citation tags.
pub fn strip_citations(text: &str) -> String {
    let re = regex::Regex::new(r"\s*\[ID:\s*\d+\]").expect("static regex");
    re.replace_all(text, "").trim().to_string()
}

impl ChatBackend for HeuristicChat {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
        let text = match call.stage {
            Stage::Extraction => Self::extraction(call.user),
            Stage::Planning => Self::planning(call.user),
            Stage::Rewriting => Self::rewriting(call.user),
            Stage::Selection => Self::selection(call.user),
            Stage::Evaluation => Self::evaluation(call.user),
            Stage::Synthesis => Self::synthesis(call.user),
            Stage::Judge => Self::judge(call.user),
            Stage::Difficulty => "I don't know".to_string(),
        };
        Ok(ChatReply::text(text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MockEmbedding {
    /// One pseudo-random vector per distinct text.
    Hashed,
    /// Sum of per-token hashed vectors, so shared words raise cosine.
    BagOfWords,
}

/// Seeded hash embedder with an optional injected text → vector table.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
    seed: u64,
    mode: MockEmbedding,
    table: HashMap<String, Vec<f32>>,
}

impl MockEmbedder {
    pub fn hashed(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed, mode: MockEmbedding::Hashed, table: HashMap::new() }
    }

    pub fn bag_of_words(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed, mode: MockEmbedding::BagOfWords, table: HashMap::new() }
    }

    pub fn new(dimension: usize, seed: u64, mode: MockEmbedding) -> Self {
        Self { dimension, seed, mode, table: HashMap::new() }
    }

    /// Pin `text` to `vector` (normalized by the gateway).
    pub fn inject(&mut self, text: impl Into<String>, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dimension, "injected vector dimension");
        self.table.insert(text.into(), vector);
    }

    pub fn with_table(mut self, table: impl IntoIterator<Item = (String, Vec<f32>)>) -> Self {
        for (k, v) in table {
            self.inject(k, v);
        }
        self
    }

    fn hash_vector(&self, text: &str) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dimension).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        if let Some(v) = self.table.get(text) {
            return v.clone();
        }
        match self.mode {
            MockEmbedding::Hashed => self.hash_vector(text),
            MockEmbedding::BagOfWords => {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    return self.hash_vector(text);
                }
                let mut acc = vec![0f32; self.dimension];
                for t in tokens {
                    for (a, v) in acc.iter_mut().zip(self.hash_vector(&t)) {
                        *a += v;
                    }
                }
                acc
            }
        }
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String], _purpose: EmbedPurpose) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CompletionRequest, Gateway, Scope};

    fn gw(embedder: MockEmbedder) -> Gateway {
        Gateway::new(ScriptedChat::default(), embedder)
    }

    #[test]
    fn same_text_same_vector_and_unit_norm() {
        let g = gw(MockEmbedder::hashed(16, 3));
        let a = g.embed_one("Perdiguera", EmbedPurpose::Proposition).unwrap();
        let b = g.embed_one("Perdiguera", EmbedPurpose::Statement).unwrap();
        assert_eq!(a, b);
        assert!((a.dot(&a) - 1.0).abs() < 1e-6);
        let c = g.embed_one("Aragon", EmbedPurpose::Proposition).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn seed_changes_vectors() {
        let a = gw(MockEmbedder::hashed(16, 1)).embed_one("x", EmbedPurpose::Passage).unwrap();
        let b = gw(MockEmbedder::hashed(16, 2)).embed_one("x", EmbedPurpose::Passage).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn injected_orthogonal_table() {
        let mut e = MockEmbedder::hashed(2, 0);
        e.inject("a", vec![1.0, 0.0]);
        e.inject("b", vec![0.0, 1.0]);
        let g = gw(e);
        let a = g.embed_one("a", EmbedPurpose::TypeLabel).unwrap();
        let b = g.embed_one("b", EmbedPurpose::TypeLabel).unwrap();
        assert_eq!(a.dot(&b), 0.0);
    }

    #[test]
    fn bag_of_words_rewards_shared_tokens() {
        let g = gw(MockEmbedder::bag_of_words(256, 9));
        let q = g.embed_one("palace built century", EmbedPurpose::Statement).unwrap();
        let near = g.embed_one("the palace was built in the 15th century", EmbedPurpose::Proposition).unwrap();
        let far = g.embed_one("hares seen in gardens in spring", EmbedPurpose::Proposition).unwrap();
        assert!(q.dot(&near) > q.dot(&far));
    }

    #[test]
    fn scripted_stage_mismatch_is_fatal() {
        let g = Gateway::new(ScriptedChat::new([ScriptedReply::new(Stage::Planning, "x")]), MockEmbedder::hashed(2, 0));
        let err = g.complete(CompletionRequest::new(Stage::Synthesis, Scope::Indexing, "", "")).unwrap_err();
        assert!(err.to_string().contains("expected a planning call"));
    }

    #[test]
    fn capitalized_spans_skip_leading_articles() {
        assert_eq!(
            capitalized_spans("The Palau de la Generalitat in Barcelona was built in 1403."),
            vec!["Palau", "Generalitat", "Barcelona", "1403"]
        );
        assert_eq!(capitalized_spans("Martin the Humane died."), vec!["Martin", "Humane"]);
    }

    #[test]
    fn strip_citations_removes_id_tags() {
        assert_eq!(strip_citations("Christopher Nolan [ID: 293]."), "Christopher Nolan.");
    }
}
