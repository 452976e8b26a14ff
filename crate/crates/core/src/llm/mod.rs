//! Chat-completion and embedding access with token accounting.
//!
//! Every completion goes through [`Gateway::complete`], which applies the
//! per-stage default temperature, retries transient transport failures,
//! bounds the number of in-flight requests and appends a [`LedgerEntry`] to
//! the shared [`TokenLedger`].

mod http;
mod ledger;
pub mod mock;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::vector::Embedding;

pub use http::{HttpChat, HttpConfig, HttpEmbedder};
pub use ledger::{LedgerEntry, LedgerReport, QuestionTokens, TokenLedger, TokenShare};

/// Pipeline stage that issued a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extraction,
    Planning,
    Rewriting,
    Selection,
    Evaluation,
    Synthesis,
    Judge,
    Difficulty,
}

impl Stage {
    /// Generators run at 0.2, extractors at 0.1, difficulty sampling at 1.0.
    pub fn default_temperature(self) -> f64 {
        match self {
            Stage::Extraction | Stage::Judge => 0.1,
            Stage::Planning | Stage::Rewriting | Stage::Selection | Stage::Evaluation | Stage::Synthesis => 0.2,
            Stage::Difficulty => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Extraction => "extraction",
            Stage::Planning => "planning",
            Stage::Rewriting => "rewriting",
            Stage::Selection => "selection",
            Stage::Evaluation => "evaluation",
            Stage::Synthesis => "synthesis",
            Stage::Judge => "judge",
            Stage::Difficulty => "difficulty",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Who a call's tokens are attributed to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Indexing,
    Question(String),
}

impl Scope {
    pub fn label(&self) -> &str {
        match self {
            Scope::Indexing => "indexing",
            Scope::Question(q) => q,
        }
    }
}

/// Identifier of one completion: `<scope>/<seq>`, sequential per scope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallId {
    pub scope: String,
    pub seq: u32,
}

impl fmt::Display for CallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:04}", self.scope, self.seq)
    }
}

impl std::str::FromStr for CallId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (scope, seq) = s.rsplit_once('/').ok_or_else(|| format!("malformed call id {s:?}"))?;
        let seq = seq.parse().map_err(|_| format!("malformed call id {s:?}"))?;
        Ok(CallId { scope: scope.to_string(), seq })
    }
}

impl Serialize for CallId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CallId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub temperature: Option<f64>,
    pub stage: Stage,
    pub scope: Scope,
}

impl CompletionRequest {
    pub fn new(stage: Stage, scope: Scope, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self { system: system.into(), user: user.into(), temperature: None, stage, scope }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub call_id: CallId,
    pub temperature: f64,
}

/// What a backend receives for one attempt.
#[derive(Debug, Clone)]
pub struct ChatCall<'a> {
    pub system: &'a str,
    pub user: &'a str,
    pub temperature: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    /// Usage reported by the backend; estimated from whitespace tokens when absent.
    pub usage: Option<Usage>,
}

impl ChatReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), usage: None }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedPurpose {
    Proposition,
    Statement,
    TypeLabel,
    Passage,
}

#[derive(Debug, Clone)]
pub struct EmbeddingRequest {
    pub texts: Vec<String>,
    pub purpose: EmbedPurpose,
}

pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String], purpose: EmbedPurpose) -> Result<Vec<Vec<f32>>, BackendError>;
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("{stage} call failed after {attempts} attempts: {message}")]
    Transport { stage: Stage, attempts: u32, message: String },
    #[error("{stage} call rejected: {message}")]
    Backend { stage: Stage, message: String },
    #[error("embedding input {index} is empty")]
    EmptyEmbeddingInput { index: usize },
    #[error("embedding backend failed: {0}")]
    Embedding(String),
    #[error(
        "embedding backend returned {got} vectors of dimension {dim}, expected {expected} of dimension {expected_dim}"
    )]
    EmbeddingShape { got: usize, dim: usize, expected: usize, expected_dim: usize },
}

/// Retry schedule for transient transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1), jitter: true }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; same attempt budget.
    pub fn immediate() -> Self {
        Self { base_delay: Duration::ZERO, jitter: false, ..Self::default() }
    }

    fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.saturating_mul(1u32 << retry.min(16));
        if self.jitter && !base.is_zero() {
            let factor: f64 = rand::rng().random_range(0.5..1.5);
            base.mul_f64(factor)
        } else {
            base
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.freed.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Whitespace token count used when a backend reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub struct Gateway {
    chat: Box<dyn ChatBackend>,
    embedder: Box<dyn EmbeddingBackend>,
    ledger: Arc<TokenLedger>,
    retry: RetryPolicy,
    in_flight: Semaphore,
    counters: Mutex<HashMap<Scope, u32>>,
    temperature_overrides: BTreeMap<Stage, f64>,
    embed_batch_size: usize,
}

impl Gateway {
    pub fn new(chat: impl ChatBackend + 'static, embedder: impl EmbeddingBackend + 'static) -> Self {
        Self::from_boxed(Box::new(chat), Box::new(embedder))
    }

    pub fn from_boxed(chat: Box<dyn ChatBackend>, embedder: Box<dyn EmbeddingBackend>) -> Self {
        Self {
            chat,
            embedder,
            ledger: Arc::new(TokenLedger::default()),
            retry: RetryPolicy::default(),
            in_flight: Semaphore::new(8),
            counters: Mutex::new(HashMap::new()),
            temperature_overrides: BTreeMap::new(),
            embed_batch_size: 64,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.in_flight = Semaphore::new(cap);
        self
    }

    pub fn with_ledger(mut self, ledger: Arc<TokenLedger>) -> Self {
        self.ledger = ledger;
        self
    }

    pub fn with_temperature(mut self, stage: Stage, temperature: f64) -> Self {
        self.temperature_overrides.insert(stage, temperature);
        self
    }

    pub fn with_embed_batch_size(mut self, n: usize) -> Self {
        self.embed_batch_size = n.max(1);
        self
    }

    pub fn ledger(&self) -> &Arc<TokenLedger> {
        &self.ledger
    }

    pub fn embedding_dimension(&self) -> usize {
        self.embedder.dimension()
    }

    fn next_call_id(&self, scope: &Scope) -> CallId {
        let mut counters = self.counters.lock().expect("counter lock poisoned");
        let seq = counters.entry(scope.clone()).or_insert(0);
        *seq += 1;
        CallId { scope: scope.label().to_string(), seq: *seq }
    }

    pub fn complete(&self, request: CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let temperature = request
            .temperature
            .or_else(|| self.temperature_overrides.get(&request.stage).copied())
            .unwrap_or_else(|| request.stage.default_temperature());
        let call = ChatCall { system: &request.system, user: &request.user, temperature, stage: request.stage };
        let reply = {
            let _permit = self.in_flight.acquire();
            let mut attempt = 0u32;
            loop {
                match self.chat.chat(&call) {
                    Ok(reply) => break reply,
                    Err(BackendError::Transient(message)) => {
                        if attempt >= self.retry.max_retries {
                            return Err(LlmError::Transport { stage: request.stage, attempts: attempt + 1, message });
                        }
                        std::thread::sleep(self.retry.delay(attempt));
                        attempt += 1;
                    }
                    Err(BackendError::Fatal(message)) => {
                        return Err(LlmError::Backend { stage: request.stage, message });
                    }
                }
            }
        };
        let usage = reply.usage.unwrap_or_else(|| Usage {
            input_tokens: estimate_tokens(&request.system) + estimate_tokens(&request.user),
            output_tokens: estimate_tokens(&reply.text),
        });
        let call_id = self.next_call_id(&request.scope);
        self.ledger.append(LedgerEntry {
            call_id: call_id.clone(),
            stage: request.stage,
            question_id: request.scope.label().to_string(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
        });
        Ok(CompletionResponse {
            text: reply.text,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            call_id,
            temperature,
        })
    }

    /// Embed texts into unit vectors, batching transparently.
    pub fn embed(&self, request: &EmbeddingRequest) -> Result<Vec<Embedding>, LlmError> {
        if let Some(index) = request.texts.iter().position(|t| t.trim().is_empty()) {
            return Err(LlmError::EmptyEmbeddingInput { index });
        }
        let dim = self.embedder.dimension();
        let mut out = Vec::with_capacity(request.texts.len());
        for chunk in request.texts.chunks(self.embed_batch_size) {
            let vectors = {
                let _permit = self.in_flight.acquire();
                let mut attempt = 0u32;
                loop {
                    match self.embedder.embed(chunk, request.purpose) {
                        Ok(v) => break v,
                        Err(BackendError::Transient(_)) if attempt < self.retry.max_retries => {
                            std::thread::sleep(self.retry.delay(attempt));
                            attempt += 1;
                        }
                        Err(e) => return Err(LlmError::Embedding(e.to_string())),
                    }
                }
            };
            if vectors.len() != chunk.len() || vectors.iter().any(|v| v.len() != dim) {
                return Err(LlmError::EmbeddingShape {
                    got: vectors.len(),
                    dim: vectors.first().map_or(0, Vec::len),
                    expected: chunk.len(),
                    expected_dim: dim,
                });
            }
            out.extend(vectors.into_iter().map(Embedding::normalized));
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str, purpose: EmbedPurpose) -> Result<Embedding, LlmError> {
        let mut v = self.embed(&EmbeddingRequest { texts: vec![text.to_string()], purpose })?;
        Ok(v.pop().expect("one vector per input"))
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockEmbedder, ScriptedChat};
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn chat(&self, _call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::Transient("connection reset".into()))
            } else {
                Ok(ChatReply::text("ok"))
            }
        }
    }

    fn embedder() -> MockEmbedder {
        MockEmbedder::hashed(8, 7)
    }

    #[test]
    fn scripted_replies_come_back_in_order_with_whitespace_counts() {
        let gw = Gateway::new(ScriptedChat::new(["first reply", "second one here"]), embedder());
        let a = gw
            .complete(CompletionRequest::new(Stage::Planning, Scope::Question("q".into()), "sys two", "user text here"))
            .unwrap();
        let b = gw.complete(CompletionRequest::new(Stage::Synthesis, Scope::Question("q".into()), "", "x")).unwrap();
        assert_eq!(a.text, "first reply");
        assert_eq!((a.input_tokens, a.output_tokens), (5, 2));
        assert_eq!(b.text, "second one here");
        assert_eq!(b.output_tokens, 3);
        assert_eq!(a.call_id.to_string(), "q/0001");
        assert_eq!(b.call_id.to_string(), "q/0002");
        assert_eq!(gw.ledger().entries().len(), 2);
    }

    #[test]
    fn stage_defaults_apply_unless_overridden() {
        let gw = Gateway::new(ScriptedChat::new(["a", "b", "c"]), embedder()).with_temperature(Stage::Synthesis, 0.0);
        let r = gw.complete(CompletionRequest::new(Stage::Extraction, Scope::Indexing, "", "x")).unwrap();
        assert_eq!(r.temperature, 0.1);
        let r = gw.complete(CompletionRequest::new(Stage::Planning, Scope::Indexing, "", "x")).unwrap();
        assert_eq!(r.temperature, 0.2);
        let r = gw.complete(CompletionRequest::new(Stage::Synthesis, Scope::Indexing, "", "x")).unwrap();
        assert_eq!(r.temperature, 0.0);
        assert_eq!(Stage::Difficulty.default_temperature(), 1.0);
    }

    #[test]
    fn three_retries_then_success() {
        let gw = Gateway::new(Flaky { failures: 3, calls: AtomicU32::new(0) }, embedder())
            .with_retry(RetryPolicy::immediate());
        let r = gw.complete(CompletionRequest::new(Stage::Judge, Scope::Indexing, "", "x")).unwrap();
        assert_eq!(r.text, "ok");
    }

    #[test]
    fn fourth_consecutive_failure_surfaces_with_stage() {
        let backend = Flaky { failures: 4, calls: AtomicU32::new(0) };
        let gw = Gateway::new(backend, embedder()).with_retry(RetryPolicy::immediate());
        let err = gw.complete(CompletionRequest::new(Stage::Judge, Scope::Indexing, "", "x")).unwrap_err();
        match err {
            LlmError::Transport { stage, attempts, .. } => {
                assert_eq!(stage, Stage::Judge);
                assert_eq!(attempts, 4);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(gw.ledger().entries().is_empty());
    }

    #[test]
    fn embed_rejects_empty_text() {
        let gw = Gateway::new(ScriptedChat::new(Vec::<String>::new()), embedder());
        let err = gw
            .embed(&EmbeddingRequest { texts: vec!["a".into(), "  ".into()], purpose: EmbedPurpose::Statement })
            .unwrap_err();
        assert!(matches!(err, LlmError::EmptyEmbeddingInput { index: 1 }));
    }

    #[test]
    fn embed_batches_transparently_and_normalizes() {
        let gw = Gateway::new(ScriptedChat::new(Vec::<String>::new()), embedder()).with_embed_batch_size(2);
        let texts: Vec<String> = (0..5).map(|i| format!("text {i}")).collect();
        let v = gw.embed(&EmbeddingRequest { texts: texts.clone(), purpose: EmbedPurpose::Proposition }).unwrap();
        assert_eq!(v.len(), 5);
        for (t, e) in texts.iter().zip(&v) {
            assert!((e.dot(e) - 1.0).abs() < 1e-6);
            assert_eq!(e, &gw.embed_one(t, EmbedPurpose::Proposition).unwrap());
        }
    }

    #[test]
    fn concurrent_calls_get_unique_ids() {
        let replies: Vec<String> = (0..64).map(|i| format!("r{i}")).collect();
        let gw = Gateway::new(ScriptedChat::new(replies), embedder()).with_max_in_flight(3);
        std::thread::scope(|s| {
            for t in 0..8 {
                let gw = &gw;
                s.spawn(move || {
                    for _ in 0..8 {
                        gw.complete(CompletionRequest::new(
                            Stage::Judge,
                            Scope::Question(format!("q{}", t % 2)),
                            "",
                            "x",
                        ))
                        .unwrap();
                    }
                });
            }
        });
        let entries = gw.ledger().entries();
        assert_eq!(entries.len(), 64);
        let ids: std::collections::HashSet<_> = entries.iter().map(|e| e.call_id.clone()).collect();
        assert_eq!(ids.len(), 64);
    }
}
