//! Chat-completions style HTTP backends.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatCall, ChatReply, EmbedPurpose, EmbeddingBackend, Usage};

/// Connection settings shared by the chat and embedding clients.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`; `/chat/completions` and
    /// `/embeddings` are appended.
    pub base_url: String,
    pub api_key: Option<String>,
    /// Header carrying the key. `Authorization` values get a `Bearer ` prefix.
    pub auth_header: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            auth_header: "Authorization".into(),
            timeout: Duration::from_secs(120),
        }
    }

    /// Read `GRASP_API_BASE`, `GRASP_API_KEY` and `GRASP_AUTH_HEADER`.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var("GRASP_API_BASE").ok()?;
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var("GRASP_API_KEY").ok();
        if let Ok(h) = std::env::var("GRASP_AUTH_HEADER") {
            cfg.auth_header = h;
        }
        Some(cfg)
    }

    fn client(&self) -> reqwest::blocking::Client {
        reqwest::blocking::Client::builder().timeout(self.timeout).build().expect("http client builds")
    }

    fn post(&self, client: &reqwest::blocking::Client, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.base_url.trim_end_matches('/'), path);
        let mut req = client.post(&url).json(body);
        if let Some(key) = &self.api_key {
            let value = if self.auth_header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            req = req.header(self.auth_header.as_str(), value);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("{url}: HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Fatal(format!("{url}: HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("{url}: invalid JSON: {e}")))
    }
}

pub struct HttpChat {
    config: HttpConfig,
    model: String,
    /// Opaque fields merged into every request body (reasoning budgets etc.).
    extra: Value,
    client: reqwest::blocking::Client,
}

impl HttpChat {
    pub fn new(config: HttpConfig, model: impl Into<String>) -> Self {
        let client = config.client();
        Self { config, model: model.into(), extra: Value::Null, client }
    }

    pub fn with_extra(mut self, extra: Value) -> Self {
        self.extra = extra;
        self
    }
}

fn merge_extra(body: &mut Value, extra: &Value) {
    if let (Some(b), Some(e)) = (body.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
}

impl ChatBackend for HttpChat {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatReply, BackendError> {
        let mut messages = Vec::new();
        if !call.system.is_empty() {
            messages.push(json!({"role": "system", "content": call.system}));
        }
        messages.push(json!({"role": "user", "content": call.user}));
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": call.temperature,
        });
        merge_extra(&mut body, &self.extra);
        let v = self.config.post(&self.client, "chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = match (v["usage"]["prompt_tokens"].as_u64(), v["usage"]["completion_tokens"].as_u64()) {
            (Some(i), Some(o)) => Some(Usage { input_tokens: i, output_tokens: o }),
            _ => None,
        };
        Ok(ChatReply { text, usage })
    }
}

pub struct HttpEmbedder {
    config: HttpConfig,
    model: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, model: impl Into<String>, dimension: usize) -> Self {
        let client = config.client();
        Self { config, model: model.into(), dimension, client }
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String], _purpose: EmbedPurpose) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = json!({"model": self.model, "input": texts});
        let v = self.config.post(&self.client, "embeddings", &body)?;
        let data = v["data"].as_array().ok_or_else(|| BackendError::Fatal("response has no data array".into()))?;
        let mut rows: Vec<(u64, Vec<f32>)> = data
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let index = d["index"].as_u64().unwrap_or(i as u64);
                let vec = d["embedding"]
                    .as_array()
                    .ok_or_else(|| BackendError::Fatal("embedding row is not an array".into()))?
                    .iter()
                    .map(|x| x.as_f64().map(|f| f as f32))
                    .collect::<Option<Vec<f32>>>()
                    .ok_or_else(|| BackendError::Fatal("non-numeric embedding component".into()))?;
                Ok((index, vec))
            })
            .collect::<Result<_, BackendError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}
