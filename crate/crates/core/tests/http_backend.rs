use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use grasp::llm::{
    CompletionRequest, EmbedPurpose, Gateway, HttpChat, HttpConfig, HttpEmbedder, LlmError, RetryPolicy, Scope, Stage,
};
use serde_json::{json, Value};

struct Recorded {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serve canned `(status, body)` replies in order on a local port.
fn serve(replies: Vec<(u16, Value)>) -> (String, Arc<Mutex<Vec<Recorded>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    let replies = Arc::new(Mutex::new(replies.into_iter()));
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let (seen, replies) = (seen.clone(), replies.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut out = stream;
                loop {
                    let mut request_line = String::new();
                    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
                        break;
                    }
                    let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
                    let (mut length, mut auth) = (0usize, None);
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        let (name, value) = line.split_once(':').unwrap();
                        match name.to_ascii_lowercase().as_str() {
                            "content-length" => length = value.trim().parse().unwrap(),
                            "authorization" => auth = Some(value.trim().to_string()),
                            _ => {}
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    seen.lock().unwrap().push(Recorded { path, auth, body: serde_json::from_slice(&body).unwrap() });
                    let next = replies.lock().unwrap().next();
                    let (status, reply) = next.unwrap_or((500, json!({"error": "script exhausted"})));
                    let text = reply.to_string();
                    write!(
                        out,
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{text}",
                        text.len()
                    )
                    .unwrap();
                }
            });
        }
    });
    (base, log)
}

fn gateway(base: &str) -> Gateway {
    let mut cfg = HttpConfig::new(base);
    cfg.api_key = Some("secret".into());
    Gateway::from_boxed(
        Box::new(HttpChat::new(cfg.clone(), "chat-model")),
        Box::new(HttpEmbedder::new(cfg, "embed-model", 3)),
    )
    .with_retry(RetryPolicy::immediate())
}

fn chat_reply(text: &str) -> Value {
    json!({"choices": [{"message": {"content": text}}], "usage": {"prompt_tokens": 11, "completion_tokens": 4}})
}

#[test]
fn chat_and_embeddings_round_trip() {
    let (base, log) = serve(vec![
        (200, chat_reply("Search Statement: x")),
        (
            200,
            json!({"data": [{"index": 1, "embedding": [0.0, 3.0, 4.0]}, {"index": 0, "embedding": [1.0, 0.0, 0.0]}]}),
        ),
    ]);
    let gw = gateway(&base);
    let r = gw
        .complete(CompletionRequest::new(Stage::Rewriting, Scope::Question("q1".into()), "sys", "user text"))
        .unwrap();
    assert_eq!(r.text, "Search Statement: x");
    assert_eq!((r.input_tokens, r.output_tokens), (11, 4));
    let v = gw
        .embed(&grasp::llm::EmbeddingRequest { texts: vec!["a".into(), "b".into()], purpose: EmbedPurpose::Statement })
        .unwrap();
    assert_eq!(v[0].0, vec![1.0, 0.0, 0.0]);
    assert!((v[1].0[1] - 0.6).abs() < 1e-6);

    let log = log.lock().unwrap();
    assert_eq!(log[0].path, "/v1/chat/completions");
    assert_eq!(log[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(log[0].body["model"], "chat-model");
    assert_eq!(log[0].body["messages"][0]["content"], "sys");
    assert_eq!(log[0].body["messages"][1]["content"], "user text");
    assert_eq!(log[1].path, "/v1/embeddings");
    assert_eq!(log[1].body["input"], json!(["a", "b"]));
    assert_eq!(gw.ledger().entries().len(), 1);
}

#[test]
fn server_errors_are_retried() {
    let (base, log) = serve(vec![(503, json!({"error": "busy"})), (200, chat_reply("ok"))]);
    let gw = gateway(&base);
    let r = gw.complete(CompletionRequest::new(Stage::Planning, Scope::Question("q".into()), "", "u")).unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(log.lock().unwrap().len(), 2);
    assert_eq!(log.lock().unwrap()[1].body["messages"].as_array().unwrap().len(), 1);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, log) = serve(vec![(400, json!({"error": "bad"})), (200, chat_reply("never"))]);
    let gw = gateway(&base);
    let err = gw.complete(CompletionRequest::new(Stage::Planning, Scope::Question("q".into()), "", "u")).unwrap_err();
    assert!(matches!(err, LlmError::Backend { .. } | LlmError::Transport { .. }), "{err:?}");
    assert_eq!(log.lock().unwrap().len(), 1);
    assert!(gw.ledger().entries().is_empty());
}

#[test]
fn wrong_embedding_width_is_rejected() {
    let (base, _) = serve(vec![(200, json!({"data": [{"index": 0, "embedding": [1.0, 0.0]}]}))]);
    let err = gateway(&base).embed_one("a", EmbedPurpose::Statement).unwrap_err();
    assert!(matches!(err, LlmError::EmbeddingShape { .. }), "{err:?}");
}
