//! Answer one question with a chat-completions compatible server.
//!
//! Needs `GRASP_API_BASE` (for example `http://localhost:8000/v1`) and usually
//! `GRASP_API_KEY`; `GRASP_CHAT_MODEL`, `GRASP_EMBED_MODEL` and
//! `GRASP_EMBED_DIM` pick the models. Exits quietly when unset.
//!
//! `cargo run --example live_backend -- "Which city did Martin the Humane die in?"`

use grasp::agent::{Agent, AgentConfig};
use grasp::demo;
use grasp::indexing::{build_index, IndexConfig};
use grasp::llm::{Gateway, HttpChat, HttpConfig, HttpEmbedder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Some(http) = HttpConfig::from_env() else {
        eprintln!("GRASP_API_BASE is not set; nothing to do");
        return Ok(());
    };
    let env = |k: &str, d: &str| std::env::var(k).unwrap_or_else(|_| d.to_string());
    let (chat_model, embed_model) =
        (env("GRASP_CHAT_MODEL", "gpt-4o-mini"), env("GRASP_EMBED_MODEL", "text-embedding-3-small"));
    let dim: usize = env("GRASP_EMBED_DIM", "1536").parse()?;
    let gw = Gateway::from_boxed(
        Box::new(HttpChat::new(http.clone(), &chat_model)),
        Box::new(HttpEmbedder::new(http, &embed_model, dim)),
    );
    let question = std::env::args().nth(1).unwrap_or_else(|| demo::WORKED_QUESTION.to_string());
    let cfg = IndexConfig { chat_model, embedding_model: embed_model, ..Default::default() };
    let (index, report) = build_index(&demo::worked_corpus(), &gw, &cfg)?;
    println!(
        "indexed: {} propositions, {} entities, {} tokens",
        index.propositions().len(),
        index.entities().len(),
        report.indexing_tokens
    );
    let result = Agent::new(&index, &gw, AgentConfig::default()).answer_question("live", &question)?;
    println!("{}\n-> {}", question, result.final_answer);
    println!("{} calls, {} tokens", result.tokens.calls, result.tokens.total_tokens);
    Ok(())
}
