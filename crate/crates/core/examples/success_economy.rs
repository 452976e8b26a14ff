//! Difficulty-weighted token efficiency: closed-book sampling gives each
//! question a surprisal weight, and C_w divides total tokens by the weighted
//! count of exact matches.
//!
//! `cargo run --example success_economy`

use grasp::eval::{estimate_difficulty, success_economy, EvalRecord};
use grasp::llm::mock::{FnChat, MockEmbedder};
use grasp::llm::{ChatReply, Gateway};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a closed-book model that knows capitals but not dates
    let chat = FnChat::new(|call| {
        let text = if call.user.contains("capital") { "Paris" } else { "I don't know" };
        Ok(ChatReply::text(text))
    });
    let gw = Gateway::new(chat, MockEmbedder::hashed(8, 0));
    let questions = [
        ("easy", "What is the capital of France?", "Paris", "Paris", 1_200u64),
        ("hard", "When was the Palau de la Generalitat built?", "15th century", "15th century", 6_600),
        ("miss", "Who designed the Palau Montaner?", "Domènech i Montaner", "Gaudí", 5_100),
    ];
    let mut records = Vec::new();
    for (qid, q, gold, prediction, tokens) in questions {
        let golds = vec![gold.to_string()];
        let d = estimate_difficulty(&gw, qid, q, &golds, 10, 1.0)?;
        println!("{qid}: closed-book {}/{} correct, r = {:.4}, w = {:.3} bits", d.correct, d.samples, d.r, d.w);
        let mut r = EvalRecord::new(qid, prediction, &golds, tokens);
        r.difficulty = Some(d.r);
        records.push(r);
    }
    let report = success_economy(&records)?;
    match report.c_w {
        Some(c) => println!("C_w = {c:.1} tokens per weighted success ({} tokens total)", report.total_tokens),
        None => println!("C_w undefined: no exact matches"),
    }
    Ok(())
}
