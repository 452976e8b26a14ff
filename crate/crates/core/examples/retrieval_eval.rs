//! Single-pass and simulated-agentic recall@5 on the planted-fact synthetic
//! corpus, with RankVote and uniform passage weighting.
//!
//! `cargo run --example retrieval_eval`

use grasp::demo::SyntheticCorpus;
use grasp::eval::{evaluate_retrieval, RetrievalEvalMode};
use grasp::llm::mock::HeuristicChat;
use grasp::llm::Gateway;
use grasp::retrieval::{RetrievalConfig, Weighting};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = SyntheticCorpus::build();
    let (index, _) = corpus.index()?;
    let gw = Gateway::new(HeuristicChat, corpus.embedder());
    println!("{:<10} {:>12} {:>18}", "weighting", "single-pass", "simulated-agentic");
    for weighting in [Weighting::Rankvote, Weighting::Uniform] {
        let cfg = RetrievalConfig { weighting, ..Default::default() };
        let single = evaluate_retrieval(&index, &gw, &corpus.questions, RetrievalEvalMode::SinglePass, 5, &cfg)?;
        let agentic = evaluate_retrieval(&index, &gw, &corpus.questions, RetrievalEvalMode::SimulatedAgentic, 5, &cfg)?;
        println!("{:<10} {:>12.3} {:>18.3}", format!("{weighting:?}"), single.mean_recall, agentic.mean_recall);
    }
    Ok(())
}
