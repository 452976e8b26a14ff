//! Hybrid proposition search, degree-damped entity aggregation and
//! RankVote passage scoring over the worked-example index.
//!
//! `cargo run --example hybrid_search -- "Martin of Aragon died in Barcelona" Martin Aragon`

use std::collections::BTreeSet;

use grasp::demo;
use grasp::llm::mock::HeuristicChat;
use grasp::llm::Gateway;
use grasp::retrieval::{aggregate_entities, rank_passages, search_propositions, RetrievalConfig, SearchStatement};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let statement = args.next().unwrap_or_else(|| "The city where Martin of Aragon died".to_string());
    let keywords: Vec<String> = args.collect();
    let (index, _) = demo::worked_index()?;
    let gw = Gateway::new(HeuristicChat, demo::worked_embedder());
    let cfg = RetrievalConfig::default();
    let stmt = SearchStatement::embed(&gw, &statement, keywords)?;

    let ranked = search_propositions(&index, &stmt, cfg.lambda, cfg.m, &BTreeSet::new())?;
    println!("top propositions for {statement:?} (keywords {:?}):", stmt.keywords);
    for r in ranked.iter().take(5) {
        println!("  #{:<2} {:.4}  {}", r.rank, r.score, index.proposition(r.prop_id)?.text);
    }
    let entities = aggregate_entities(&index, &ranked, cfg.k_entities, &BTreeSet::new())?;
    println!("top entities:");
    for e in &entities {
        let node = index.entity(e.entity_id)?;
        println!(
            "  {:.4}  {} ({}), degree {}",
            e.score,
            node.canonical_name,
            node.type_labels.join("/"),
            node.degree()
        );
    }
    let selected = entities.iter().map(|e| e.entity_id).collect();
    println!("RankVote passages:");
    for p in rank_passages(&index, &stmt, &selected, 3, cfg.weighting, &BTreeSet::new())? {
        println!("  {:.4}  {}", p.score, p.passage_id);
    }
    Ok(())
}
