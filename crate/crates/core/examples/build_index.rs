//! Build a proposition graph over the bundled ten-passage corpus with the
//! offline heuristic extractor, persist it, and load it back.
//!
//! `cargo run --example build_index [-- <out-dir>]`

use grasp::demo;
use grasp::graph;
use grasp::indexing::{build_index, IndexConfig};
use grasp::llm::mock::{HeuristicChat, MockEmbedder};
use grasp::llm::Gateway;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("grasp-example-index"));
    let passages = demo::worked_corpus();
    let gw = Gateway::new(HeuristicChat, MockEmbedder::bag_of_words(64, 1));
    let (index, report) = build_index(&passages, &gw, &IndexConfig::default())?;
    println!(
        "{} passages -> {} propositions, {} entities ({} merged by type similarity)",
        index.passage_count(),
        index.propositions().len(),
        index.entities().len(),
        report.summary.merged_entities
    );
    println!("{} extraction call(s), {} indexing tokens", report.extraction_calls, report.indexing_tokens);

    let mut hubs: Vec<_> = index.entities().iter().collect();
    hubs.sort_by_key(|e| std::cmp::Reverse(e.degree()));
    for e in hubs.iter().take(5) {
        println!("  {:<28} {:<12} degree {}", e.canonical_name, e.type_labels.join("/"), e.degree());
    }

    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }
    let manifest = graph::persist(&index, &out)?;
    let loaded = graph::load(&out)?;
    assert_eq!(loaded, index);
    println!(
        "persisted to {} (schema {}, checksum {}..)",
        out.display(),
        manifest.schema_version,
        &manifest.checksum[..12]
    );
    Ok(())
}
