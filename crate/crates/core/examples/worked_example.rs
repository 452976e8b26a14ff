//! The three-hop worked example with scripted model replies: plan, three
//! sub-agents (the second re-queries once), and a synthesis step.
//!
//! `cargo run --example worked_example [-- --json]`

use grasp::demo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (index, _) = demo::worked_index()?;
    let (result, gw) = demo::run_worked_example(&index)?;
    if std::env::args().any(|a| a == "--json") {
        println!("{}", result.to_json());
        return Ok(());
    }
    println!("Q: {}", result.question);
    if let Some(plan) = &result.plan {
        println!("plan: {}", plan.rational_plan);
    }
    for t in &result.traces {
        println!("sub-agent {}: {}", t.index, t.sub_question);
        for it in &t.iterations {
            let names: Vec<String> = it
                .selected
                .iter()
                .map(|e| index.entity(*e).map(|n| n.canonical_name.clone()).unwrap_or_default())
                .collect();
            let passages: Vec<&str> = it.passages.iter().map(|p| p.passage_id.as_str()).collect();
            let action = it.action.as_ref().map(|a| format!("{:?}", a.action)).unwrap_or_else(|| "-".into());
            println!(
                "  iteration {}: {:?}\n    entities {names:?}, passages {passages:?}, {action}",
                it.iteration, it.statement
            );
        }
        println!("  answer: {}", t.final_answer);
    }
    println!("final answer: {}", result.final_answer);
    let report = gw.ledger().report(std::slice::from_ref(&result.question_id));
    println!("{} LLM calls, {} tokens", gw.ledger().entries().len(), report.inference_total);
    Ok(())
}
