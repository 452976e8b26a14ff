//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --test acceptance`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use grasp::agent::{Agent, AgentConfig};
use grasp::corpus::Passage;
use grasp::demo::{self, SyntheticCorpus};
use grasp::eval::{
    exact_match, ndcg_at_5, normalize, recall, smoothed_rate, success_economy, surprisal, token_f1, EvalRecord,
    RetrievalEvalMode,
};
use grasp::extraction::{
    parse_extraction_output, ExtractedEntity, ExtractedProposition, ExtractionError, ExtractionResult,
    PassageExtraction,
};
use grasp::graph::{self, BuildInfo, GraphIndex, PropId};
use grasp::indexing::{build_index, IndexConfig};
use grasp::llm::mock::{HeuristicChat, MockEmbedder, ScriptedChat, ScriptedReply};
use grasp::llm::{Gateway, Stage};
use grasp::retrieval::{
    aggregate_entities, combine_scores, hybrid_score, rank_passages, search_propositions, RankedProposition,
    RetrievalConfig, SearchStatement, Weighting,
};
use grasp::vector::Embedding;
use rand::Rng;

use common::{micro_index, oracle};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn formula_oracles() -> Outcome {
    let started = Instant::now();
    let mut checked_props = 0usize;
    for seed in 0..200u64 {
        let mut m = micro_index(seed);
        let (index, stmt) = (&m.index, &m.stmt);
        let n = index.propositions().len();
        ensure!(n <= 100, "seed {seed}: {n} propositions");
        for p in 0..n as PropId {
            let got = hybrid_score(index, stmt, p, 0.2).map_err(|e| e.to_string())?;
            let want = oracle::hybrid(index, stmt, p, 0.2);
            ensure!(got == want, "seed {seed} prop {p}: hybrid {got} vs oracle {want}");
        }
        checked_props += n;

        let top_m = m.rng.random_range(1..=60);
        let ranked = search_propositions(index, stmt, 0.2, top_m, &BTreeSet::new()).map_err(|e| e.to_string())?;
        let want = oracle::search(index, stmt, 0.2, top_m);
        let got: Vec<(PropId, f64)> = ranked.iter().map(|r| (r.prop_id, r.score)).collect();
        ensure!(got == want, "seed {seed}: search differs");

        let k = m.rng.random_range(1..=6);
        let got: Vec<(u32, f64)> = aggregate_entities(index, &ranked, k, &BTreeSet::new())
            .map_err(|e| e.to_string())?
            .iter()
            .map(|e| (e.entity_id, e.score))
            .collect();
        ensure!(got == oracle::entities(index, &want, k), "seed {seed}: entity scores differ");

        let selected: BTreeSet<u32> =
            index.entities().iter().map(|e| e.entity_id).filter(|_| m.rng.random_bool(0.5)).collect();
        let excluded: BTreeSet<PropId> = (0..n as PropId).filter(|_| m.rng.random_bool(0.2)).collect();
        let d = m.rng.random_range(1..=4);
        for weighting in [Weighting::Rankvote, Weighting::Uniform] {
            let got: Vec<(String, f64)> = rank_passages(index, stmt, &selected, d, weighting, &excluded)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|p| (p.passage_id, p.score))
                .collect();
            ensure!(
                got == oracle::passages(index, stmt, &selected, &excluded, d, weighting),
                "seed {seed}: {weighting:?} passage votes differ"
            );
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("200 micro-indexes, {checked_props} propositions, exact agreement in {secs:.2}s"))
}

fn e2(x: f64) -> Embedding {
    Embedding(vec![x as f32, (1.0 - x * x).max(0.0).sqrt() as f32])
}

/// One passage per distinct owner, propositions with cosine `c` to (1, 0),
/// and entities linking global proposition indexes.
fn toy(props: &[(&str, f64)], entities: &[(&str, &[usize])]) -> GraphIndex {
    let owners: Vec<&str> = props.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let passages: Vec<Passage> =
        owners.iter().map(|o| Passage { passage_id: o.to_string(), title: o.to_string(), text: "t".into() }).collect();
    let mut g = GraphIndex::new(&passages, 2, BuildInfo::default()).unwrap();
    let mut result = ExtractionResult::default();
    let mut embeddings = Vec::new();
    for o in &owners {
        let mine: Vec<usize> = (0..props.len()).filter(|&i| props[i].0 == *o).collect();
        result.passages.push(PassageExtraction {
            passage_id: o.to_string(),
            propositions: mine
                .iter()
                .enumerate()
                .map(|(li, _)| ExtractedProposition {
                    local_index: li,
                    text: format!("unit {li}"),
                    passage_id: o.to_string(),
                })
                .collect(),
            entities: entities
                .iter()
                .filter_map(|(name, gl)| {
                    let local: Vec<usize> =
                        mine.iter().enumerate().filter(|(_, g)| gl.contains(g)).map(|(l, _)| l).collect();
                    (!local.is_empty()).then(|| ExtractedEntity {
                        canonical_name: name.to_string(),
                        entity_type: "T".into(),
                        proposition_indices: local,
                    })
                })
                .collect(),
        });
        embeddings.extend(mine.iter().map(|&i| e2(props[i].1)));
    }
    g.insert_extraction(&result, &embeddings, &BTreeMap::from([("T".to_string(), e2(1.0))])).unwrap();
    g
}

fn hand_cases() -> Outcome {
    let hybrid = combine_scores(0.8, 3.0, 0.2);
    ensure!(close(hybrid, 0.8 + 0.2 * 4f64.ln(), 1e-9), "hybrid {hybrid}");
    ensure!(format!("{hybrid:.5}") == "1.07726", "hybrid rounds to {hybrid:.5}");

    let g = toy(&[("a", 0.0), ("a", 0.0), ("a", 0.0)], &[("E", &[0, 1, 2])]);
    let ranked =
        [RankedProposition { prop_id: 0, score: 1.0, rank: 1 }, RankedProposition { prop_id: 1, score: 0.5, rank: 2 }];
    let e = aggregate_entities(&g, &ranked, 5, &BTreeSet::new()).map_err(|e| e.to_string())?;
    ensure!(close(e[0].score, 0.75, 1e-9), "entity score {}", e[0].score);

    let g = toy(&[("a", 0.9), ("a", 0.1), ("b", 0.5)], &[("E", &[0, 1, 2])]);
    let stmt = SearchStatement::new("s", vec![], e2(1.0));
    let sel = BTreeSet::from([0]);
    let single =
        rank_passages(&g, &stmt, &sel, 2, Weighting::Rankvote, &BTreeSet::from([1, 2])).map_err(|e| e.to_string())?;
    ensure!(close(single[0].score, 0.5, 1e-9), "single vote {}", single[0].score);
    let pair = rank_passages(&g, &stmt, &sel, 2, Weighting::Rankvote, &BTreeSet::new()).map_err(|e| e.to_string())?;
    ensure!(pair[0].passage_id == "a" && close(pair[0].score, 0.75, 1e-9), "ranks 1 and 3 vote {}", pair[0].score);
    Ok(format!("hybrid {hybrid:.9}, entity {:.9}, votes {:.9} / {:.9}", e[0].score, single[0].score, pair[0].score))
}

const EASTER_INPUT: &str = include_str!("../fixtures/extraction/easter_hare_input.txt");
const EASTER_OUTPUT: &str = include_str!("../fixtures/extraction/easter_hare.txt");
const MALFORMED_CASES: &str = include_str!("../fixtures/extraction/malformed_cases.json");

fn easter_passage() -> Passage {
    let content = EASTER_INPUT.lines().find_map(|l| l.strip_prefix("Content: ")).unwrap();
    Passage { passage_id: "easter_hare".into(), title: "Easter Hare".into(), text: content.into() }
}

#[derive(serde::Deserialize)]
struct MalformedCase {
    file: String,
    #[serde(default)]
    total_failure: bool,
    failed: Vec<String>,
    flagged: Vec<String>,
}

fn extraction_fixtures() -> Outcome {
    let passage = easter_passage();
    let parsed = parse_extraction_output(EASTER_OUTPUT, std::slice::from_ref(&passage)).map_err(|e| e.to_string())?;
    ensure!(parsed.failed.is_empty() && parsed.flagged.is_empty(), "easter hare flagged: {:?}", parsed.flagged);
    let p = &parsed.passages[0];
    let texts: Vec<&str> = p.propositions.iter().map(|x| x.text.as_str()).collect();
    ensure!(
        texts
            == [
                "The earliest evidence for the Easter Hare was recorded in south-west Germany in 1678 by Georg Franck von Franckenau.",
                "Georg Franck von Franckenau was a professor of medicine.",
                "The Easter Hare remained unknown in other parts of Germany until the 18th century.",
                "Richard Sermon was a scholar.",
                "Richard Sermon writes that hares were frequently seen in gardens in spring.",
                "The Easter Hare is also known as Osterhase.",
            ],
        "propositions {texts:?}"
    );
    let rows: Vec<(&str, &str, Vec<usize>)> = p
        .entities
        .iter()
        .map(|e| (e.canonical_name.as_str(), e.entity_type.as_str(), e.proposition_indices.clone()))
        .collect();
    let want: Vec<(&str, &str, Vec<usize>)> = vec![
        ("Easter Hare", "Folklore Figure", vec![0, 2, 5]),
        ("Germany", "Country", vec![0, 2]),
        ("1678", "Year", vec![0]),
        ("Georg Franck von Franckenau", "Professor of Medicine", vec![0, 1]),
        ("Richard Sermon", "Scholar", vec![3, 4]),
        ("Osterhase", "Folklore Figure", vec![5]),
    ];
    ensure!(rows == want, "entities {rows:?}");

    let gw = Gateway::new(
        ScriptedChat::new([ScriptedReply::new(Stage::Extraction, EASTER_OUTPUT)]),
        MockEmbedder::hashed(16, 1),
    );
    let (index, report) =
        build_index(std::slice::from_ref(&passage), &gw, &IndexConfig::default()).map_err(|e| e.to_string())?;
    ensure!(
        report.summary.new_entities == 6 && report.summary.merged_entities == 0,
        "resolutions {:?}",
        report.summary
    );
    let hare = index.find_entities("Easter Hare")[0];
    ensure!(index.degree(hare).unwrap() == 3, "Easter Hare degree");
    let germany = index.find_entities("Germany")[0];
    ensure!(index.props_of_entity(germany).unwrap() == &BTreeSet::from([0, 2]), "Germany links");

    let cases: Vec<MalformedCase> = serde_json::from_str(MALFORMED_CASES).map_err(|e| e.to_string())?;
    ensure!(cases.len() == 10, "{} malformed cases", cases.len());
    let batch: Vec<Passage> = ["p0", "p1"]
        .iter()
        .map(|id| Passage { passage_id: id.to_string(), title: id.to_string(), text: "t".into() })
        .collect();
    for case in &cases {
        let path = format!("{}/fixtures/extraction/malformed/{}", env!("CARGO_MANIFEST_DIR"), case.file);
        let raw = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
        let outcome =
            catch_unwind(|| parse_extraction_output(&raw, &batch)).map_err(|_| format!("{} panicked", case.file))?;
        let (failed, flagged): (BTreeSet<String>, BTreeSet<String>) = match outcome {
            Err(ExtractionError::NoPassageBlocks) if case.total_failure => {
                (batch.iter().map(|p| p.passage_id.clone()).collect(), BTreeSet::new())
            }
            Err(e) => return Err(format!("{}: unexpected error {e}", case.file)),
            Ok(_) if case.total_failure => return Err(format!("{}: expected a total failure", case.file)),
            Ok(r) => (
                r.failed.iter().map(|f| f.passage_id.clone()).collect(),
                r.flagged.iter().map(|f| f.passage_id.clone()).collect(),
            ),
        };
        ensure!(failed == case.failed.iter().cloned().collect(), "{}: failed {failed:?}", case.file);
        ensure!(flagged == case.flagged.iter().cloned().collect(), "{}: flagged {flagged:?}", case.file);
    }
    Ok("Easter Hare: 6 propositions, 6 entity rows; 10 malformed fixtures flagged as expected".into())
}

fn dedup_threshold() -> Outcome {
    let passages: Vec<Passage> = ["p0", "p1"]
        .iter()
        .map(|id| Passage { passage_id: id.to_string(), title: id.to_string(), text: "Germany is large.".into() })
        .collect();
    let reply = "Passage [0]:\nPropositions:\n[0] Germany is in Europe.\nEntities:\nGermany|Country|0\n\n\
                 Passage [1]:\nPropositions:\n[0] Germany borders France.\nEntities:\nGermany|Nation|0\n";
    let mut seen = Vec::new();
    for c in [0.69f64, 0.70, 0.71] {
        let mut country = vec![0f32; 8];
        country[0] = 1.0;
        let mut nation = vec![0f32; 8];
        nation[0] = c as f32;
        nation[1] = (1.0 - c * c).sqrt() as f32;
        let embedder =
            MockEmbedder::hashed(8, 3).with_table([("Country".to_string(), country), ("Nation".to_string(), nation)]);
        let gw = Gateway::new(ScriptedChat::new([ScriptedReply::new(Stage::Extraction, reply)]), embedder);
        let (index, _) = build_index(&passages, &gw, &IndexConfig::default()).map_err(|e| e.to_string())?;
        let nodes = index.find_entities("Germany").len();
        let merged = nodes == 1;
        ensure!(merged == (c >= 0.70), "cosine {c}: {nodes} Germany node(s)");
        if merged {
            let id = index.find_entities("Germany")[0];
            ensure!(index.degree(id).unwrap() == 2, "merged node spans both passages");
        }
        seen.push(format!("{c:.2}:{}", if merged { "merge" } else { "split" }));
    }
    Ok(seen.join(" "))
}

fn worked_example() -> Outcome {
    let mut outputs = Vec::new();
    for _ in 0..3 {
        let (index, _) = demo::worked_index().map_err(|e| e.to_string())?;
        let (result, gw) = demo::run_worked_example(&index).map_err(|e| e.to_string())?;
        ensure!(result.final_answer == "15th century", "answer {:?}", result.final_answer);
        let iterations: Vec<usize> = result.traces.iter().map(|t| t.iterations.len()).collect();
        ensure!(iterations == [1, 2, 1], "iterations {iterations:?}");
        ensure!(
            gw.ledger().entries().len() == 13 && result.calls.len() == 13,
            "{} ledgered calls",
            gw.ledger().entries().len()
        );
        outputs.push(result.to_json());
    }
    ensure!(outputs.iter().all(|o| o == &outputs[0]), "runs differ");
    Ok(format!("\"15th century\", iterations (1, 2, 1), 13 calls, {} identical bytes x3", outputs[0].len()))
}

fn agent_bounds() -> Outcome {
    let (index, _) = demo::worked_index().map_err(|e| e.to_string())?;
    let texts: Vec<(&str, &str)> = index.passages().map(|p| (p.passage_id.as_str(), p.text.as_str())).collect();
    let (mut iterations, mut calls, mut errors, mut exposures) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..100u64 {
        let gw = Gateway::new(demo::random_responder(seed), demo::worked_embedder());
        let agent = Agent::new(&index, &gw, AgentConfig::default());
        let result = match catch_unwind(AssertUnwindSafe(|| {
            agent.answer_question(&format!("r{seed}"), demo::WORKED_QUESTION)
        })) {
            Err(_) => return Err(format!("seed {seed}: panic")),
            Ok(Err(_)) => {
                errors += 1;
                continue;
            }
            Ok(Ok(r)) => r,
        };
        calls += result.calls.len();
        let mut shown: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
        for t in &result.traces {
            ensure!(
                t.iterations.len() <= 2,
                "seed {seed}: sub-agent {} ran {} iterations",
                t.index,
                t.iterations.len()
            );
            iterations += t.iterations.len();
            let (mut entities, mut props) = (BTreeSet::new(), BTreeSet::new());
            for it in &t.iterations {
                for e in &it.selected {
                    ensure!(entities.insert(*e), "seed {seed}: entity {e} revisited");
                }
                for p in &it.pool {
                    ensure!(props.insert(p.prop_id), "seed {seed}: proposition {} revisited", p.prop_id);
                }
                shown.entry(t.index).or_default().extend(it.passages.iter().map(|p| p.passage_id.as_str()));
            }
        }
        for call in &result.calls {
            let allowed = call.sub_agent.and_then(|i| shown.get(&i));
            for (id, text) in &texts {
                if call.user.contains(text) || call.system.contains(text) {
                    exposures += 1;
                    ensure!(
                        allowed.is_some_and(|a| a.contains(id)),
                        "seed {seed}: passage {id} leaked into call {} ({:?}, sub-agent {:?})",
                        call.call_id,
                        call.stage,
                        call.sub_agent
                    );
                }
            }
        }
    }
    ensure!(exposures > 0, "no prompt ever showed a passage; the leakage check is vacuous");
    Ok(format!(
        "100 runs ({errors} errors), {iterations} iterations, {calls} calls, {exposures} passage exposures, no revisits or leaks"
    ))
}

fn metrics() -> Outcome {
    ensure!(normalize("The 15th Century.") == ["15th", "century"], "normalize");
    let gold = |s: &str| vec![s.to_string()];
    ensure!(!exact_match("built in the 15th century", &gold("15th century")), "strict EM");
    ensure!(exact_match("The 15th century", &gold("15th century")), "article EM");
    ensure!(close(token_f1("built in 15th century", &gold("15th century")), 2.0 / 3.0, 1e-12), "F1 0.6667");
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    ensure!(recall(&v(&["a", "b"]), &set(&["a", "b"])) == 1.0, "full recall");
    ensure!(recall(&v(&["a", "x"]), &set(&["a", "b"])) == 0.5, "half recall");
    ensure!(ndcg_at_5(&v(&["a"]), &set(&["a"])) == 1.0, "ndcg rank 1");
    ensure!(close(ndcg_at_5(&v(&["x", "a"]), &set(&["a"])), 1.0 / 3f64.log2(), 1e-12), "ndcg rank 2");
    ensure!(ndcg_at_5(&v(&["x", "y", "z", "u", "w", "a"]), &set(&["a"])) == 0.0, "ndcg none in top 5");
    ensure!(close(smoothed_rate(5, 10), 0.5, 1e-12) && close(surprisal(0.5), 1.0, 1e-12), "smoothing 5/10");

    let words = ["The", "the", "a", "An", "15th", "century", "Barcelona", "barcelona.", "king", "Aragon,", "", "!"];
    let mut rng = common::rng(99);
    let mut em_hits = 0;
    for _ in 0..1000 {
        let phrase = |rng: &mut rand_chacha::ChaCha8Rng| {
            (0..rng.random_range(0..4)).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        let (p, g) = (phrase(&mut rng), phrase(&mut rng));
        if exact_match(&p, &gold(&g)) {
            em_hits += 1;
            ensure!(token_f1(&p, &gold(&g)) == 1.0, "EM without F1 = 1 for {p:?} / {g:?}");
        }
    }

    let mut q1 = EvalRecord::new("q1", "Barcelona", &gold("Barcelona"), 600);
    q1.difficulty = Some(0.25);
    let mut q2 = EvalRecord::new("q2", "Madrid", &gold("Barcelona"), 400);
    q2.difficulty = Some(0.5);
    let report = success_economy(&[q1, q2.clone()]).map_err(|e| e.to_string())?;
    ensure!(report.c_w.is_some_and(|c| close(c, 500.0, 1e-9)), "C_w {:?}", report.c_w);
    let wrong = success_economy(&[q2]).map_err(|e| e.to_string())?;
    ensure!(wrong.undefined && wrong.c_w.is_none(), "all-wrong fixture reported {:?}", wrong.c_w);
    Ok(format!("hand fixtures exact; EM => F1 on 1000 pairs ({em_hits} EM); C_w = 500; all-wrong undefined"))
}

fn mock_corpus(n: usize) -> Vec<Passage> {
    let towns = ["Arles", "Brugge", "Cuenca", "Dinan", "Evora", "Fulda", "Girona"];
    (0..n)
        .map(|i| Passage {
            passage_id: format!("m{i:02}"),
            title: format!("{} {i}", towns[i % towns.len()]),
            text: format!(
                "{} {i} lies on the River {}. The Mayor of {} {i} is Alice Stone {}. It was founded in {}.",
                towns[i % towns.len()],
                towns[(i + 1) % towns.len()],
                towns[i % towns.len()],
                i % 5,
                1100 + 7 * i
            ),
        })
        .collect()
}

fn persistence() -> Outcome {
    let gw = Gateway::new(HeuristicChat, MockEmbedder::bag_of_words(32, 5));
    let (index, report) = build_index(&mock_corpus(50), &gw, &IndexConfig::default()).map_err(|e| e.to_string())?;
    ensure!(report.failed.is_empty(), "extraction failures {:?}", report.failed);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a");
    graph::persist(&index, &a).map_err(|e| e.to_string())?;
    let loaded = graph::load(&a).map_err(|e| e.to_string())?;
    ensure!(loaded == index, "loaded index differs");
    let b = dir.path().join("b");
    graph::persist(&loaded, &b).map_err(|e| e.to_string())?;
    for f in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
        let name = f.map_err(|e| e.to_string())?.file_name();
        let (x, y) = (std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        ensure!(x == y, "{name:?} not byte-identical on re-serialization");
    }
    let manifest = a.join("manifest.json");
    let original = std::fs::read_to_string(&manifest).unwrap();
    let tampered = original.replacen("\"passage_count\": 50", "\"passage_count\": 49", 1);
    ensure!(tampered != original, "manifest layout changed; tamper fixture did not apply");
    std::fs::write(&manifest, tampered).unwrap();
    ensure!(graph::load(&a).is_err(), "tampered manifest accepted");
    std::fs::write(&manifest, &original).unwrap();
    let props = a.join("propositions.jsonl");
    let mut bytes = std::fs::read(&props).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&props, bytes).unwrap();
    ensure!(graph::load(&a).is_err(), "tampered data file accepted");
    Ok(format!(
        "50 passages, {} propositions, {} entities round-trip; tampered manifest rejected",
        index.propositions().len(),
        index.entities().len()
    ))
}

fn synthetic_recall() -> Outcome {
    let corpus = SyntheticCorpus::build();
    ensure!(corpus.passages.len() == 30, "{} passages", corpus.passages.len());
    let (index, _) = corpus.index().map_err(|e| e.to_string())?;
    let gw = Gateway::new(HeuristicChat, corpus.embedder());
    let mut recall = BTreeMap::new();
    for weighting in [Weighting::Rankvote, Weighting::Uniform] {
        let cfg = RetrievalConfig { weighting, ..Default::default() };
        for mode in [RetrievalEvalMode::SinglePass, RetrievalEvalMode::SimulatedAgentic] {
            let r = grasp::eval::evaluate_retrieval(&index, &gw, &corpus.questions, mode, 5, &cfg)
                .map_err(|e| e.to_string())?;
            recall.insert((format!("{weighting:?}"), format!("{mode:?}")), r.mean_recall);
        }
    }
    let get = |w: &str, m: &str| recall[&(w.to_string(), m.to_string())];
    let (agentic, single) = (get("Rankvote", "SimulatedAgentic"), get("Rankvote", "SinglePass"));
    ensure!(agentic == 1.0, "simulated-agentic recall@5 {agentic}");
    ensure!(single >= 0.8, "single-pass recall@5 {single}");
    for m in ["SinglePass", "SimulatedAgentic"] {
        ensure!(
            get("Rankvote", m) >= get("Uniform", m),
            "{m}: RankVote {} < uniform {}",
            get("Rankvote", m),
            get("Uniform", m)
        );
    }
    Ok(format!(
        "recall@5 RankVote single {single:.3} / agentic {agentic:.3}; uniform single {:.3} / agentic {:.3}",
        get("Uniform", "SinglePass"),
        get("Uniform", "SimulatedAgentic")
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("formula oracles", formula_oracles),
        ("scoring hand cases", hand_cases),
        ("extraction parser fixtures", extraction_fixtures),
        ("entity dedup threshold", dedup_threshold),
        ("worked example end to end", worked_example),
        ("agent bounds and isolation", agent_bounds),
        ("answer and retrieval metrics", metrics),
        ("index persistence", persistence),
        ("synthetic retrieval recall", synthetic_recall),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "INFO 10 live-backbone recall (non-gating): not run here; see \"Optional live reproduction\" in the README"
    );
    if failures > 0 {
        eprintln!("{failures} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
}
