//! Bundled offline fixtures: the three-hop worked example and a synthetic
//! retrieval corpus with planted gold facts.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::agent::{Agent, AgentConfig, AgentError, PipelineResult};
use crate::corpus::{Passage, QuestionRecord};
use crate::extraction::{render_extraction_output, ExtractedEntity, ExtractedProposition, PassageExtraction};
use crate::graph::GraphIndex;
use crate::indexing::{build_index, BuildReport, IndexConfig, IndexError};
use crate::llm::mock::{FnChat, MockEmbedder, ScriptedChat, ScriptedReply};
use crate::llm::{ChatReply, Gateway, Stage};

pub const WORKED_QUESTION_ID: &str = "worked-example";
pub const WORKED_QUESTION: &str =
    "When was the Palau de la Generalitat constructed in the city where Martin from the region where Perdiguera is located died?";
pub const WORKED_GOLD: &str = "built in the 15th century";
pub const WORKED_EMBEDDING_DIM: usize = 128;
pub const WORKED_EMBEDDING_SEED: u64 = 7;

pub const WORKED_CORPUS_JSONL: &str = include_str!("../fixtures/worked_example/corpus.jsonl");
pub const WORKED_EXTRACTION: &str = include_str!("../fixtures/worked_example/extraction.txt");
pub const WORKED_AGENT_REPLIES: &str = include_str!("../fixtures/worked_example/agent_replies.json");

#[derive(Deserialize)]
struct Row {
    passage_id: String,
    #[serde(default)]
    title: String,
    text: String,
}

fn parse_passages(jsonl: &str) -> Vec<Passage> {
    jsonl
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: Row = serde_json::from_str(l).expect("bundled corpus parses");
            Passage { passage_id: r.passage_id, title: r.title, text: r.text }
        })
        .collect()
}

pub fn worked_corpus() -> Vec<Passage> {
    parse_passages(WORKED_CORPUS_JSONL)
}

pub fn worked_embedder() -> MockEmbedder {
    MockEmbedder::bag_of_words(WORKED_EMBEDDING_DIM, WORKED_EMBEDDING_SEED)
}

pub fn worked_question() -> QuestionRecord {
    QuestionRecord {
        question_id: WORKED_QUESTION_ID.into(),
        question: WORKED_QUESTION.into(),
        gold_answers: vec![WORKED_GOLD.into(), "15th century".into()],
        gold_passage_ids: vec!["perdiguera".into(), "martin_the_humane".into(), "royal_residences".into()],
        hop_count: Some(3),
        gold_sub_questions: Some(vec![
            "In which region is Perdiguera located?".into(),
            "Who is the person named Martin from Aragon and in which city did he die?".into(),
            "When was the Palau de la Generalitat in Barcelona constructed?".into(),
        ]),
    }
}

/// Scripted replies for the thirteen inference calls.
pub fn worked_agent_replies() -> Vec<ScriptedReply> {
    serde_json::from_str(WORKED_AGENT_REPLIES).expect("bundled replies parse")
}

/// Index the worked-example corpus from the scripted extraction output.
pub fn worked_index() -> Result<(GraphIndex, BuildReport), IndexError> {
    let gw =
        Gateway::new(ScriptedChat::new([ScriptedReply::new(Stage::Extraction, WORKED_EXTRACTION)]), worked_embedder());
    let config = IndexConfig {
        chat_model: "scripted".into(),
        embedding_model: "mock-bag-of-words".into(),
        ..Default::default()
    };
    build_index(&worked_corpus(), &gw, &config)
}

/// Answer the worked-example question over `index` with the scripted replies.
pub fn run_worked_example(index: &GraphIndex) -> Result<(PipelineResult, Gateway), AgentError> {
    let gw = Gateway::new(ScriptedChat::new(worked_agent_replies()), worked_embedder());
    let result = Agent::new(index, &gw, AgentConfig::default()).answer_question(WORKED_QUESTION_ID, WORKED_QUESTION)?;
    Ok((result, gw))
}

const PEOPLE: [&str; 10] = [
    "Ada Quill",
    "Bram Holt",
    "Cora Wynn",
    "Dax Fenn",
    "Elna Roe",
    "Finn Marr",
    "Gia Stroud",
    "Hal Vesk",
    "Ivo Brand",
    "Juna Pell",
];
const CITIES: [&str; 10] =
    ["Arvel", "Brisk", "Calder", "Dunmore", "Eskar", "Fallow", "Grisham", "Halden", "Istra", "Jorvik"];
const LANDMARKS: [&str; 10] = [
    "Amber Tower",
    "Basalt Bridge",
    "Cobalt Hall",
    "Dune Gate",
    "Ember Library",
    "Flint Arena",
    "Garnet Chapel",
    "Harbor Lighthouse",
    "Iron Museum",
    "Jade Theatre",
];

pub const SYNTHETIC_DIM: usize = 64;
/// Dimensions 0..20 carry the planted facts; the rest hold unrelated text.
const FACT_DIMS: usize = 20;

/// Thirty passages with planted two-hop facts, their extraction, an
/// injected-vector embedder and ten questions with gold sub-questions.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub passages: Vec<Passage>,
    pub extractions: Vec<PassageExtraction>,
    pub questions: Vec<QuestionRecord>,
    pub vectors: Vec<(String, Vec<f32>)>,
}

fn axis(i: usize) -> Vec<f32> {
    let mut v = vec![0f32; SYNTHETIC_DIM];
    v[i] = 1.0;
    v
}

fn prop(i: usize, text: String, passage_id: &str) -> ExtractedProposition {
    ExtractedProposition { local_index: i, text, passage_id: passage_id.to_string() }
}

fn entity(name: &str, ty: &str, idx: &[usize]) -> ExtractedEntity {
    ExtractedEntity { canonical_name: name.into(), entity_type: ty.into(), proposition_indices: idx.to_vec() }
}

impl SyntheticCorpus {
    pub fn build() -> Self {
        let mut passages = Vec::new();
        let mut extractions = Vec::new();
        let mut questions = Vec::new();
        let mut vectors = Vec::new();
        let mut noise = 0usize;
        let mut unrelated = |vectors: &mut Vec<(String, Vec<f32>)>, text: &str| {
            vectors.push((text.to_string(), axis(FACT_DIMS + noise % (SYNTHETIC_DIM - FACT_DIMS))));
            noise += 1;
        };
        for q in 0..10 {
            let (person, city, landmark) = (PEOPLE[q], CITIES[q], LANDMARKS[q]);
            let year = 1700 + 13 * q;

            let id = format!("g{q}a");
            let born = format!("{person} was born in {city}.");
            let job = format!("{person} works as a cartographer.");
            passages.push(Passage { passage_id: id.clone(), title: person.into(), text: format!("{born} {job}") });
            vectors.push((born.clone(), axis(2 * q)));
            unrelated(&mut vectors, &job);
            extractions.push(PassageExtraction {
                passage_id: id.clone(),
                propositions: vec![prop(0, born, &id), prop(1, job, &id)],
                entities: vec![entity(person, "Person", &[0, 1]), entity(city, "City", &[0])],
            });

            let id = format!("g{q}b");
            let built = format!("The {landmark} in {city} was completed in {year}.");
            let open = format!("The {landmark} is open to visitors.");
            passages.push(Passage { passage_id: id.clone(), title: landmark.into(), text: format!("{built} {open}") });
            vectors.push((built.clone(), axis(2 * q + 1)));
            unrelated(&mut vectors, &open);
            extractions.push(PassageExtraction {
                passage_id: id.clone(),
                propositions: vec![prop(0, built, &id), prop(1, open, &id)],
                entities: vec![entity(landmark, "Building", &[0, 1]), entity(city, "City", &[0])],
            });

            let question = format!("When was the landmark in the birthplace of {person} completed?");
            let subs = vec![format!("Where was {person} born?"), format!("When was the landmark in {city} completed?")];
            let mut qv = vec![0f32; SYNTHETIC_DIM];
            qv[2 * q] = 1.0;
            qv[2 * q + 1] = 1.0;
            vectors.push((question.clone(), qv));
            vectors.push((subs[0].clone(), axis(2 * q)));
            vectors.push((subs[1].clone(), axis(2 * q + 1)));
            questions.push(QuestionRecord {
                question_id: format!("s{q}"),
                question,
                gold_answers: vec![year.to_string()],
                gold_passage_ids: vec![format!("g{q}a"), format!("g{q}b")],
                hop_count: Some(2),
                gold_sub_questions: Some(subs),
            });
        }
        for (j, city) in CITIES.iter().enumerate() {
            let id = format!("d{j}");
            let next = CITIES[(j + 1) % CITIES.len()];
            let sentences = [
                format!("{city} hosts a spring market."),
                format!("Traders from {next} sell wool in {city}."),
                format!("Buses from {next} reach the {city} market."),
                format!("Fishmongers from {next} open stalls in {city} at dawn."),
                format!("The {city} market closes before the {next} fair."),
            ];
            passages.push(Passage {
                passage_id: id.clone(),
                title: format!("{city} market"),
                text: sentences.join(" "),
            });
            let mut v = vec![0f32; SYNTHETIC_DIM];
            v[2 * j] = 0.5;
            v[FACT_DIMS + (j * 3) % (SYNTHETIC_DIM - FACT_DIMS)] = 0.75f32.sqrt();
            vectors.push((sentences[0].clone(), v));
            for s in &sentences[1..] {
                unrelated(&mut vectors, s);
            }
            extractions.push(PassageExtraction {
                passage_id: id.clone(),
                propositions: sentences.iter().enumerate().map(|(i, s)| prop(i, s.clone(), &id)).collect(),
                entities: vec![entity(city, "City", &[0, 1, 2, 3, 4]), entity(next, "City", &[1, 2, 3, 4])],
            });
        }
        Self { passages, extractions, questions, vectors }
    }

    /// Hashed embedder with every planted text pinned to its vector.
    pub fn embedder(&self) -> MockEmbedder {
        MockEmbedder::hashed(SYNTHETIC_DIM, 11).with_table(self.vectors.iter().cloned())
    }

    /// Scripted extraction replies, one per batch of `batch_size`.
    pub fn extraction_replies(&self, batch_size: usize) -> Vec<ScriptedReply> {
        self.extractions
            .chunks(batch_size.max(1))
            .map(|c| ScriptedReply::new(Stage::Extraction, render_extraction_output(c)))
            .collect()
    }

    pub fn gateway(&self, batch_size: usize) -> Gateway {
        Gateway::new(ScriptedChat::new(self.extraction_replies(batch_size)), self.embedder())
    }

    pub fn index(&self) -> Result<(GraphIndex, BuildReport), IndexError> {
        let config =
            IndexConfig { chat_model: "scripted".into(), embedding_model: "injected".into(), ..Default::default() };
        build_index(&self.passages, &self.gateway(config.batch_size), &config)
    }
}

const WORDS: [&str; 24] = [
    "Perdiguera",
    "Aragon",
    "Barcelona",
    "Martin",
    "Crown",
    "Palau",
    "Generalitat",
    "Spain",
    "Zaragoza",
    "king",
    "capital",
    "built",
    "century",
    "treaty",
    "France",
    "palace",
    "Asturias",
    "Basque",
    "Palma",
    "Gaudí",
    "died",
    "region",
    "city",
    "Sicily",
];

fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<&'static str> {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect()
}

fn quoted(ws: &[&str]) -> String {
    format!("[{}]", ws.iter().map(|w| format!("\"{w}\"")).collect::<Vec<_>>().join(", "))
}

fn offered_ids(user: &str) -> Vec<u32> {
    user.lines().filter_map(|l| l.strip_prefix("- node_id: ")?.split(" |").next()?.trim().parse().ok()).collect()
}

/// A seeded chat backend that answers every pipeline stage with random but
/// well-formed (occasionally malformed) output.
pub fn random_responder(seed: u64) -> FnChat {
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
    FnChat::new(move |call| {
        let mut rng = rng.lock().expect("rng poisoned");
        let garbage = rng.random_bool(0.1);
        let text = match call.stage {
            _ if garbage => "I am not sure what you want.".to_string(),
            Stage::Planning => {
                let n = rng.random_range(1..=5);
                let mut lines = vec!["Rational Plan: explore the graph.".to_string(), "Sub-questions:".to_string()];
                for i in 1..=n {
                    let dep = if i > 1 && rng.random_bool(0.5) { format!(" of #{}", i - 1) } else { String::new() };
                    lines.push(format!("{i}. What is the {}{dep}?", words(&mut rng, 1, 3).join(" ")));
                }
                lines.join("\n")
            }
            Stage::Rewriting => format!(
                "Search Statement: The {} of the {}.\nKeywords: {}",
                words(&mut rng, 1, 3).join(" "),
                words(&mut rng, 1, 2).join(" "),
                quoted(&words(&mut rng, 0, 3))
            ),
            Stage::Selection => {
                let offered = offered_ids(call.user);
                let mut chosen: Vec<u32> = offered.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
                if rng.random_bool(0.2) {
                    chosen.push(9999);
                }
                format!("node_ids: {chosen:?}\nreasoning: random")
            }
            Stage::Evaluation => {
                if rng.random_bool(0.5) {
                    format!(
                        "action: DONE\nanswer: {}\nnode_findings: {}\nreasoning_frontier: resolved",
                        words(&mut rng, 1, 3).join(" "),
                        words(&mut rng, 1, 4).join(" ")
                    )
                } else {
                    let drop_statement = rng.random_bool(0.1);
                    let statement = if drop_statement {
                        String::new()
                    } else {
                        format!("new_search_statement: The {} now.\n", words(&mut rng, 1, 3).join(" "))
                    };
                    format!(
                        "action: QUERY_AGAIN\nanswer: {}\n{statement}keywords: {}\nnode_findings: {}\nreasoning_frontier: more",
                        words(&mut rng, 0, 2).join(" "),
                        quoted(&words(&mut rng, 0, 2)),
                        words(&mut rng, 1, 4).join(" ")
                    )
                }
            }
            Stage::Synthesis => format!("Rationale: combined.\nSo the answer is: {}", words(&mut rng, 1, 2).join(" ")),
            _ => "No".to_string(),
        };
        Ok(ChatReply::text(text))
    })
}
