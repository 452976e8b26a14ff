#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use grasp::corpus::Passage;
use grasp::extraction::{ExtractedEntity, ExtractedProposition, ExtractionResult, PassageExtraction};
use grasp::graph::{BuildInfo, GraphIndex, PropId};
use grasp::retrieval::{SearchStatement, Weighting};
use grasp::vector::Embedding;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MICRO_DIM: usize = 8;
const VOCAB: [&str; 14] = [
    "river", "castle", "king", "queen", "born", "died", "city", "tower", "bridge", "war", "treaty", "north", "south",
    "river",
];
const NAMES: [&str; 8] = ["Aragon", "Barcelona", "Martin", "Perdiguera", "Valencia", "Castile", "Leon", "Navarre"];
const TYPES: [&str; 4] = ["Region", "City", "Person", "Kingdom"];

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::normalized((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

pub struct Micro {
    pub index: GraphIndex,
    pub stmt: SearchStatement,
    pub rng: ChaCha8Rng,
}

/// A seeded random index with at most 100 propositions, plus a random statement.
pub fn micro_index(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_passages = rng.random_range(1..=6);
    let passages: Vec<Passage> = (0..n_passages)
        .map(|i| Passage { passage_id: format!("p{i:02}"), title: format!("T{i}"), text: format!("passage {i}") })
        .collect();
    let budget = rng.random_range(n_passages..=100);
    let mut per: Vec<usize> = vec![1; n_passages];
    for _ in n_passages..budget {
        per[rng.random_range(0..n_passages)] += 1;
    }
    let mut extraction = ExtractionResult::default();
    let mut embeddings = Vec::new();
    for (p, &count) in passages.iter().zip(&per) {
        let propositions: Vec<ExtractedProposition> = (0..count)
            .map(|i| ExtractedProposition {
                local_index: i,
                text: random_text(&mut rng),
                passage_id: p.passage_id.clone(),
            })
            .collect();
        embeddings.extend((0..count).map(|_| random_unit(&mut rng, MICRO_DIM)));
        let entities = (0..rng.random_range(0..=4))
            .map(|_| {
                let mut idx: BTreeSet<usize> = (0..count).filter(|_| rng.random_bool(0.3)).collect();
                idx.insert(rng.random_range(0..count));
                ExtractedEntity {
                    canonical_name: NAMES[rng.random_range(0..NAMES.len())].to_string(),
                    entity_type: TYPES[rng.random_range(0..TYPES.len())].to_string(),
                    proposition_indices: idx.into_iter().collect(),
                }
            })
            .collect();
        extraction.passages.push(PassageExtraction { passage_id: p.passage_id.clone(), propositions, entities });
    }
    let types: BTreeMap<String, Embedding> =
        TYPES.iter().map(|t| (t.to_string(), random_unit(&mut rng, MICRO_DIM))).collect();
    let mut index = GraphIndex::new(&passages, MICRO_DIM, BuildInfo::default()).unwrap();
    index.insert_extraction(&extraction, &embeddings, &types).unwrap();
    let keywords = (0..rng.random_range(0..=3)).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect();
    let stmt = SearchStatement::new("random statement", keywords, random_unit(&mut rng, MICRO_DIM));
    Micro { index, stmt, rng }
}

/// Brute-force re-implementation of the scoring formulas over a finished index.
pub mod oracle {
    use super::*;

    pub fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for c in text.chars() {
            if c.is_alphanumeric() {
                cur.extend(c.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
        let mut s = 0.0f64;
        for i in 0..a.0.len() {
            s += a.0[i] as f64 * b.0[i] as f64;
        }
        s
    }

    pub fn bm25(index: &GraphIndex, keywords: &[String], prop: PropId) -> f64 {
        let docs: Vec<Vec<String>> = index.propositions().iter().map(|p| tokens(&p.text)).collect();
        let n_docs = docs.len() as f64;
        let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n_docs;
        let doc = &docs[prop as usize];
        let query: BTreeSet<String> = keywords.iter().flat_map(|k| tokens(k)).collect();
        let mut total = 0.0;
        for term in &query {
            let tf = doc.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
            total += idf * (tf * 2.2) / (tf + 1.2 * (0.25 + 0.75 * doc.len() as f64 / avgdl));
        }
        total
    }

    pub fn hybrid(index: &GraphIndex, stmt: &SearchStatement, prop: PropId, lambda: f64) -> f64 {
        let p = &index.propositions()[prop as usize];
        cosine(&p.embedding, &stmt.embedding) + lambda * (1.0 + bm25(index, &stmt.keywords, prop)).ln()
    }

    fn desc<K: Ord + Clone>(mut v: Vec<(f64, K)>) -> Vec<(f64, K)> {
        // selection sort: highest score first, smallest key on ties
        let mut out = Vec::new();
        while !v.is_empty() {
            let mut best = 0;
            for i in 1..v.len() {
                if v[i].0 > v[best].0 || (v[i].0 == v[best].0 && v[i].1 < v[best].1) {
                    best = i;
                }
            }
            out.push(v.remove(best));
        }
        out
    }

    /// Top-`m` `(prop, score)` by hybrid score.
    pub fn search(index: &GraphIndex, stmt: &SearchStatement, lambda: f64, m: usize) -> Vec<(PropId, f64)> {
        let all = (0..index.propositions().len() as PropId).map(|p| (hybrid(index, stmt, p, lambda), p)).collect();
        desc(all).into_iter().take(m).map(|(s, p)| (p, s)).collect()
    }

    /// Entity scores from a ranked list (rank order), top `k`.
    pub fn entities(index: &GraphIndex, ranked: &[(PropId, f64)], k: usize) -> Vec<(u32, f64)> {
        let mut scored = Vec::new();
        for e in index.entities() {
            let mut sum = 0.0;
            let mut hit = false;
            for (p, s) in ranked {
                if e.prop_ids.contains(p) {
                    sum += s;
                    hit = true;
                }
            }
            if hit {
                scored.push((sum / (1.0 + e.prop_ids.len() as f64).sqrt(), e.entity_id));
            }
        }
        desc(scored).into_iter().take(k).map(|(s, e)| (e, s)).collect()
    }

    /// Passage votes over the pool of `selected` entities minus `excluded`.
    pub fn passages(
        index: &GraphIndex,
        stmt: &SearchStatement,
        selected: &BTreeSet<u32>,
        excluded: &BTreeSet<PropId>,
        d: usize,
        weighting: Weighting,
    ) -> Vec<(String, f64)> {
        let mut pool = BTreeSet::new();
        for e in index.entities() {
            if selected.contains(&e.entity_id) {
                pool.extend(e.prop_ids.iter().copied().filter(|p| !excluded.contains(p)));
            }
        }
        let ranked = desc(
            pool.into_iter()
                .map(|p| (cosine(&index.propositions()[p as usize].embedding, &stmt.embedding), p))
                .collect(),
        );
        let mut votes: Vec<(String, f64)> = Vec::new();
        for (i, (_, p)) in ranked.iter().enumerate() {
            let pid = index.propositions()[*p as usize].passage_id.clone();
            let v = match weighting {
                Weighting::Rankvote => 1.0 / (2.0 + i as f64),
                Weighting::Uniform => 1.0,
            };
            match votes.iter_mut().find(|(q, _)| *q == pid) {
                Some(slot) => slot.1 += v,
                None => votes.push((pid, v)),
            }
        }
        desc(votes.into_iter().map(|(p, s)| (s, p)).collect()).into_iter().take(d).map(|(s, p)| (p, s)).collect()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
