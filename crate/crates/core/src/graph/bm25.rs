//! Okapi BM25 statistics over proposition texts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Inverted-index statistics, one document per proposition in id order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bm25Stats {
    pub doc_freq: BTreeMap<String, u32>,
    pub term_counts: Vec<BTreeMap<String, u32>>,
    pub lengths: Vec<u32>,
    pub total_length: u64,
}

/// Distinct query terms of a keyword bag.
pub fn keyword_terms(keywords: &[String]) -> BTreeSet<String> {
    keywords.iter().flat_map(|k| tokenize(k)).collect()
}

impl Bm25Stats {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut s = Self::default();
        for t in texts {
            s.add_document(t);
        }
        s
    }

    pub fn add_document(&mut self, text: &str) {
        let mut counts = BTreeMap::new();
        let tokens = tokenize(text);
        for t in &tokens {
            *counts.entry(t.clone()).or_insert(0u32) += 1;
        }
        for t in counts.keys() {
            *self.doc_freq.entry(t.clone()).or_insert(0) += 1;
        }
        self.lengths.push(tokens.len() as u32);
        self.total_length += tokens.len() as u64;
        self.term_counts.push(counts);
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn avg_length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.len() as f64
        }
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = *self.doc_freq.get(term).unwrap_or(&0) as f64;
        let big_n = self.len() as f64;
        (1.0 + (big_n - n + 0.5) / (n + 0.5)).ln()
    }

    /// Score document `doc` against distinct `terms`, summed in term order.
    pub fn score(&self, terms: &BTreeSet<String>, doc: usize) -> f64 {
        let counts = &self.term_counts[doc];
        let len = self.lengths[doc] as f64;
        let avgdl = self.avg_length();
        let mut total = 0.0;
        for term in terms {
            let Some(&tf) = counts.get(term) else { continue };
            let tf = tf as f64;
            total += self.idf(term) * (tf * (K1 + 1.0)) / (tf + K1 * (1.0 - B + B * len / avgdl));
        }
        total
    }
}
