use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CallId, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call_id: CallId,
    pub stage: Stage,
    /// Question id, or `"indexing"` for build-time calls.
    pub question_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl LedgerEntry {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn is_indexing(&self) -> bool {
        self.question_id == "indexing"
    }
}

/// Append-only record of every completion's usage.
#[derive(Debug, Default)]
pub struct TokenLedger {
    entries: Mutex<Vec<LedgerEntry>>,
    prior_indexing: Mutex<u64>,
}

impl TokenLedger {
    pub fn append(&self, entry: LedgerEntry) {
        self.entries.lock().expect("ledger poisoned").push(entry);
    }

    /// Entries ordered by call id.
    pub fn entries(&self) -> Vec<LedgerEntry> {
        let mut v = self.entries.lock().expect("ledger poisoned").clone();
        v.sort_by(|a, b| a.call_id.cmp(&b.call_id));
        v
    }

    /// Account for indexing tokens spent by an earlier build of a persisted index.
    pub fn record_prior_indexing(&self, tokens: u64) {
        *self.prior_indexing.lock().expect("ledger poisoned") += tokens;
    }

    pub fn indexing_total(&self) -> u64 {
        let own: u64 = self
            .entries
            .lock()
            .expect("ledger poisoned")
            .iter()
            .filter(|e| e.is_indexing())
            .map(LedgerEntry::total)
            .sum();
        own + *self.prior_indexing.lock().expect("ledger poisoned")
    }

    /// Per-question totals `T_i` with indexing amortized evenly over `question_ids`.
    pub fn report(&self, question_ids: &[String]) -> LedgerReport {
        ledger_report(&self.entries(), self.indexing_total(), question_ids)
    }

    /// CSV export: `call_id,stage,question_id,input_tokens,output_tokens`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["call_id", "stage", "question_id", "input_tokens", "output_tokens"])?;
        for e in self.entries() {
            w.write_record([
                e.call_id.to_string(),
                e.stage.to_string(),
                e.question_id.clone(),
                e.input_tokens.to_string(),
                e.output_tokens.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// An exact rational token count `numerator / denominator`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenShare {
    pub numerator: u128,
    pub denominator: u64,
}

impl TokenShare {
    pub fn as_f64(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// Round half up to an integer token count.
    pub fn rounded(self) -> u64 {
        let d = self.denominator as u128;
        ((self.numerator * 2 + d) / (2 * d)) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTokens {
    pub question_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub inference_tokens: u64,
    /// `T_i`: inference tokens plus an even share of indexing.
    pub total: TokenShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub questions: Vec<QuestionTokens>,
    pub indexing_total: u64,
    pub inference_total: u64,
    pub inference_input: u64,
    pub inference_output: u64,
    pub grand_total: u64,
}

/// Amortize `indexing_total` evenly across `question_ids`.
///
/// Shares are kept as exact fractions over `N`; only [`TokenShare::rounded`]
/// rounds, so the shares always sum to `indexing_total + inference_total`.
pub fn ledger_report(entries: &[LedgerEntry], indexing_total: u64, question_ids: &[String]) -> LedgerReport {
    let n = question_ids.len().max(1) as u64;
    let mut per: BTreeMap<&str, (u64, u64)> = question_ids.iter().map(|q| (q.as_str(), (0, 0))).collect();
    for e in entries {
        if let Some(slot) = per.get_mut(e.question_id.as_str()) {
            slot.0 += e.input_tokens;
            slot.1 += e.output_tokens;
        }
    }
    let questions: Vec<QuestionTokens> = question_ids
        .iter()
        .map(|q| {
            let (input, output) = per[q.as_str()];
            let inference = input + output;
            QuestionTokens {
                question_id: q.clone(),
                input_tokens: input,
                output_tokens: output,
                inference_tokens: inference,
                total: TokenShare { numerator: inference as u128 * n as u128 + indexing_total as u128, denominator: n },
            }
        })
        .collect();
    let inference_input = questions.iter().map(|q| q.input_tokens).sum();
    let inference_output = questions.iter().map(|q| q.output_tokens).sum();
    let inference_total = questions.iter().map(|q| q.inference_tokens).sum::<u64>();
    LedgerReport {
        questions,
        indexing_total,
        inference_total,
        inference_input,
        inference_output,
        grand_total: if question_ids.is_empty() { inference_total } else { inference_total + indexing_total },
    }
}
