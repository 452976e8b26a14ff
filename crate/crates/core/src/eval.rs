//! Answer metrics, LLM judging, retrieval recall, NDCG, difficulty
//! estimation, success economy and planner hop accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PipelineResult;
use crate::corpus::QuestionRecord;
use crate::graph::GraphIndex;
use crate::llm::{CompletionRequest, Gateway, LlmError, Scope, Stage};
use crate::prompts;
use crate::retrieval::{simulated_agentic_retrieve, single_pass_retrieve, RetrievalConfig, RetrievalError};

pub const DEFAULT_DIFFICULTY_SAMPLES: usize = 10;
pub const DEFAULT_DIFFICULTY_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("difficulty missing for correct answers: {}", .0.join(", "))]
    MissingDifficulty(Vec<String>),
    #[error("gold answers are empty for {0}")]
    NoGold(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, strip punctuation, drop articles and split on whitespace.
pub fn normalize(answer: &str) -> Vec<String> {
    let cleaned: String = answer.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    cleaned.split_whitespace().filter(|t| !ARTICLES.contains(t)).map(str::to_string).collect()
}

pub fn exact_match(prediction: &str, gold_answers: &[String]) -> bool {
    let p = normalize(prediction);
    gold_answers.iter().any(|g| normalize(g) == p)
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best bag-of-tokens F1 over the gold aliases.
pub fn token_f1(prediction: &str, gold_answers: &[String]) -> f64 {
    let p = normalize(prediction);
    gold_answers.iter().map(|g| f1_tokens(&p, &normalize(g))).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    Lr1,
    Lr2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    Partial,
    No,
    Unparsed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::Partial => "partial",
            Verdict::No => "no",
            Verdict::Unparsed => "unparsed",
        }
    }
}

/// Leading Yes / Yes, partially / No token, case-insensitive.
pub fn parse_verdict(raw: &str) -> Option<Verdict> {
    let s = raw.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let word_end = |rest: &str| rest.chars().next().is_none_or(|c| !c.is_alphanumeric());
    if let Some(rest) = s.strip_prefix("yes") {
        if !word_end(rest) {
            return None;
        }
        let tail = rest.trim_start_matches([',', ' ', '-', '"', '\'']);
        if tail.starts_with("partially") {
            return Some(Verdict::Partial);
        }
        return Some(Verdict::Yes);
    }
    match s.strip_prefix("no") {
        Some(rest) if word_end(rest) => Some(Verdict::No),
        _ => None,
    }
}

pub fn judge_prompt(question: &str, prediction: &str, gold_answers: &[String], mode: JudgeMode) -> String {
    let template = match mode {
        JudgeMode::Lr1 => prompts::JUDGE_LR1,
        JudgeMode::Lr2 => prompts::JUDGE_LR2,
    };
    let truths = gold_answers.join(" | ");
    prompts::render(template, &[("question", question), ("prediction", prediction), ("ground_truths", &truths)])
}

/// Ask the judge once, re-prompt once on an unparsable reply.
pub fn judge(
    gateway: &Gateway,
    question_id: &str,
    question: &str,
    prediction: &str,
    gold_answers: &[String],
    mode: JudgeMode,
) -> Result<Verdict, EvalError> {
    let user = judge_prompt(question, prediction, gold_answers, mode);
    let scope = || Scope::Question(format!("{question_id}#judge"));
    let first = gateway.complete(CompletionRequest::new(Stage::Judge, scope(), "", user.clone()))?;
    if let Some(v) = parse_verdict(&first.text) {
        return Ok(v);
    }
    let again = format!("{user}{}", prompts::reprompt_note("expected Yes, Yes, partially, or No"));
    let second = gateway.complete(CompletionRequest::new(Stage::Judge, scope(), "", again))?;
    Ok(parse_verdict(&second.text).unwrap_or(Verdict::Unparsed))
}

/// Fraction of `gold` present anywhere in `retrieved`. Empty gold gives 0.
pub fn recall(retrieved: &[String], gold: &BTreeSet<String>) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hit = retrieved.iter().filter(|p| gold.contains(*p)).collect::<BTreeSet<_>>().len();
    hit as f64 / gold.len() as f64
}

pub fn recall_at_k(retrieved: &[String], gold: &BTreeSet<String>, k: usize) -> f64 {
    recall(&retrieved[..k.min(retrieved.len())], gold)
}

/// NDCG over the first five ranks with binary gain. Repeated ids count once.
pub fn ndcg_at_5(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut seen = BTreeSet::new();
    let mut dcg = 0.0;
    for (i, id) in ranking.iter().take(5).enumerate() {
        if relevant.contains(id) && seen.insert(id) {
            dcg += discount(i + 1);
        }
    }
    let ideal: f64 = (1..=relevant.len().min(5)).map(discount).sum();
    dcg / ideal
}

/// Smoothed closed-book success rate.
pub fn smoothed_rate(correct: usize, n: usize) -> f64 {
    (correct as f64 + 0.5) / (n as f64 + 1.0)
}

/// Difficulty weight in bits.
pub fn surprisal(r: f64) -> f64 {
    -r.log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difficulty {
    pub question_id: String,
    pub requested: usize,
    /// Samples that produced an answer (floored at 1 for smoothing).
    pub samples: usize,
    pub failed: usize,
    pub correct: usize,
    pub r: f64,
    pub w: f64,
}

/// Closed-book sampling of the bare model: `n` answers at `temperature`,
/// each failed sample retried once and otherwise dropped.
pub fn estimate_difficulty(
    gateway: &Gateway,
    question_id: &str,
    question: &str,
    gold_answers: &[String],
    n: usize,
    temperature: f64,
) -> Result<Difficulty, EvalError> {
    if gold_answers.is_empty() {
        return Err(EvalError::NoGold(question_id.to_string()));
    }
    let user = prompts::render(prompts::CLOSED_BOOK, &[("question", question)]);
    let mut correct = 0;
    let mut answered = 0;
    let mut failed = 0;
    for _ in 0..n {
        let mut outcome = None;
        for _ in 0..2 {
            let mut req = CompletionRequest::new(
                Stage::Difficulty,
                Scope::Question(format!("{question_id}#difficulty")),
                "",
                user.clone(),
            );
            req.temperature = Some(temperature);
            if let Ok(resp) = gateway.complete(req) {
                outcome = Some(resp.text);
                break;
            }
        }
        match outcome {
            Some(text) => {
                answered += 1;
                if exact_match(text.lines().next().unwrap_or(""), gold_answers) {
                    correct += 1;
                }
            }
            None => failed += 1,
        }
    }
    let samples = answered.max(1);
    let r = smoothed_rate(correct, samples);
    Ok(Difficulty { question_id: question_id.to_string(), requested: n, samples, failed, correct, r, w: surprisal(r) })
}

/// Everything scored for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub prediction: String,
    pub gold_answers: Vec<String>,
    pub em: u8,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_lr1: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_lr2: Option<Verdict>,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
    /// Passage ids retrieved by each sub-agent, in order.
    #[serde(default)]
    pub retrieved_passage_ids: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planned_steps: Option<usize>,
}

impl EvalRecord {
    pub fn new(question_id: &str, prediction: &str, gold_answers: &[String], tokens: u64) -> Self {
        Self {
            question_id: question_id.to_string(),
            prediction: prediction.to_string(),
            gold_answers: gold_answers.to_vec(),
            em: exact_match(prediction, gold_answers) as u8,
            f1: token_f1(prediction, gold_answers),
            judge_lr1: None,
            judge_lr2: None,
            tokens,
            difficulty: None,
            retrieved_passage_ids: Vec::new(),
            hop_count: None,
            planned_steps: None,
        }
    }

    /// Score a pipeline trace against its gold record.
    pub fn from_trace(result: &PipelineResult, gold: &QuestionRecord) -> Self {
        let mut r = Self::new(&gold.question_id, &result.final_answer, &gold.gold_answers, result.tokens.total_tokens);
        r.retrieved_passage_ids = result
            .traces
            .iter()
            .map(|t| {
                let mut seen = BTreeSet::new();
                t.iterations
                    .iter()
                    .flat_map(|it| it.passages.iter().map(|p| p.passage_id.clone()))
                    .filter(|p| seen.insert(p.clone()))
                    .collect()
            })
            .collect();
        r.hop_count = gold.hop_count;
        r.planned_steps = result.plan.as_ref().map(|p| p.truncated_from.unwrap_or(p.sub_questions.len()));
        r
    }

    pub fn weight(&self) -> Option<f64> {
        self.difficulty.map(surprisal)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub judged: usize,
    pub unparsed: usize,
    /// Strict Yes rate over parsed verdicts.
    pub yes_rate: f64,
    /// Yes plus partial over parsed verdicts.
    pub yes_or_partial_rate: f64,
}

fn judge_summary(verdicts: impl Iterator<Item = Verdict>) -> Option<JudgeSummary> {
    let (mut judged, mut unparsed, mut yes, mut partial) = (0, 0, 0, 0);
    for v in verdicts {
        match v {
            Verdict::Unparsed => unparsed += 1,
            Verdict::Yes => yes += 1,
            Verdict::Partial => partial += 1,
            Verdict::No => {}
        }
        judged += 1;
    }
    if judged == 0 {
        return None;
    }
    let parsed = (judged - unparsed).max(1) as f64;
    Some(JudgeSummary {
        judged,
        unparsed,
        yes_rate: yes as f64 / parsed,
        yes_or_partial_rate: (yes + partial) as f64 / parsed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub questions: usize,
    pub em: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_lr1: Option<JudgeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_lr2: Option<JudgeSummary>,
    pub total_tokens: u64,
    /// Traces or golds without a counterpart.
    pub excluded: Vec<String>,
}

pub fn summarize_qa(records: &[EvalRecord], excluded: Vec<String>) -> QaSummary {
    let n = records.len().max(1) as f64;
    QaSummary {
        questions: records.len(),
        em: records.iter().map(|r| r.em as f64).sum::<f64>() / n,
        f1: records.iter().map(|r| r.f1).sum::<f64>() / n,
        judge_lr1: judge_summary(records.iter().filter_map(|r| r.judge_lr1)),
        judge_lr2: judge_summary(records.iter().filter_map(|r| r.judge_lr2)),
        total_tokens: records.iter().map(|r| r.tokens).sum(),
        excluded,
    }
}

/// Per-question CSV: `question_id,em,f1,judge_lr1,judge_lr2,tokens,r,w`.
pub fn write_records_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["question_id", "em", "f1", "judge_lr1", "judge_lr2", "tokens", "r", "w"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.question_id.clone(),
            r.em.to_string(),
            r.f1.to_string(),
            r.judge_lr1.map(|v| v.as_str().to_string()).unwrap_or_default(),
            r.judge_lr2.map(|v| v.as_str().to_string()).unwrap_or_default(),
            r.tokens.to_string(),
            opt(r.difficulty),
            opt(r.weight()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomyRow {
    pub question_id: String,
    pub tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    pub em: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessEconomyReport {
    /// Tokens per weighted correct answer; absent when nothing is correct.
    pub c_w: Option<f64>,
    pub undefined: bool,
    pub total_tokens: u64,
    pub weighted_correct: f64,
    pub questions: Vec<EconomyRow>,
}

/// `C_w = Σ T_i / Σ w_i·[EM_i = 1]` with `w_i = -log2 r_i`.
pub fn success_economy(records: &[EvalRecord]) -> Result<SuccessEconomyReport, EvalError> {
    let missing: Vec<String> =
        records.iter().filter(|r| r.em == 1 && r.difficulty.is_none()).map(|r| r.question_id.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingDifficulty(missing));
    }
    let total_tokens: u64 = records.iter().map(|r| r.tokens).sum();
    let mut weighted_correct = 0.0;
    let mut any_correct = false;
    let questions = records
        .iter()
        .map(|r| {
            let w = r.weight();
            if r.em == 1 {
                any_correct = true;
                weighted_correct += w.unwrap_or(0.0);
            }
            EconomyRow { question_id: r.question_id.clone(), tokens: r.tokens, r: r.difficulty, w, em: r.em }
        })
        .collect();
    let c_w = (any_correct && weighted_correct > 0.0).then(|| total_tokens as f64 / weighted_correct);
    Ok(SuccessEconomyReport { c_w, undefined: c_w.is_none(), total_tokens, weighted_correct, questions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub planned: usize,
    pub hop_count: u32,
    pub em: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub questions: usize,
    pub plan_accuracy: f64,
    /// Mean of planned minus true hop count.
    pub avg_deviation: f64,
    pub em_match: Option<f64>,
    pub em_no_match: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanAccuracyReport {
    pub overall: Option<PlanStats>,
    pub per_hop: BTreeMap<u32, PlanStats>,
}

fn plan_stats(rows: &[PlanRow]) -> Option<PlanStats> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let matched = |r: &&PlanRow| r.planned == r.hop_count as usize;
    Some(PlanStats {
        questions: rows.len(),
        plan_accuracy: rows.iter().filter(matched).count() as f64 / n,
        avg_deviation: rows.iter().map(|r| r.planned as f64 - r.hop_count as f64).sum::<f64>() / n,
        em_match: mean(rows.iter().filter(matched).map(|r| r.em as f64).collect()),
        em_no_match: mean(rows.iter().filter(|r| !matched(r)).map(|r| r.em as f64).collect()),
    })
}

pub fn plan_accuracy(rows: &[PlanRow]) -> PlanAccuracyReport {
    let mut by_hop: BTreeMap<u32, Vec<PlanRow>> = BTreeMap::new();
    for r in rows {
        by_hop.entry(r.hop_count).or_default().push(*r);
    }
    PlanAccuracyReport {
        overall: plan_stats(rows),
        per_hop: by_hop.iter().filter_map(|(h, rs)| plan_stats(rs).map(|s| (*h, s))).collect(),
    }
}

/// Rows for [`plan_accuracy`]; records without a plan or hop count are skipped.
pub fn plan_rows(records: &[EvalRecord]) -> Vec<PlanRow> {
    records
        .iter()
        .filter_map(|r| Some(PlanRow { planned: r.planned_steps?, hop_count: r.hop_count?, em: r.em }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalEvalMode {
    SinglePass,
    SimulatedAgentic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub question_id: String,
    pub retrieved: Vec<String>,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub mode: RetrievalEvalMode,
    pub k: usize,
    pub mean_recall: f64,
    pub rows: Vec<RetrievalRow>,
    /// Questions without gold passages (or gold sub-questions, when needed).
    pub skipped: Vec<String>,
}

/// Recall of `k` passages per issued query: the question itself, or each
/// gold sub-question with the union pooled.
pub fn evaluate_retrieval(
    index: &GraphIndex,
    gateway: &Gateway,
    questions: &[QuestionRecord],
    mode: RetrievalEvalMode,
    k: usize,
    config: &RetrievalConfig,
) -> Result<RetrievalReport, EvalError> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for q in questions {
        let gold: BTreeSet<String> = q.gold_passage_ids.iter().cloned().collect();
        if gold.is_empty() {
            skipped.push(q.question_id.clone());
            continue;
        }
        let retrieved = match (mode, &q.gold_sub_questions) {
            (RetrievalEvalMode::SinglePass, _) => single_pass_retrieve(index, gateway, &q.question, k, config)?,
            (RetrievalEvalMode::SimulatedAgentic, Some(subs)) if !subs.is_empty() => {
                simulated_agentic_retrieve(index, gateway, subs, k, config)?
            }
            _ => {
                skipped.push(q.question_id.clone());
                continue;
            }
        };
        rows.push(RetrievalRow { question_id: q.question_id.clone(), recall: recall(&retrieved, &gold), retrieved });
    }
    let mean_recall =
        if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.recall).sum::<f64>() / rows.len() as f64 };
    Ok(RetrievalReport { mode, k, mean_recall, rows, skipped })
}
