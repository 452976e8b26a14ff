//! Planner, per-hop sub-agents and synthesis.

pub mod parse;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, GraphIndex, PropId, UnitKind};
use crate::llm::mock::strip_citations;
use crate::llm::{CallId, CompletionRequest, Gateway, LlmError, Scope, Stage};
use crate::prompts;
use crate::retrieval::{
    aggregate_entities, dense_passage_search, entity_pool, search_propositions, vote_passages, EntityScore,
    PassageScore, RankedProposition, RetrievalConfig, RetrievalError, RetrievalMode, SearchStatement,
};

pub use parse::{Action, EvidenceAction, Plan, SubQuestion, MAX_SUB_QUESTIONS};

pub const DEFAULT_MAX_ITERATIONS: usize = 2;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("synthesis needs at least one answered sub-question")]
    EmptyHistory,
    #[error("no candidates to select from")]
    NoCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub retrieval: RetrievalConfig,
    pub max_iterations: usize,
    pub max_sub_questions: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_sub_questions: MAX_SUB_QUESTIONS,
        }
    }
}

/// One answered step of the research history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: EntityId,
    pub name: String,
    pub entity_type: String,
    pub score: f64,
}

/// Compact per-sub-agent memory; dropped when the sub-agent ends.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationState {
    pub question: String,
    pub sub_question: String,
    pub statement: Option<SearchStatement>,
    pub history: Vec<HistoryEntry>,
    pub node_findings: Vec<String>,
    pub visited_entity_ids: BTreeSet<EntityId>,
    pub visited_prop_ids: BTreeSet<PropId>,
    pub visited_passage_ids: BTreeSet<String>,
    pub iteration: usize,
    pub max_iterations: usize,
}

/// A prompt/response pair as sent through the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub call_id: CallId,
    pub stage: Stage,
    /// 1-based sub-agent index, absent for planning and synthesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_agent: Option<usize>,
    pub system: String,
    pub user: String,
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub statement: String,
    pub keywords: Vec<String>,
    pub retrieved: Vec<RankedProposition>,
    pub candidates: Vec<Candidate>,
    pub selected: Vec<EntityId>,
    pub pool: Vec<RankedProposition>,
    pub passages: Vec<PassageScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<EvidenceAction>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAgentTrace {
    pub index: usize,
    pub sub_question: String,
    pub iterations: Vec<IterationTrace>,
    pub final_answer: String,
    /// False when the loop ended without DONE.
    pub terminal: bool,
    pub llm_call_ids: Vec<CallId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub calls: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
}

/// Selected entity ids, an optional fallback flag and the calls made.
pub type Selection = (Vec<EntityId>, Option<String>, Vec<CallId>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub question_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
    pub traces: Vec<SubAgentTrace>,
    pub history: Vec<HistoryEntry>,
    pub final_answer: String,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub tokens: TokenTotals,
    pub calls: Vec<LlmExchange>,
}

impl PipelineResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trace serializes");
        s.push('\n');
        s
    }
}

/// Records every exchange of one question.
pub struct Session<'g> {
    gateway: &'g Gateway,
    scope: Scope,
    sub_agent: Option<usize>,
    calls: Vec<LlmExchange>,
}

impl<'g> Session<'g> {
    pub fn new(gateway: &'g Gateway, question_id: &str) -> Self {
        Self { gateway, scope: Scope::Question(question_id.to_string()), sub_agent: None, calls: Vec::new() }
    }

    pub fn calls(&self) -> &[LlmExchange] {
        &self.calls
    }

    pub fn into_calls(self) -> Vec<LlmExchange> {
        self.calls
    }

    fn call(&mut self, stage: Stage, system: &str, user: &str) -> Result<(String, CallId), LlmError> {
        let resp = self.gateway.complete(CompletionRequest::new(stage, self.scope.clone(), system, user))?;
        self.calls.push(LlmExchange {
            call_id: resp.call_id.clone(),
            stage,
            sub_agent: self.sub_agent,
            system: system.to_string(),
            user: user.to_string(),
            response: resp.text.clone(),
            input_tokens: resp.input_tokens,
            output_tokens: resp.output_tokens,
        });
        Ok((resp.text, resp.call_id))
    }

    /// Call, parse, and re-prompt once on a parse failure. Returns the parsed
    /// value (or the last failure reason) and the call ids used.
    fn call_parsed<T>(
        &mut self,
        stage: Stage,
        system: &str,
        user: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(Result<T, String>, Vec<CallId>), LlmError> {
        let (text, id) = self.call(stage, system, user)?;
        let mut ids = vec![id];
        match parse(&text) {
            Ok(v) => Ok((Ok(v), ids)),
            Err(reason) => {
                let retry = format!("{user}{}", prompts::reprompt_note(&reason));
                let (text, id) = self.call(stage, system, &retry)?;
                ids.push(id);
                Ok((parse(&text), ids))
            }
        }
    }
}

fn format_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return "None".into();
    }
    history
        .iter()
        .map(|h| format!("Step {i} Question: {}\nStep {i} Answer: {}", h.question, h.answer, i = h.index))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_ids<T: std::fmt::Display>(ids: impl IntoIterator<Item = T>) -> String {
    format!("[{}]", ids.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "))
}

fn format_findings(findings: &[String]) -> String {
    if findings.is_empty() {
        "None".into()
    } else {
        findings.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n")
    }
}

pub fn format_candidates(candidates: &[Candidate]) -> String {
    candidates
        .iter()
        .map(|c| {
            format!("- node_id: {} | name: {} | type: {} | score: {:.4}", c.entity_id, c.name, c.entity_type, c.score)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn selection_context(state: &ObservationState) -> String {
    format!(
        "Original question: {}\nResearch history:\n{}\nNode findings so far:\n{}\nAlready visited node IDs: {}",
        state.question,
        format_history(&state.history),
        format_findings(&state.node_findings),
        format_ids(&state.visited_entity_ids)
    )
}

fn state_block(state: &ObservationState) -> String {
    format!(
        "Original question: {}\nSub-question: {}\nCurrent search statement: {}\nIteration: {} of {}\nResearch history:\n{}\nVisited nodes:\n{}\nAlready visited node IDs: {}",
        state.question,
        state.sub_question,
        state.statement.as_ref().map_or("", |s| s.statement.as_str()),
        state.iteration,
        state.max_iterations,
        format_history(&state.history),
        format_findings(&state.node_findings),
        format_ids(&state.visited_entity_ids)
    )
}

/// Retrieved passages and their pooled propositions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    pub passages: Vec<PassageScore>,
    pub propositions: Vec<RankedProposition>,
}

fn format_evidence(index: &GraphIndex, evidence: &Evidence) -> String {
    if evidence.passages.is_empty() {
        return "No new evidence was retrieved.".into();
    }
    let mut out = Vec::new();
    for p in &evidence.passages {
        let Some(passage) = index.passage(&p.passage_id) else { continue };
        let mut block = format!(
            "Passage [{}] {} (score {:.4}):\n{}\nPropositions:",
            p.passage_id, passage.title, p.score, passage.text
        );
        for r in &evidence.propositions {
            if let Ok(node) = index.proposition(r.prop_id) {
                if node.passage_id == p.passage_id {
                    block.push_str(&format!("\n[ID: {}] {}", node.prop_id, node.text));
                }
            }
        }
        out.push(block);
    }
    out.join("\n\n")
}

/// The agentic pipeline over one immutable index.
pub struct Agent<'a> {
    pub index: &'a GraphIndex,
    pub gateway: &'a Gateway,
    pub config: AgentConfig,
}

impl<'a> Agent<'a> {
    pub fn new(index: &'a GraphIndex, gateway: &'a Gateway, config: AgentConfig) -> Self {
        Self { index, gateway, config }
    }

    /// Decompose `question`. `Ok(Err(reason))` records a plan that failed to
    /// parse after one re-prompt.
    pub fn plan(&self, session: &mut Session<'_>, question: &str) -> Result<Result<Plan, String>, AgentError> {
        if question.trim().is_empty() {
            return Err(AgentError::EmptyQuestion);
        }
        let user = format!("Question: \"{}\"", question.trim());
        let max = self.config.max_sub_questions;
        let (plan, _) =
            session.call_parsed(Stage::Planning, prompts::PLANNER, &user, |raw| parse::parse_plan_with(raw, max))?;
        Ok(plan)
    }

    /// Rewrite a sub-question into a search statement; `Ok(None)` when the
    /// model never produced a statement.
    pub fn rewrite_query(
        &self,
        session: &mut Session<'_>,
        question: &str,
        plan: &Plan,
        history: &[HistoryEntry],
        sub_question: &str,
    ) -> Result<(Option<SearchStatement>, Vec<CallId>), AgentError> {
        let user = prompts::render(
            prompts::QUERY_REWRITE,
            &[
                ("original_question", question),
                ("rational_plan", &plan.rational_plan),
                ("context_history", &format_history(history)),
                ("current_sub_question", sub_question),
            ],
        );
        let (parsed, ids) = session.call_parsed(Stage::Rewriting, "", &user, parse::parse_rewrite)?;
        match parsed {
            Ok((statement, keywords)) => Ok((Some(SearchStatement::embed(self.gateway, &statement, keywords)?), ids)),
            Err(_) => Ok((None, ids)),
        }
    }

    /// Choose entities to expand.
    pub fn select_entities(
        &self,
        session: &mut Session<'_>,
        state: &ObservationState,
        candidates: &[Candidate],
    ) -> Result<Selection, AgentError> {
        let offered: Vec<&Candidate> =
            candidates.iter().filter(|c| !state.visited_entity_ids.contains(&c.entity_id)).collect();
        match offered.as_slice() {
            [] => return Err(AgentError::NoCandidates),
            [only] => return Ok((vec![only.entity_id], None, Vec::new())),
            _ => {}
        }
        let offered: Vec<Candidate> = offered.into_iter().cloned().collect();
        let stmt = state.statement.as_ref().map_or("", |s| s.statement.as_str());
        let user = prompts::render(
            prompts::ENTITY_SELECTION,
            &[
                ("state_context", &selection_context(state)),
                ("sub_question", &state.sub_question),
                ("search_statement", stmt),
                ("candidates", &format_candidates(&offered)),
            ],
        );
        let (parsed, ids) = session.call_parsed(Stage::Selection, "", &user, parse::parse_selection)?;
        let allowed: BTreeSet<EntityId> = offered.iter().map(|c| c.entity_id).collect();
        let mut chosen = Vec::new();
        let mut dropped = Vec::new();
        for id in parsed.as_deref().unwrap_or(&[]) {
            if allowed.contains(id) {
                if !chosen.contains(id) {
                    chosen.push(*id);
                }
            } else {
                dropped.push(*id);
            }
        }
        if chosen.is_empty() {
            let reason = match parsed {
                Err(r) => format!("selection unparsable ({r}); fell back to top candidate"),
                Ok(_) => format!("no valid selection (dropped {}); fell back to top candidate", format_ids(&dropped)),
            };
            return Ok((vec![offered[0].entity_id], Some(reason), ids));
        }
        let flag = (!dropped.is_empty()).then(|| format!("dropped unknown node ids {}", format_ids(&dropped)));
        Ok((chosen, flag, ids))
    }

    /// Judge the evidence. An unparsable reply degrades to QUERY_AGAIN with
    /// the current statement, flagged.
    pub fn evaluate_evidence(
        &self,
        session: &mut Session<'_>,
        state: &ObservationState,
        evidence: &Evidence,
    ) -> Result<(EvidenceAction, Option<String>, Vec<CallId>), AgentError> {
        let user = prompts::render(
            prompts::EVIDENCE_EVALUATION,
            &[("state_block", &state_block(state)), ("new_evidence", &format_evidence(self.index, evidence))],
        );
        let (parsed, ids) = session.call_parsed(Stage::Evaluation, "", &user, parse::parse_evaluation)?;
        Ok(match parsed {
            Ok(a) => (a, None, ids),
            Err(reason) => {
                let stmt = state.statement.as_ref();
                (
                    EvidenceAction {
                        action: Action::QueryAgain,
                        answer: String::new(),
                        supporting_prop_ids: Vec::new(),
                        node_findings: String::new(),
                        new_search_statement: stmt.map(|s| s.statement.clone()),
                        new_keywords: stmt.map(|s| s.keywords.clone()),
                        reasoning_frontier: String::new(),
                    },
                    Some(format!("evaluation unparsable ({reason}); continuing with the same statement")),
                    ids,
                )
            }
        })
    }

    fn candidates(&self, scores: &[EntityScore]) -> Vec<Candidate> {
        scores
            .iter()
            .filter_map(|s| {
                let e = self.index.entity(s.entity_id).ok()?;
                Some(Candidate {
                    entity_id: s.entity_id,
                    name: e.canonical_name.clone(),
                    entity_type: e.type_labels.join(" / "),
                    score: s.score,
                })
            })
            .collect()
    }

    /// Run the traversal loop for sub-question `index` (1-based).
    pub fn run_subagent(
        &self,
        session: &mut Session<'_>,
        question: &str,
        plan: &Plan,
        history: &[HistoryEntry],
        sub_question: &SubQuestion,
    ) -> Result<SubAgentTrace, AgentError> {
        session.sub_agent = Some(sub_question.index);
        let rc = self.config.retrieval;
        rc.validate()?;
        let mut trace = SubAgentTrace {
            index: sub_question.index,
            sub_question: sub_question.text.clone(),
            iterations: Vec::new(),
            final_answer: String::new(),
            terminal: false,
            llm_call_ids: Vec::new(),
            flags: Vec::new(),
        };
        let mut state = ObservationState {
            question: question.to_string(),
            sub_question: sub_question.text.clone(),
            history: history.to_vec(),
            max_iterations: self.config.max_iterations,
            ..Default::default()
        };
        let mut partial = String::new();
        for iteration in 1..=self.config.max_iterations.max(1) {
            state.iteration = iteration;
            if iteration == 1 {
                let (stmt, ids) = self.rewrite_query(session, question, plan, history, &sub_question.text)?;
                trace.llm_call_ids.extend(ids);
                match stmt {
                    Some(s) => state.statement = Some(s),
                    None => {
                        trace.flags.push("query rewrite produced no statement; sub-agent aborted".into());
                        break;
                    }
                }
            }
            let stmt = state.statement.clone().expect("statement set before retrieval");
            let mut it = IterationTrace {
                iteration,
                statement: stmt.statement.clone(),
                keywords: stmt.keywords.clone(),
                retrieved: Vec::new(),
                candidates: Vec::new(),
                selected: Vec::new(),
                pool: Vec::new(),
                passages: Vec::new(),
                action: None,
                flags: Vec::new(),
            };

            let pool_ids: BTreeSet<PropId>;
            let evidence = if rc.mode == RetrievalMode::DprBypass {
                let passages = dense_passage_search(self.index, &stmt, rc.d_passages, &state.visited_passage_ids)?;
                pool_ids = passages
                    .iter()
                    .flat_map(|p| self.index.props_of_passage(&p.passage_id))
                    .filter(|p| !state.visited_prop_ids.contains(p))
                    .collect();
                let (_, ranked) = vote_passages(self.index, &stmt, &pool_ids, rc.d_passages, rc.weighting)?;
                Evidence { passages, propositions: ranked }
            } else {
                let ranked = search_propositions(self.index, &stmt, rc.lambda, rc.m, &state.visited_prop_ids)?;
                it.retrieved = ranked.clone();
                if self.index.unit_kind() == UnitKind::Sentence {
                    pool_ids = ranked.iter().map(|r| r.prop_id).collect();
                } else {
                    let scores = aggregate_entities(self.index, &ranked, rc.k_entities, &state.visited_entity_ids)?;
                    it.candidates = self.candidates(&scores);
                    if it.candidates.is_empty() {
                        it.flags.push("no candidate entities".into());
                        trace.iterations.push(it);
                        trace.flags.push("retrieval exhausted before DONE".into());
                        break;
                    }
                    it.selected = if rc.mode == RetrievalMode::NoEntitySelection {
                        it.candidates.iter().map(|c| c.entity_id).collect()
                    } else {
                        let (sel, flag, ids) = self.select_entities(session, &state, &it.candidates)?;
                        trace.llm_call_ids.extend(ids);
                        it.flags.extend(flag);
                        sel
                    };
                    pool_ids =
                        entity_pool(self.index, &it.selected.iter().copied().collect(), &state.visited_prop_ids)?;
                }
                let (passages, ranked_pool) = vote_passages(self.index, &stmt, &pool_ids, rc.d_passages, rc.weighting)?;
                Evidence { passages, propositions: ranked_pool }
            };
            it.pool = evidence.propositions.clone();
            it.passages = evidence.passages.clone();

            let (action, flag, ids) = self.evaluate_evidence(session, &state, &evidence)?;
            trace.llm_call_ids.extend(ids);
            it.flags.extend(flag);

            state.visited_entity_ids.extend(it.selected.iter().copied());
            state.visited_prop_ids.extend(pool_ids.iter().copied());
            state.visited_passage_ids.extend(evidence.passages.iter().map(|p| p.passage_id.clone()));
            if !action.node_findings.is_empty() {
                state.node_findings.push(action.node_findings.clone());
            }
            it.action = Some(action.clone());
            trace.iterations.push(it);

            match action.action {
                Action::Done => {
                    trace.final_answer = action.answer;
                    trace.terminal = true;
                    break;
                }
                Action::QueryAgain => {
                    if !action.answer.is_empty() {
                        partial = action.answer;
                    }
                    if iteration < self.config.max_iterations {
                        let text = action.new_search_statement.unwrap_or_else(|| stmt.statement.clone());
                        let keywords = action.new_keywords.unwrap_or_default();
                        state.statement = Some(if text == stmt.statement && keywords == stmt.keywords {
                            stmt.clone()
                        } else {
                            SearchStatement::embed(self.gateway, &text, keywords)?
                        });
                    }
                }
            }
        }
        if !trace.terminal {
            trace.final_answer = partial;
            if trace.iterations.len() == self.config.max_iterations {
                trace.flags.push("max iterations reached without DONE; using best partial answer".into());
            }
        }
        session.sub_agent = None;
        Ok(trace)
    }

    /// Produce the final answer from the research history.
    pub fn synthesize(
        &self,
        session: &mut Session<'_>,
        question: &str,
        history: &[HistoryEntry],
    ) -> Result<(String, String, bool), AgentError> {
        if history.is_empty() {
            return Err(AgentError::EmptyHistory);
        }
        let research = history
            .iter()
            .map(|h| format!("Step #{i} Question: {}\nStep #{i} Answer: {}", h.question, h.answer, i = h.index))
            .collect::<Vec<_>>()
            .join("\n");
        let user = prompts::render(prompts::SYNTHESIS, &[("research", &research), ("original_question", question)]);
        let (text, _) = session.call(Stage::Synthesis, "", &user)?;
        let (answer, flagged) = parse::parse_synthesis(&text);
        Ok((answer, text, flagged))
    }

    /// Plan, run each sub-agent in order, and synthesize.
    pub fn answer_question(&self, question_id: &str, question: &str) -> Result<PipelineResult, AgentError> {
        let mut session = Session::new(self.gateway, question_id);
        let mut result = PipelineResult {
            question_id: question_id.to_string(),
            question: question.to_string(),
            plan: None,
            traces: Vec::new(),
            history: Vec::new(),
            final_answer: String::new(),
            rationale: String::new(),
            failure: None,
            flags: Vec::new(),
            tokens: TokenTotals::default(),
            calls: Vec::new(),
        };
        match self.plan(&mut session, question)? {
            Err(reason) => result.failure = Some(format!("planning failed: {reason}")),
            Ok(plan) => {
                if let Some(n) = plan.truncated_from {
                    result
                        .flags
                        .push(format!("plan had {n} sub-questions; kept the first {}", plan.sub_questions.len()));
                }
                for sq in &plan.sub_questions {
                    let trace = self.run_subagent(&mut session, question, &plan, &result.history, sq)?;
                    result.history.push(HistoryEntry {
                        index: sq.index,
                        question: sq.text.clone(),
                        answer: trace.final_answer.clone(),
                    });
                    result.traces.push(trace);
                }
                let (answer, rationale, flagged) = self.synthesize(&mut session, question, &result.history)?;
                if flagged {
                    result.flags.push("synthesis marker missing; used last line".into());
                }
                result.final_answer = if answer.is_empty() {
                    result.flags.push("synthesis gave no answer; used the last sub-agent answer".into());
                    result.history.last().map(|h| strip_citations(&h.answer)).unwrap_or_default()
                } else {
                    answer
                };
                result.rationale = rationale;
                result.plan = Some(plan);
            }
        }
        result.calls = session.into_calls();
        let input: u64 = result.calls.iter().map(|c| c.input_tokens).sum();
        let output: u64 = result.calls.iter().map(|c| c.output_tokens).sum();
        result.tokens = TokenTotals {
            calls: result.calls.len(),
            input_tokens: input,
            output_tokens: output,
            total_tokens: input + output,
        };
        Ok(result)
    }
}
