//! Parsers for planner, rewrite, selection, evaluation and synthesis output.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::mock::strip_citations;

/// Upper bound on plan length.
pub const MAX_SUB_QUESTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    /// 1-based.
    pub index: usize,
    pub text: String,
    pub dependencies: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub rational_plan: String,
    pub sub_questions: Vec<SubQuestion>,
    /// Set when the model produced more than [`MAX_SUB_QUESTIONS`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_from: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Done,
    QueryAgain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceAction {
    pub action: Action,
    pub answer: String,
    pub supporting_prop_ids: Vec<u32>,
    pub node_findings: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_search_statement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_keywords: Option<Vec<String>>,
    pub reasoning_frontier: String,
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#(\d+)").expect("static regex"));
static NUMBERED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[*_]*\s*(\d+)\s*[.)]\s*[*_]*\s*(.+?)\s*$").expect("static regex"));
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("static regex"));

fn strip_markup(s: &str) -> &str {
    s.trim().trim_matches(|c: char| c == '*' || c == '_' || c == '`').trim()
}

fn unquote(s: &str) -> String {
    let s = strip_markup(s);
    let s = s.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(s);
    s.trim().to_string()
}

/// `Some(rest)` when `line` starts with `label:` (case-insensitive, markup tolerated).
fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let l = line.trim_start().trim_start_matches(['-', '*', '#', '>', ' ']);
    if l.len() < label.len() || !l[..label.len()].eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = l[label.len()..].trim_start_matches(['*', '_', ' ']);
    rest.strip_prefix(':').map(|r| r.trim_start_matches(['*', '_']).trim())
}

/// Placeholder numbers referenced in `text`.
pub fn placeholders(text: &str) -> BTreeSet<usize> {
    PLACEHOLDER.captures_iter(text).filter_map(|c| c[1].parse().ok()).collect()
}

pub fn parse_plan(raw: &str) -> Result<Plan, String> {
    parse_plan_with(raw, MAX_SUB_QUESTIONS)
}

/// [`parse_plan`] with a custom sub-question cap.
pub fn parse_plan_with(raw: &str, max_sub_questions: usize) -> Result<Plan, String> {
    let max_sub_questions = max_sub_questions.max(1);
    let mut rational = Vec::new();
    let mut in_rational = false;
    let mut items = Vec::new();
    for line in raw.lines() {
        if let Some(rest) = labelled(line, "Rational Plan") {
            in_rational = true;
            if !rest.is_empty() {
                rational.push(rest.to_string());
            }
            continue;
        }
        if labelled(line, "Sub-questions").is_some() || labelled(line, "Subquestions").is_some() {
            in_rational = false;
            continue;
        }
        if let Some(c) = NUMBERED.captures(line) {
            in_rational = false;
            items.push(strip_markup(&c[2]).to_string());
            continue;
        }
        if in_rational && !line.trim().is_empty() {
            rational.push(line.trim().to_string());
        }
    }
    if items.is_empty() {
        return Err("no numbered sub-questions".into());
    }
    let truncated_from = (items.len() > max_sub_questions).then_some(items.len());
    items.truncate(max_sub_questions);
    let mut sub_questions = Vec::new();
    for (i, text) in items.into_iter().enumerate() {
        let index = i + 1;
        let deps = placeholders(&text);
        if let Some(bad) = deps.iter().find(|&&n| n == 0 || n >= index) {
            return Err(format!("sub-question {index} references #{bad}, which is not an earlier step"));
        }
        sub_questions.push(SubQuestion { index, text, dependencies: deps });
    }
    Ok(Plan { rational_plan: rational.join(" "), sub_questions, truncated_from })
}

/// Parse a keyword list written as a JSON array or comma-separated text.
pub fn parse_keywords(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Vec<String>>(raw) {
        return v.into_iter().map(|k| strip_citations(k.trim())).filter(|k| !k.is_empty()).collect();
    }
    raw.trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|k| strip_citations(&unquote(k.trim().trim_matches('\''))))
        .filter(|k| !k.is_empty())
        .collect()
}

/// `(statement, keywords)` from a rewrite reply; citations are stripped.
pub fn parse_rewrite(raw: &str) -> Result<(String, Vec<String>), String> {
    let mut statement = None;
    let mut keywords = Vec::new();
    for line in raw.lines() {
        if let Some(rest) = labelled(line, "Search Statement") {
            statement.get_or_insert_with(|| strip_citations(&unquote(rest)));
        } else if let Some(rest) = labelled(line, "Keywords") {
            keywords = parse_keywords(rest);
        }
    }
    match statement {
        Some(s) if !s.is_empty() => Ok((s, keywords)),
        _ => Err("empty or missing search statement".into()),
    }
}

static NODE_IDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)node_ids?\W{0,6}\[([^\]]*)\]"#).expect("static regex"));

/// Node ids from a selection reply. An empty list parses; no list at all does not.
pub fn parse_selection(raw: &str) -> Result<Vec<u32>, String> {
    let c = NODE_IDS.captures(raw).ok_or("no node_ids list")?;
    Ok(INTEGER.find_iter(&c[1]).filter_map(|m| m.as_str().parse().ok()).collect())
}

const EVAL_KEYS: &[&str] = &[
    "action",
    "answer",
    "supporting_prop_ids",
    "node_findings",
    "new_search_statement",
    "new_query",
    "new_keywords",
    "keywords",
    "reasoning_frontier",
    "reasoning",
];

fn eval_fields(raw: &str) -> BTreeMap<&'static str, String> {
    let body = raw.trim().trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```").trim();
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(body) {
        let mut out = BTreeMap::new();
        for key in EVAL_KEYS {
            if let Some(v) = map.get(*key) {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out.insert(*key, s);
            }
        }
        return out;
    }
    let mut out: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for line in raw.lines() {
        let hit = EVAL_KEYS
            .iter()
            .find_map(|k| labelled(line, k).or_else(|| labelled(line, &k.replace('_', " "))).map(|rest| (*k, rest)));
        match hit {
            Some((k, rest)) => {
                out.entry(k).or_insert_with(|| rest.to_string());
                current = Some(k);
            }
            None => {
                if let (Some(k), false) = (current, line.trim().is_empty()) {
                    let v = out.get_mut(k).expect("current key present");
                    if !v.is_empty() {
                        v.push(' ');
                    }
                    v.push_str(line.trim());
                }
            }
        }
    }
    out
}

pub fn parse_action_token(raw: &str) -> Option<Action> {
    let t: String =
        unquote(raw).chars().map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_uppercase() }).collect();
    match t.trim_matches(|c: char| !c.is_ascii_alphabetic() && c != '_') {
        "DONE" => Some(Action::Done),
        "QUERY_AGAIN" | "QUERYAGAIN" => Some(Action::QueryAgain),
        _ => None,
    }
}

pub fn parse_evaluation(raw: &str) -> Result<EvidenceAction, String> {
    let f = eval_fields(raw);
    let token = f.get("action").ok_or("no action field")?;
    let action = parse_action_token(token).ok_or_else(|| format!("unrecognized action {token:?}"))?;
    let get = |k: &str| f.get(k).map(|v| unquote(v)).unwrap_or_default();
    let supporting = f
        .get("supporting_prop_ids")
        .map(|v| INTEGER.find_iter(v).filter_map(|m| m.as_str().parse().ok()).collect())
        .unwrap_or_default();
    let mut out = EvidenceAction {
        action,
        answer: get("answer"),
        supporting_prop_ids: supporting,
        node_findings: get("node_findings"),
        new_search_statement: None,
        new_keywords: None,
        reasoning_frontier: get("reasoning_frontier"),
    };
    if action == Action::QueryAgain {
        let stmt = f.get("new_search_statement").or_else(|| f.get("new_query")).map(|v| unquote(v)).unwrap_or_default();
        if stmt.is_empty() {
            return Err("QUERY_AGAIN without new_search_statement".into());
        }
        out.new_search_statement = Some(strip_citations(&stmt));
        out.new_keywords =
            Some(f.get("new_keywords").or_else(|| f.get("keywords")).map(|v| parse_keywords(v)).unwrap_or_default());
    }
    Ok(out)
}

/// `(answer, flagged)`: text after the last "So the answer is:" marker, or the
/// last non-empty line when the marker is absent.
pub fn parse_synthesis(raw: &str) -> (String, bool) {
    let clean = |s: &str| {
        strip_citations(s)
            .trim()
            .trim_matches(|c: char| c == '*' || c == '"' || c == '`')
            .trim_end_matches(['.', ',', ';', ':', '!'])
            .trim()
            .to_string()
    };
    const MARKER: &str = "so the answer is:";
    let lower = raw.to_lowercase();
    if let Some(pos) = lower.rfind(MARKER) {
        let tail = &raw[pos + MARKER.len()..];
        let first = tail.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        return (clean(first), false);
    }
    let last = raw.lines().map(str::trim).rfind(|l| !l.is_empty()).unwrap_or("");
    (clean(last.trim_start_matches(['-', ' '])), true)
}
