//! Prompt templates and `{placeholder}` rendering.

pub const PLANNER: &str = include_str!("../prompts/planner.txt");
pub const QUERY_REWRITE: &str = include_str!("../prompts/query_rewrite.txt");
pub const ENTITY_SELECTION: &str = include_str!("../prompts/entity_selection.txt");
pub const EVIDENCE_EVALUATION: &str = include_str!("../prompts/evidence_evaluation.txt");
pub const SYNTHESIS: &str = include_str!("../prompts/synthesis.txt");
pub const JOINT_EXTRACTION: &str = include_str!("../prompts/joint_extraction.txt");
pub const JUDGE_LR1: &str = include_str!("../prompts/judge_lr1.txt");
pub const JUDGE_LR2: &str = include_str!("../prompts/judge_lr2.txt");
pub const CLOSED_BOOK: &str = include_str!("../prompts/closed_book.txt");

/// Substitute `{name}` placeholders in one pass. Unknown placeholders and
/// braces inside substituted values are left untouched.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Appended to a request whose reply could not be parsed.
pub fn reprompt_note(reason: &str) -> String {
    format!("\n\nYour previous response could not be parsed ({reason}). Respond again, following the required output format exactly.")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_single_pass() {
        let s = render("Q: {question}\nA: {answer} {missing}", &[("question", "{answer}"), ("answer", "42")]);
        assert_eq!(s, "Q: {answer}\nA: 42 {missing}");
    }

    #[test]
    fn templates_carry_their_placeholders() {
        for (t, keys) in [
            (QUERY_REWRITE, &["original_question", "rational_plan", "context_history", "current_sub_question"][..]),
            (ENTITY_SELECTION, &["state_context", "sub_question", "search_statement", "candidates"][..]),
            (EVIDENCE_EVALUATION, &["state_block", "new_evidence"][..]),
            (SYNTHESIS, &["research", "original_question"][..]),
            (JUDGE_LR1, &["question", "prediction", "ground_truths"][..]),
            (JUDGE_LR2, &["question", "prediction", "ground_truths"][..]),
        ] {
            for k in keys {
                assert!(t.contains(&format!("{{{k}}}")), "{k} missing");
            }
        }
        assert!(PLANNER.contains("Maximum 4 sub-questions."));
        assert!(JOINT_EXTRACTION.contains("Easter Hare|Folklore Figure|0 2 5"));
    }
}
