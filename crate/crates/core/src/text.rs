//! Tokenization and rule-based sentence splitting shared by the lexical index
//! and the sentence-unit build mode.

/// Lowercase and split on any non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// Minimum number of tokens a sentence unit must carry.
pub const MIN_SENTENCE_TOKENS: usize = 3;

/// Split `text` into sentences at `.`, `!` or `?` followed by whitespace and
/// an uppercase letter.
///
/// Fragments shorter than [`MIN_SENTENCE_TOKENS`] are folded into the
/// preceding sentence (or the following one when they lead the passage), so
/// no text is ever dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut raw = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            let mut saw_ws = false;
            while j < chars.len() && chars[j].1.is_whitespace() {
                saw_ws = true;
                j += 1;
            }
            if saw_ws && j < chars.len() && chars[j].1.is_uppercase() {
                let end = pos + c.len_utf8();
                raw.push(text[start..end].trim().to_string());
                start = chars[j].0;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        raw.push(tail.to_string());
    }

    let mut out: Vec<String> = Vec::new();
    let mut pending: Option<String> = None;
    for sentence in raw.into_iter().filter(|s| !s.is_empty()) {
        let sentence = match pending.take() {
            Some(p) => format!("{p} {sentence}"),
            None => sentence,
        };
        if tokenize(&sentence).len() >= MIN_SENTENCE_TOKENS {
            out.push(sentence);
        } else if let Some(last) = out.last_mut() {
            last.push(' ');
            last.push_str(&sentence);
        } else {
            pending = Some(sentence);
        }
    }
    if let Some(p) = pending {
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits_on_punctuation() {
        assert_eq!(
            tokenize("Palau de la Generalitat, built in 1403!"),
            vec!["palau", "de", "la", "generalitat", "built", "in", "1403"]
        );
        assert!(tokenize(" --- ").is_empty());
    }

    #[test]
    fn sentences_split_only_before_uppercase() {
        let s = split_sentences(
            "Perdiguera is a municipality in Aragon. According to the 2009 census it has 662 inhabitants. It lies near e.g. the river.",
        );
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], "Perdiguera is a municipality in Aragon.");
        assert!(s[2].contains("e.g. the river"));
    }

    #[test]
    fn short_fragments_are_folded() {
        let s = split_sentences("Yes. No. The palace was built in the 15th century. Ok.");
        assert_eq!(s, vec!["Yes. No. The palace was built in the 15th century. Ok."]);
        let s = split_sentences("Martin died in Barcelona. He was king. Hi.");
        assert_eq!(s, vec!["Martin died in Barcelona.", "He was king. Hi."]);
    }
}
