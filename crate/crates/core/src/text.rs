//! Lexical helpers shared by the embedder, matchers and token accounting.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "at", "for", "by", "with", "from",
    "is", "are", "was", "were", "be", "been", "it", "its", "this", "that", "these", "those",
    "as", "if", "then", "i", "you", "we", "my", "your", "our", "do", "does", "did", "have",
    "has", "had", "how", "what", "which", "so", "there", "can", "please",
];

const NEGATION_MARKERS: &[&str] = &[
    "no", "not", "never", "none", "nope", "without", "cannot", "cant", "dont", "don",
    "doesnt", "doesn", "havent", "haven", "hasnt", "hasn", "didnt", "didn", "isnt", "isn",
    "arent", "aren", "wont", "nor", "t",
];

/// Lowercased alphanumeric runs, in order.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct tokens with stopwords removed.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Distinct tokens, stopwords kept.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Fraction of `required` covered by `evidence`. Empty `required` is fully covered.
pub fn coverage(required: &BTreeSet<String>, evidence: &BTreeSet<String>) -> f64 {
    if required.is_empty() {
        return 1.0;
    }
    required.intersection(evidence).count() as f64 / required.len() as f64
}

pub fn has_negation(text: &str) -> bool {
    tokens(text)
        .iter()
        .any(|t| NEGATION_MARKERS.contains(&t.as_str()))
}

/// Content tokens with negation markers removed.
pub fn affirmative_tokens(text: &str) -> BTreeSet<String> {
    content_tokens(text)
        .into_iter()
        .filter(|t| !NEGATION_MARKERS.contains(&t.as_str()))
        .collect()
}

/// Case- and punctuation-insensitive form of a heading, with any leading
/// step numbering ("1.", "Step 2:") removed.
pub fn normalize_heading(text: &str) -> String {
    let toks = tokens(text);
    let mut rest: &[String] = &toks;
    if rest.first().map(String::as_str) == Some("step")
        && rest.get(1).is_some_and(|t| t.chars().all(|c| c.is_ascii_digit()))
    {
        rest = &rest[2..];
    } else if rest
        .first()
        .is_some_and(|t| t.chars().all(|c| c.is_ascii_digit()))
    {
        rest = &rest[1..];
    }
    rest.join(" ")
}

/// Counts tokens for context-size accounting.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Alphanumeric runs count as one token each; every other non-whitespace
/// character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctCounter;

impl TokenCounter for WordPunctCounter {
    fn count(&self, text: &str) -> usize {
        token_ends(text).count()
    }
}

/// Byte offsets one past the end of each word/punctuation token.
pub fn token_ends(text: &str) -> impl Iterator<Item = usize> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (i, c) = chars.next()?;
        if c.is_whitespace() {
            continue;
        }
        if !c.is_alphanumeric() {
            return Some(i + c.len_utf8());
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, d)) = chars.peek() {
            if !d.is_alphanumeric() {
                break;
            }
            end = j + d.len_utf8();
            chars.next();
        }
        return Some(end);
    })
}

/// The longest prefix of `text` holding at most `n` tokens.
pub fn prefix_tokens(text: &str, n: usize) -> &str {
    if n == 0 {
        return "";
    }
    match token_ends(text).nth(n - 1) {
        Some(end) => &text[..end],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_on_non_alphanumerics() {
        assert_eq!(tokens("Check-the SERVER_load!"), ["check", "the", "server", "load"]);
        assert!(tokens("!!! ...").is_empty());
    }

    #[test]
    fn word_punct_counter() {
        let c = WordPunctCounter;
        assert_eq!(c.count("The quick brown fox jumps over the lazy dog."), 10);
        assert_eq!(c.count("ago(8h)"), 4);
        assert_eq!(c.count("   "), 0);
        assert_eq!(c.count("naïve café"), 2);
    }

    #[test]
    fn prefix_tokens_stops_after_n() {
        assert_eq!(prefix_tokens("a b, c d", 3), "a b,");
        assert_eq!(prefix_tokens("a b", 10), "a b");
        assert_eq!(prefix_tokens("a b", 0), "");
    }

    #[test]
    fn overlap_measures() {
        let a = content_tokens("the data point is always above zero");
        let b = content_tokens("the data point is zero consistently in the past 30 minutes");
        assert_eq!(a.len(), 5);
        assert!((jaccard(&a, &b) - 3.0 / 9.0).abs() < 1e-12);
        assert_eq!(coverage(&BTreeSet::new(), &b), 1.0);
    }

    #[test]
    fn heading_normalization() {
        assert_eq!(
            normalize_heading("1.Check Pull Task Execution From the Cluster."),
            "check pull task execution from the cluster"
        );
        assert_eq!(normalize_heading("Step 2: Restart it"), "restart it");
    }

    #[test]
    fn negations() {
        assert!(has_negation("no, I don't"));
        assert!(has_negation("I can't reach it"));
        assert!(!has_negation("yes I have monitor access"));
    }
}
