//! The linker sentence grammar: `If <condition>, then <next intent>.[TOKEN]`.
//!
//! Accepted variants: bullet prefixes, `If C, A` without "then", `If C then A`
//! without the comma, and `Otherwise, A` as a catch-all condition. Several
//! branches may share one line; each ends at its bracketed token.

use std::fmt;

use super::{BranchToken, LinkerBranch};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkerLineError {
    /// 1-based line number within the linker block.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct LinkerParseError {
    pub errors: Vec<LinkerLineError>,
}

impl fmt::Display for LinkerParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "line {}: {}", e.line, e.message)?;
        }
        Ok(())
    }
}

/// Parses a linker block where every branch must carry a token (Step units).
pub fn parse_linker_block(text: &str) -> Result<Vec<LinkerBranch>, LinkerParseError> {
    parse(text, true)
}

/// Parses a linker block where tokens are optional (FAQ, Terminology, Appendix).
pub fn parse_linker_lenient(text: &str) -> Result<Vec<LinkerBranch>, LinkerParseError> {
    parse(text, false)
}

fn parse(text: &str, require_token: bool) -> Result<Vec<LinkerBranch>, LinkerParseError> {
    let mut branches = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = strip_bullet(raw_line.trim());
        if line.is_empty() {
            continue;
        }
        for (sentence, token) in split_sentences(line) {
            match parse_clause(sentence) {
                Ok((condition, next_intent)) => {
                    if require_token && token.is_none() {
                        errors.push(LinkerLineError {
                            line: idx + 1,
                            message: "missing linker token".into(),
                        });
                        continue;
                    }
                    let token = token.map(BranchToken::parse).unwrap_or(BranchToken::Absent);
                    branches.push(LinkerBranch { condition, next_intent, token });
                }
                Err(message) => errors.push(LinkerLineError { line: idx + 1, message }),
            }
        }
    }
    if errors.is_empty() {
        Ok(branches)
    } else {
        Err(LinkerParseError { errors })
    }
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start_matches(['-', '*', '+', '•']);
    if t.len() != line.len() {
        return t.trim_start();
    }
    // "1." or "1)" numbering
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.starts_with(char::is_whitespace) {
                return r.trim_start();
            }
        }
    }
    line
}

/// Splits a line into (sentence, token) pairs. A bracketed word ends a
/// sentence when it is followed by the end of the line or by whitespace and
/// the start of another branch.
fn split_sentences(line: &str) -> Vec<(&str, Option<&str>)> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let word_len = line[i + 1..]
                .bytes()
                .take_while(|b| b.is_ascii_alphabetic() || *b == b'_')
                .count();
            let close = i + 1 + word_len;
            if word_len > 0 && bytes.get(close) == Some(&b']') {
                let after = &line[close + 1..];
                if after.trim().is_empty() || (after.starts_with(char::is_whitespace) && starts_branch(after.trim_start())) {
                    out.push((line[start..i].trim(), Some(&line[i + 1..close])));
                    start = close + 1;
                    i = start;
                    continue;
                }
            }
        }
        i += 1;
    }
    let rest = line[start..].trim();
    if !rest.is_empty() {
        out.push((rest, None));
    }
    out
}

fn starts_branch(s: &str) -> bool {
    let lower = s.get(..10).unwrap_or(s).to_ascii_lowercase();
    lower.starts_with("if ") || lower.starts_with("otherwise") || lower.starts_with('-')
}

fn parse_clause(sentence: &str) -> Result<(String, String), String> {
    let s = sentence.trim();
    let lower = s.to_ascii_lowercase();
    let (condition, action) = if let Some(body_lower) = lower.strip_prefix("if ") {
        let body = &s[3..];
        if let Some(i) = body_lower.find(", then ") {
            (&body[..i], &body[i + 7..])
        } else if let Some(i) = body_lower.find(" then ") {
            (&body[..i], &body[i + 6..])
        } else if let Some(i) = body.find(", ") {
            (&body[..i], &body[i + 2..])
        } else {
            return Err(format!("expected \"If <condition>, then <action>\": {s:?}"));
        }
    } else if lower.starts_with("otherwise") {
        let rest = s[9..].trim_start();
        let rest = rest.strip_prefix(',').unwrap_or(rest);
        (&s[..9], rest)
    } else {
        return Err(format!("expected a sentence starting with \"If\" or \"Otherwise\": {s:?}"));
    };
    let condition = condition.trim();
    let action = action.trim();
    let action = action.strip_suffix('.').unwrap_or(action).trim_end();
    if condition.is_empty() {
        return Err("empty condition".into());
    }
    if action.is_empty() {
        return Err("empty next intent".into());
    }
    Ok((condition.to_string(), action.to_string()))
}

/// Renders one branch in sentence form.
pub fn render_branch(branch: &LinkerBranch) -> String {
    let mut s = if branch.condition.eq_ignore_ascii_case("otherwise") {
        format!("{}, {}.", branch.condition, branch.next_intent)
    } else {
        format!("If {}, then {}.", branch.condition, branch.next_intent)
    };
    if let Some(raw) = branch.token.as_raw() {
        s.push('[');
        s.push_str(raw);
        s.push(']');
    }
    s
}

/// Single-string form used in the `#linker#` field: branches joined by a
/// space when all are tagged, one per line otherwise.
pub fn render_linker(branches: &[LinkerBranch]) -> String {
    let sep = if branches.iter().all(|b| b.token != BranchToken::Absent) { " " } else { "\n" };
    branches.iter().map(render_branch).collect::<Vec<_>>().join(sep)
}

/// Markdown bullet list used in a structured document's Linker block.
pub fn render_linker_block(branches: &[LinkerBranch]) -> String {
    branches
        .iter()
        .map(|b| format!("- {}", render_branch(b)))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lu::LinkerToken;

    const ICM_BLOCK: &str = "- If the data point is always above zero, then consider the alert as false alarm.[MITIGATE] \n\n- If the chart sometimes drops to zero one hour ago and the number is low in general, it means the customer traffic in the cluster is low. In this case, observe for a longer period of time.[MITIGATE] \n\n- If the data point is zero consistently in the past 30 minutes, then it is a real problem, and please Check if Other Clusters In the Region are Impacted.[CONTINUE] \n\n- Otherwise, continue to observe since Service A is pulling Service B just fine.[MITIGATE] \n";

    #[test]
    fn parses_the_icm_linker_block() {
        let b = parse_linker_block(ICM_BLOCK).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0].condition, "the data point is always above zero");
        assert_eq!(b[0].next_intent, "consider the alert as false alarm");
        assert_eq!(b[0].token, BranchToken::Tagged(LinkerToken::Mitigate));
        assert_eq!(b[1].condition, "the chart sometimes drops to zero one hour ago and the number is low in general");
        assert_eq!(
            b[1].next_intent,
            "it means the customer traffic in the cluster is low. In this case, observe for a longer period of time"
        );
        assert_eq!(b[2].token, BranchToken::Tagged(LinkerToken::Continue));
        assert!(b[2].next_intent.ends_with("Check if Other Clusters In the Region are Impacted"));
        assert_eq!(b[3].condition, "Otherwise");
        assert_eq!(b[3].next_intent, "continue to observe since Service A is pulling Service B just fine");
    }

    #[test]
    fn parses_concatenated_sentence_form() {
        let one_line = ICM_BLOCK
            .lines()
            .map(|l| l.trim().trim_start_matches("- "))
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        let a = parse_linker_block(&one_line).unwrap();
        let b = parse_linker_block(ICM_BLOCK).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_block_is_empty() {
        assert!(parse_linker_block("").unwrap().is_empty());
        assert!(parse_linker_block("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn missing_token_reports_line_number() {
        let err = parse_linker_block("- If a, then b.[CONTINUE]\n- If c, then d.").unwrap_err();
        assert_eq!(err.errors.len(), 1);
        assert_eq!(err.errors[0].line, 2);
        assert_eq!(err.errors[0].message, "missing linker token");
        let lenient = parse_linker_lenient("- If c, then d.").unwrap();
        assert_eq!(lenient[0].token, BranchToken::Absent);
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = parse_linker_block("Proceed to the next step.[CONTINUE]").unwrap_err();
        assert_eq!(err.errors[0].line, 1);
        assert!(err.errors[0].message.contains("If"));
    }

    #[test]
    fn unknown_token_is_kept_for_validation() {
        let b = parse_linker_block("If a, then b.[FOO]").unwrap();
        assert_eq!(b[0].token, BranchToken::Unrecognized("FOO".into()));
    }

    #[test]
    fn brackets_inside_text_do_not_split() {
        let b = parse_linker_block("If the log shows [ERROR] lines, then restart it.[CONTINUE]").unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].condition, "the log shows [ERROR] lines");
    }

    #[test]
    fn render_parse_round_trip() {
        let branches = parse_linker_block(ICM_BLOCK).unwrap();
        assert_eq!(parse_linker_block(&render_linker(&branches)).unwrap(), branches);
        assert_eq!(parse_linker_block(&render_linker_block(&branches)).unwrap(), branches);
        let s = render_linker(&branches);
        assert_eq!(s.matches("[MITIGATE]").count(), 3);
        assert_eq!(s.matches("[CONTINUE]").count(), 1);
    }
}
