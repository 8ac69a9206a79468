//! Replacing concrete literals in code blocks with `<PLACEHOLDER>`s.

use std::collections::BTreeMap;
use std::ops::Range;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompts;
use crate::gateway::{Gateway, GatewayError};
use crate::markdown::{fenced_blocks, placeholder_regex};

/// A parameter pattern: capture group 1 is the literal to replace.
#[derive(Debug, Clone)]
pub struct ParamPattern {
    pub name: String,
    pub regex: Regex,
}

/// Serializable form of a [`ParamPattern`], for configuration files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub name: String,
    pub pattern: String,
}

#[derive(Debug, Clone)]
pub struct TemplateRules {
    patterns: Vec<ParamPattern>,
}

const DEFAULT_PATTERNS: &[(&str, &str)] = &[
    ("TIME", r"ago\(\s*(\d+(?:\.\d+)?(?:ms|[smhd]))\s*\)"),
    ("TIME", r"datetime\(\s*([^)\s]+)\s*\)"),
    ("TIME", r#"["'](\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?Z?)["']"#),
    ("CLUSTER NAME", r#"(?i)\bcluster(?:name)?\s*(?:==|=~|=)\s*["']([^"'<>]+)["']"#),
    ("CLUSTER NAME", r#"(?i)\bcluster\(\s*["']([^"'<>]+)["']\s*\)"#),
    ("CLUSTER NAME", r"--cluster(?:-name)?[= ]([A-Za-z0-9][A-Za-z0-9._-]*)"),
    ("REGION", r#"(?i)\bregion\s*(?:==|=~|=)\s*["']([^"'<>]+)["']"#),
    ("REGION", r"--region[= ]([A-Za-z0-9][A-Za-z0-9._-]*)"),
    (
        "THRESHOLD",
        r"(?i)\b(?:threshold|limit|cpu\w*|latency\w*|error\w*|percent\w*|load\w*)\s*(?:>=|<=|>|<)\s*(\d+(?:\.\d+)?)\b",
    ),
];

impl Default for TemplateRules {
    fn default() -> Self {
        let patterns = DEFAULT_PATTERNS
            .iter()
            .map(|(n, p)| ParamPattern { name: n.to_string(), regex: Regex::new(p).expect("built-in pattern") })
            .collect();
        Self { patterns }
    }
}

impl TemplateRules {
    pub fn empty() -> Self {
        Self { patterns: Vec::new() }
    }

    /// Adds a pattern; it must have at least one capture group.
    pub fn with_pattern(mut self, name: &str, pattern: &str) -> Result<Self, regex::Error> {
        let regex = Regex::new(pattern)?;
        if regex.captures_len() < 2 {
            return Err(regex::Error::Syntax(format!("pattern for {name} has no capture group")));
        }
        self.patterns.push(ParamPattern { name: name.trim().to_uppercase(), regex });
        Ok(self)
    }

    pub fn with_specs(mut self, specs: &[PatternSpec]) -> Result<Self, regex::Error> {
        for s in specs {
            self = self.with_pattern(&s.name, &s.pattern)?;
        }
        Ok(self)
    }

    pub fn patterns(&self) -> &[ParamPattern] {
        &self.patterns
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeTemplate {
    pub template: String,
    /// Placeholder (with angle brackets) to the literal it replaced.
    pub defaults: BTreeMap<String, String>,
}

/// Placeholder allocation shared across the code blocks of one body.
#[derive(Default)]
struct Allocator {
    by_literal: BTreeMap<String, String>,
    defaults: BTreeMap<String, String>,
}

impl Allocator {
    fn seeded(existing: &BTreeMap<String, String>) -> Self {
        let mut a = Allocator::default();
        for (p, lit) in existing {
            a.by_literal.entry(lit.clone()).or_insert_with(|| p.clone());
            a.defaults.insert(p.clone(), lit.clone());
        }
        a
    }

    fn placeholder_for(&mut self, name: &str, literal: &str) -> String {
        if let Some(p) = self.by_literal.get(literal) {
            return p.clone();
        }
        let mut candidate = format!("<{name}>");
        let mut n = 2;
        while self.defaults.contains_key(&candidate) {
            candidate = format!("<{name} {n}>");
            n += 1;
        }
        self.by_literal.insert(literal.to_string(), candidate.clone());
        self.defaults.insert(candidate.clone(), literal.to_string());
        candidate
    }
}

fn template_with(code: &str, rules: &TemplateRules, alloc: &mut Allocator) -> String {
    // Collect non-overlapping literal spans; earlier patterns take precedence.
    let mut spans: Vec<(Range<usize>, String)> = Vec::new();
    for p in &rules.patterns {
        for caps in p.regex.captures_iter(code) {
            let Some(m) = caps.get(1) else { continue };
            let lit = m.as_str();
            if lit.trim().is_empty() || placeholder_regex().is_match(lit) {
                continue;
            }
            if spans.iter().any(|(r, _)| r.start < m.end() && m.start() < r.end) {
                continue;
            }
            spans.push((m.range(), p.name.clone()));
        }
    }
    spans.sort_by_key(|(r, _)| r.start);
    let mut out = String::with_capacity(code.len());
    let mut last = 0;
    for (r, name) in spans {
        out.push_str(&code[last..r.start]);
        out.push_str(&alloc.placeholder_for(&name, &code[r.clone()]));
        last = r.end;
    }
    out.push_str(&code[last..]);
    out
}

/// Rule-based extraction over a single code block. Repeated literals share
/// one placeholder; a second distinct literal for the same parameter becomes
/// `<NAME 2>`.
pub fn extract_code_template(code: &str, rules: &TemplateRules) -> CodeTemplate {
    let mut alloc = Allocator::default();
    let template = template_with(code, rules, &mut alloc);
    CodeTemplate { template, defaults: alloc.defaults }
}

/// Templates every fenced block in `body`, leaving prose untouched.
/// Placeholders are shared across blocks and with `existing` defaults.
pub fn template_body(body: &str, rules: &TemplateRules, existing: &BTreeMap<String, String>) -> CodeTemplate {
    let mut alloc = Allocator::seeded(existing);
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for b in fenced_blocks(body) {
        out.push_str(&body[last..b.content.start]);
        out.push_str(&template_with(&body[b.content.clone()], rules, &mut alloc));
        last = b.content.end;
    }
    out.push_str(&body[last..]);
    CodeTemplate { template: out, defaults: alloc.defaults }
}

/// Model-assisted extraction with the code-template prompt.
pub fn extract_code_template_gateway(
    code: &str,
    gateway: &Gateway,
    script_key: &str,
) -> Result<CodeTemplate, GatewayError> {
    let prompt = format!(
        "{}{}",
        prompts::fill(prompts::CODE_TEMPLATE, &[("CODE", code), ("EXAMPLE", "")]),
        gateway.script_tag("code", script_key)
    );
    gateway.complete_parsed(&prompt, |reply| {
        let v = crate::gateway::parse_json_reply(reply)?;
        let template = v.get("#CODE_TEMPLATE#")?.as_str()?.to_string();
        let mut defaults = BTreeMap::new();
        match v.get("#DEFAULT_PARAMETERS#") {
            Some(serde_json::Value::Object(m)) => {
                for (k, val) in m {
                    let val = match val {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    let key = if k.starts_with('<') { k.clone() } else { format!("<{k}>") };
                    defaults.insert(key, val);
                }
            }
            None | Some(serde_json::Value::Null) => {}
            Some(_) => return None,
        }
        Some(CodeTemplate { template, defaults })
    })
}
