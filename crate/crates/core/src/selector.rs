//! Prerequisite filtering and choice among retrieved units.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::gateway::Gateway;
use crate::lu::{export_paper_json, hex_prefix, LogicUnit};
use crate::pipeline::prompts;
use crate::text::{affirmative_tokens, coverage, has_negation};

/// Share of a condition's content tokens that evidence must cover.
pub const MATCH_FLOOR: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionContext {
    pub question: String,
    history: Vec<ChatTurn>,
    pub completed_headers: Vec<String>,
    pub facts: Vec<String>,
}

impl SelectionContext {
    pub fn new(question: impl Into<String>) -> Self {
        Self { question: question.into(), ..Default::default() }
    }

    /// History only grows.
    pub fn push_turn(&mut self, role: Role, text: impl Into<String>) {
        self.history.push(ChatTurn { role, text: text.into() });
    }

    pub fn history(&self) -> &[ChatTurn] {
        &self.history
    }

    pub fn add_fact(&mut self, fact: impl Into<String>) {
        self.facts.push(fact.into());
    }

    pub fn complete(&mut self, header: &str) {
        if !self.completed_headers.iter().any(|h| h == header) {
            self.completed_headers.push(header.to_string());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "condition", rename_all = "lowercase")]
pub enum PrereqStatus {
    Met,
    /// The condition contradicted by an asserted fact.
    Unmet(String),
    /// The first condition with no supporting evidence.
    Unknown(String),
}

fn condition_status(condition: &str, ctx: &SelectionContext) -> Option<bool> {
    let required = affirmative_tokens(condition);
    if required.is_empty() {
        return Some(true);
    }
    let covers = |text: &str| coverage(&required, &affirmative_tokens(text)) >= MATCH_FLOOR;
    // The most recent fact about the condition decides.
    if let Some(f) = ctx.facts.iter().rev().find(|f| covers(f)) {
        return Some(!has_negation(f));
    }
    if ctx.completed_headers.iter().any(|h| covers(h)) {
        return Some(true);
    }
    if !has_negation(&ctx.question) && covers(&ctx.question) {
        return Some(true);
    }
    None
}

pub fn check_prerequisite(lu: &LogicUnit, ctx: &SelectionContext) -> PrereqStatus {
    let mut unknown = None;
    for c in lu.prerequisite_conditions() {
        match condition_status(&c, ctx) {
            Some(true) => {}
            Some(false) => return PrereqStatus::Unmet(c),
            None => {
                if unknown.is_none() {
                    unknown = Some(c);
                }
            }
        }
    }
    match unknown {
        Some(c) => PrereqStatus::Unknown(c),
        None => PrereqStatus::Met,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lu: LogicUnit,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub lu_id: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SelectionOutcome {
    Selected {
        choices: Vec<Choice>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rephrased_query: Option<String>,
    },
    Clarify {
        lu_id: String,
        condition: String,
        question: String,
    },
    NoInfo {
        explanation: String,
    },
}

impl SelectionOutcome {
    pub fn selected_ids(&self) -> Vec<&str> {
        match self {
            SelectionOutcome::Selected { choices, .. } => choices.iter().map(|c| c.lu_id.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

/// Filters `candidates` (in retrieval order) and chooses what to present.
///
/// Units whose prerequisite is contradicted are dropped. If the best
/// remaining unit has an unconfirmed prerequisite, the user is asked about
/// it. Otherwise the best unit is chosen — or, with a gateway, the model
/// picks among the units whose prerequisites are met, falling back to
/// retrieval order if its reply is unusable.
pub fn select(
    candidates: &[Candidate],
    query: &str,
    ctx: &SelectionContext,
    gateway: Option<&Gateway>,
) -> SelectionOutcome {
    if candidates.is_empty() {
        return SelectionOutcome::NoInfo { explanation: "no logic unit is relevant to the query".into() };
    }
    let judged: Vec<(&Candidate, PrereqStatus)> =
        candidates.iter().map(|c| (c, check_prerequisite(&c.lu, ctx))).collect();
    let remaining: Vec<&(&Candidate, PrereqStatus)> =
        judged.iter().filter(|(_, s)| !matches!(s, PrereqStatus::Unmet(_))).collect();
    let Some((top, top_status)) = remaining.first().map(|p| (p.0, &p.1)) else {
        let reasons: Vec<String> = judged
            .iter()
            .filter_map(|(c, s)| match s {
                PrereqStatus::Unmet(cond) => Some(format!("\"{}\" requires {cond:?}", c.lu.header)),
                _ => None,
            })
            .collect();
        return SelectionOutcome::NoInfo {
            explanation: format!("every candidate has an unmet prerequisite: {}", reasons.join("; ")),
        };
    };
    if let PrereqStatus::Unknown(cond) = top_status {
        return SelectionOutcome::Clarify {
            lu_id: top.lu.id.clone(),
            condition: cond.clone(),
            question: clarify_question(&top.lu.header, cond),
        };
    }
    let met: Vec<&Candidate> =
        remaining.iter().filter(|(_, s)| *s == PrereqStatus::Met).map(|(c, _)| *c).collect();
    if let Some(gw) = gateway {
        match model_select(gw, &met, query, ctx) {
            Some(outcome) => return outcome,
            None => log::debug!("selection reply unusable; keeping retrieval order"),
        }
    }
    SelectionOutcome::Selected {
        choices: vec![Choice {
            lu_id: top.lu.id.clone(),
            explanation: format!("highest-ranked unit with satisfied prerequisites (score {:.4})", top.score),
        }],
        rephrased_query: None,
    }
}

fn model_select(gw: &Gateway, met: &[&Candidate], query: &str, ctx: &SelectionContext) -> Option<SelectionOutcome> {
    let list: Vec<Value> =
        met.iter().map(|c| serde_json::from_str(&export_paper_json(&c.lu)).unwrap_or(Value::Null)).collect();
    let history: Vec<String> =
        ctx.history().iter().map(|t| format!("{}: {}", if t.role == Role::User { "user" } else { "system" }, t.text)).collect();
    let key = selection_script_key(query);
    let prompt = format!(
        "{}{}",
        prompts::fill(
            prompts::SELECT,
            &[
                ("LU_LIST", &Value::Array(list).to_string()),
                ("QUERY", query),
                ("CHAT_HISTORY", &history.join("\n")),
            ],
        ),
        gw.script_tag("select", &key)
    );
    let reply = gw.complete_json(&prompt).ok()?;
    parse_selection(&reply, met)
}

/// Script key used for the selection prompt of `query`.
pub fn selection_script_key(query: &str) -> String {
    hex_prefix(&Sha256::digest(query.as_bytes()), 16)
}

fn parse_selection(reply: &Value, met: &[&Candidate]) -> Option<SelectionOutcome> {
    if let Some(e) = reply.get("NO_INFO_EXPLANATION") {
        return Some(SelectionOutcome::NoInfo { explanation: e.as_str().unwrap_or("").to_string() });
    }
    let items = match reply {
        Value::Array(items) => items.clone(),
        Value::Object(_) => vec![reply.clone()],
        _ => return None,
    };
    let mut choices = Vec::new();
    let mut rephrased = None;
    for item in &items {
        let idx = item.get("INDEX")?.as_u64()? as usize;
        let c = met.get(idx)?;
        if choices.iter().any(|ch: &Choice| ch.lu_id == c.lu.id) {
            continue;
        }
        if rephrased.is_none() {
            rephrased = item.get("REPHRASED_QUERY").and_then(Value::as_str).map(str::to_string);
        }
        choices.push(Choice {
            lu_id: c.lu.id.clone(),
            explanation: item.get("EXPLANATION").and_then(Value::as_str).unwrap_or("").to_string(),
        });
    }
    (!choices.is_empty()).then_some(SelectionOutcome::Selected { choices, rephrased_query: rephrased })
}

/// "Before checking the server load, do you have access to the server monitor?"
pub fn clarify_question(header: &str, condition: &str) -> String {
    let action = gerund_phrase(header);
    let phrase = lower_initial(condition.trim().trim_end_matches(['.', '?', '!']));
    let copula = crate::text::tokens(&phrase).iter().any(|t| matches!(t.as_str(), "is" | "are" | "was" | "were" | "has" | "have" | "been"));
    if copula {
        format!("Before {action}, can you confirm that {phrase}?")
    } else {
        format!("Before {action}, do you have {phrase}?")
    }
}

fn lower_initial(s: &str) -> String {
    let mut chars = s.chars();
    match (chars.next(), chars.clone().next()) {
        // Leave acronyms ("VPN access") alone.
        (Some(c), Some(n)) if c.is_uppercase() && !n.is_uppercase() => c.to_lowercase().chain(chars).collect(),
        (Some(c), None) => c.to_lowercase().collect(),
        _ => s.to_string(),
    }
}

fn gerund_phrase(header: &str) -> String {
    let h = header.trim().trim_end_matches(['.', '?', '!', ':']);
    let (first, rest) = h.split_once(' ').unwrap_or((h, ""));
    let verb = first.to_lowercase();
    let g = gerund(&verb);
    if rest.is_empty() {
        g
    } else {
        format!("{g} {}", lower_initial_words(rest))
    }
}

fn lower_initial_words(s: &str) -> String {
    s.split(' ').map(lower_initial).collect::<Vec<_>>().join(" ")
}

fn gerund(verb: &str) -> String {
    if verb.ends_with("ing") || !verb.chars().all(|c| c.is_ascii_alphabetic()) {
        return verb.to_string();
    }
    let v: Vec<char> = verb.chars().collect();
    let vowel = |c: char| "aeiou".contains(c);
    if let Some(stem) = verb.strip_suffix("ie") {
        return format!("{stem}ying");
    }
    if verb.ends_with('e') && !verb.ends_with("ee") && v.len() > 2 {
        return format!("{}ing", &verb[..verb.len() - 1]);
    }
    let n = v.len();
    // Short consonant-vowel-consonant verbs double the final consonant.
    let short = n == 3 || matches!(verb, "stop" | "drop" | "plan" | "scan" | "skip" | "ship" | "trim" | "swap" | "grep" | "step");
    if short && !vowel(v[n - 1]) && !"wxy".contains(v[n - 1]) && vowel(v[n - 2]) && !vowel(v[n - 3]) {
        return format!("{verb}{}ing", v[n - 1]);
    }
    format!("{verb}ing")
}
