//! The multi-turn troubleshooting loop: retrieve, select, present a step,
//! match the reported outcome against its linker, and follow the branch.

mod script;
mod transcript;

use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{Embedder, Gateway};
use crate::kb::{KbError, KnowledgeBase, Scope, DEFAULT_K};
use crate::lu::{hex_prefix, LinkerToken, LogicUnit, LuType};
use crate::pipeline::prompts;
use crate::scalar::Scalar;
use crate::selector::{select, Candidate, Role, SelectionContext, SelectionOutcome, MATCH_FLOOR};
use crate::text::{affirmative_tokens, content_tokens, coverage, jaccard, TokenCounter, WordPunctCounter};

pub use script::{step_matches, ScriptStep, TaskScript};
pub use transcript::{transcript_from_jsonl, transcript_to_jsonl, TranscriptTurn, TurnInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    AwaitingFeedback,
    AwaitingClarification,
    Mitigated,
    Escalated,
    NoInfo,
    Exhausted,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Mitigated | Self::Escalated | Self::NoInfo | Self::Exhausted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Active => "active",
            Self::AwaitingFeedback => "awaiting_feedback",
            Self::AwaitingClarification => "awaiting_clarification",
            Self::Mitigated => "mitigated",
            Self::Escalated => "escalated",
            Self::NoInfo => "no_info",
            Self::Exhausted => "exhausted",
        }
    }
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Plan,
    StepInstruction,
    ClarifyQuestion,
    Mitigated,
    Escalate,
    NoInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    #[default]
    Multi,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Mode::Single),
            "multi" => Ok(Mode::Multi),
            other => Err(format!("unknown mode {other:?} (expected single|multi)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub k: usize,
    pub max_turns: u32,
    /// Retrieval hits below this score are not candidates.
    pub score_floor: f64,
    /// Minimum token overlap between an outcome and a branch condition.
    pub branch_match_floor: f64,
    pub mode: Mode,
    /// Unrecognized outcomes tolerated before escalating.
    pub reask_limit: u32,
    /// Let the gateway choose among candidates.
    pub model_select: bool,
    /// Let the gateway match outcomes to branches.
    pub model_match: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_turns: 20,
            score_floor: 0.05,
            branch_match_floor: 0.3,
            mode: Mode::Multi,
            reask_limit: 1,
            model_select: false,
            model_match: false,
        }
    }
}

/// A linker branch as offered to the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferedBranch {
    pub index: usize,
    pub condition: String,
    pub next_intent: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub kind: ResponseKind,
    pub status: SessionStatus,
    pub text: String,
    #[serde(default)]
    pub lu_id: Option<String>,
    #[serde(default)]
    pub header: Option<String>,
    #[serde(default)]
    pub branches: Vec<OfferedBranch>,
    pub turn: u32,
}

/// Candidates kept while a clarification is pending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingSelection {
    pub query: String,
    pub candidates: Vec<(String, f64)>,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub ctx: SelectionContext,
    pub current: Option<String>,
    pub status: SessionStatus,
    pub turn_count: u32,
    transcript: Vec<TranscriptTurn>,
    pub reasks: u32,
    pub pending: Option<PendingSelection>,
    /// Headers of every unit presented, in order.
    pub presented: Vec<String>,
}

impl SessionState {
    fn new(session_id: String, question: &str) -> Self {
        Self {
            session_id,
            ctx: SelectionContext::new(question),
            current: None,
            status: SessionStatus::Active,
            turn_count: 0,
            transcript: Vec::new(),
            reasks: 0,
            pending: None,
            presented: Vec::new(),
        }
    }

    /// Append-only record of every accepted call.
    pub fn transcript(&self) -> &[TranscriptTurn] {
        &self.transcript
    }

    pub fn last_response_kind(&self) -> Option<ResponseKind> {
        self.transcript.last().map(|t| t.response)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("session is {0}; no further input is accepted")]
    Terminal(SessionStatus),
    #[error("session is {actual}, expected {expected}")]
    WrongStatus { expected: SessionStatus, actual: SessionStatus },
    #[error("empty task")]
    EmptyTask,
    #[error("unknown logic unit {0}")]
    UnknownLu(String),
    #[error("replay diverged at turn {turn}: {detail}")]
    Replay { turn: u32, detail: String },
    #[error("invalid transcript: {0}")]
    Transcript(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Runs sessions against one pinned knowledge-base snapshot.
#[derive(Clone)]
pub struct Engine<S> {
    kb: Arc<KnowledgeBase<S>>,
    embedder: Option<Arc<dyn Embedder<S>>>,
    gateway: Option<Gateway>,
    config: SessionConfig,
    counter: Arc<dyn TokenCounter>,
}

impl<S: Scalar> std::fmt::Debug for Engine<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("kb_len", &self.kb.len()).field("config", &self.config).finish()
    }
}

struct Presented {
    kind: ResponseKind,
    status: SessionStatus,
    text: String,
    lu: Option<LogicUnit>,
    tokens: usize,
}

impl<S: Scalar> Engine<S> {
    pub fn new(kb: Arc<KnowledgeBase<S>>, embedder: Option<Arc<dyn Embedder<S>>>, config: SessionConfig) -> Self {
        Self { kb, embedder, gateway: None, config, counter: Arc::new(WordPunctCounter) }
    }

    pub fn with_gateway(mut self, gateway: Gateway) -> Self {
        self.gateway = Some(gateway);
        self
    }

    pub fn with_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn with_config(mut self, config: SessionConfig) -> Self {
        self.config = config;
        self
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase<S>> {
        &self.kb
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn counter(&self) -> &dyn TokenCounter {
        self.counter.as_ref()
    }

    pub fn start(&self, session_id: impl Into<String>, question: &str) -> Result<(SessionState, TurnResponse), SessionError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(SessionError::EmptyInput("question"));
        }
        let mut state = SessionState::new(session_id.into(), question);
        state.ctx.push_turn(Role::User, question);
        let mut turn = TranscriptTurn::new(1, TurnInput::Start { text: question.to_string() });
        let p = self.retrieve_and_select(&mut state, question, Scope::all(), &mut turn)?;
        let resp = self.finish(&mut state, turn, p);
        Ok((state, resp))
    }

    /// Reports what happened after carrying out the current step.
    pub fn submit_feedback(&self, state: &mut SessionState, outcome: &str) -> Result<TurnResponse, SessionError> {
        self.admit(state, SessionStatus::AwaitingFeedback)?;
        let outcome = outcome.trim();
        if outcome.is_empty() {
            return Err(SessionError::EmptyInput("outcome"));
        }
        let mut turn = TranscriptTurn::new(state.turn_count + 1, TurnInput::Feedback { text: outcome.to_string() });
        state.ctx.push_turn(Role::User, outcome);
        let lu = self.current_lu(state)?;
        if lu.linker.is_empty() {
            state.ctx.complete(&lu.header);
            let p = Presented {
                kind: ResponseKind::Mitigated,
                status: SessionStatus::Mitigated,
                text: format!("\"{}\" was the final step.", lu.header),
                lu: None,
                tokens: 0,
            };
            return Ok(self.finish(state, turn, p));
        }
        let Some(index) = self.match_branch(&lu, outcome) else {
            state.reasks += 1;
            let p = if state.reasks > self.config.reask_limit {
                Presented {
                    kind: ResponseKind::Escalate,
                    status: SessionStatus::Escalated,
                    text: format!("The outcome \"{outcome}\" matches none of the expected results of \"{}\". Escalating.", lu.header),
                    lu: None,
                    tokens: 0,
                }
            } else {
                let options: Vec<String> = lu.linker.iter().map(|b| format!("- {}", b.condition)).collect();
                Presented {
                    kind: ResponseKind::StepInstruction,
                    status: SessionStatus::AwaitingFeedback,
                    text: format!("That outcome was not recognized. Which of these did you observe?\n{}", options.join("\n")),
                    lu: Some(lu),
                    tokens: 0,
                }
            };
            return Ok(self.finish(state, turn, p));
        };
        state.reasks = 0;
        state.ctx.add_fact(outcome);
        state.ctx.complete(&lu.header);
        let branch = &lu.linker[index];
        let token = branch.token.known();
        turn.branch_matched = Some(index);
        turn.branch_token = Some(branch.token.to_string());
        let p = match token {
            Some(LinkerToken::Mitigate) => Presented {
                kind: ResponseKind::Mitigated,
                status: SessionStatus::Mitigated,
                text: branch.next_intent.clone(),
                lu: None,
                tokens: 0,
            },
            Some(t @ (LinkerToken::Continue | LinkerToken::Cross)) => {
                let scope = if t == LinkerToken::Cross {
                    turn.cross_document = true;
                    Scope::all()
                } else {
                    Scope::doc(lu.meta.source_doc_id.clone())
                }
                .excluding(lu.id.clone());
                let query = branch.query().to_string();
                self.retrieve_and_select(state, &query, scope, &mut turn)?
            }
            None => Presented {
                kind: ResponseKind::Escalate,
                status: SessionStatus::Escalated,
                text: format!("Branch token {} is not understood. Escalating.", branch.token),
                lu: None,
                tokens: 0,
            },
        };
        Ok(self.finish(state, turn, p))
    }

    /// Answers the pending prerequisite question and re-runs selection over
    /// the same candidates.
    pub fn answer_clarification(&self, state: &mut SessionState, answer: &str) -> Result<TurnResponse, SessionError> {
        self.admit(state, SessionStatus::AwaitingClarification)?;
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(SessionError::EmptyInput("answer"));
        }
        let pending = state.pending.take().ok_or_else(|| SessionError::Transcript("no pending selection".into()))?;
        let mut turn = TranscriptTurn::new(state.turn_count + 1, TurnInput::Clarification { text: answer.to_string() });
        state.ctx.push_turn(Role::User, answer);
        // A short "yes"/"no" is read as an answer about the condition itself.
        let required = affirmative_tokens(&pending.condition);
        if coverage(&required, &affirmative_tokens(answer)) >= MATCH_FLOOR {
            state.ctx.add_fact(answer);
        } else {
            state.ctx.add_fact(format!("{answer}: {}", pending.condition));
        }
        let candidates: Vec<Candidate> = pending
            .candidates
            .iter()
            .filter_map(|(id, score)| self.kb.get(id).map(|lu| Candidate { lu: lu.clone(), score: *score }))
            .collect();
        turn.query = Some(pending.query.clone());
        turn.top_k = pending.candidates.iter().map(|c| c.0.clone()).collect();
        let p = self.run_selection(state, &pending.query, candidates, &mut turn);
        Ok(self.finish(state, turn, p))
    }

    /// Moves the session onto `lu_id`, as an operator overriding the
    /// system's choice would. Counts as no turn.
    pub fn force_step(&self, state: &mut SessionState, lu_id: &str) -> Result<TurnResponse, SessionError> {
        if state.status.is_terminal() {
            return Err(SessionError::Terminal(state.status));
        }
        let lu = self.kb.get(lu_id).ok_or_else(|| SessionError::UnknownLu(lu_id.to_string()))?.clone();
        state.pending = None;
        state.reasks = 0;
        let p = self.present(state, &[lu]);
        state.current = p.lu.as_ref().map(|l| l.id.clone());
        state.status = p.status;
        Ok(self.response(state, &p))
    }

    fn admit(&self, state: &SessionState, expected: SessionStatus) -> Result<(), SessionError> {
        if state.status.is_terminal() {
            return Err(SessionError::Terminal(state.status));
        }
        if state.status != expected {
            return Err(SessionError::WrongStatus { expected, actual: state.status });
        }
        Ok(())
    }

    fn current_lu(&self, state: &SessionState) -> Result<LogicUnit, SessionError> {
        let id = state.current.as_deref().ok_or_else(|| SessionError::UnknownLu("<none>".into()))?;
        self.kb.get(id).cloned().ok_or_else(|| SessionError::UnknownLu(id.to_string()))
    }

    fn retrieve_and_select(
        &self,
        state: &mut SessionState,
        query: &str,
        scope: Scope,
        turn: &mut TranscriptTurn,
    ) -> Result<Presented, SessionError> {
        let hits = self.kb.retrieve(query, self.config.k.max(1), self.embedder.as_deref(), &scope)?;
        let candidates: Vec<Candidate> = hits
            .iter()
            .map(|h| (h, h.score.to_f64_lossy()))
            .filter(|(_, s)| *s >= self.config.score_floor)
            .map(|(h, score)| Candidate { lu: self.kb.units()[h.index].clone(), score })
            .collect();
        turn.query = Some(query.to_string());
        turn.scope = Some(scope_label(&scope));
        turn.top_k = candidates.iter().map(|c| c.lu.id.clone()).collect();
        Ok(self.run_selection(state, query, candidates, turn))
    }

    fn run_selection(
        &self,
        state: &mut SessionState,
        query: &str,
        candidates: Vec<Candidate>,
        turn: &mut TranscriptTurn,
    ) -> Presented {
        let gw = self.gateway.as_ref().filter(|_| self.config.model_select);
        let outcome = select(&candidates, query, &state.ctx, gw);
        turn.selection = Some(outcome.clone());
        match outcome {
            SelectionOutcome::Selected { choices, .. } => {
                let lus: Vec<LogicUnit> = choices
                    .iter()
                    .filter_map(|c| candidates.iter().find(|cand| cand.lu.id == c.lu_id).map(|c| c.lu.clone()))
                    .collect();
                self.present(state, &lus)
            }
            SelectionOutcome::Clarify { condition, question, .. } => {
                state.pending = Some(PendingSelection {
                    query: query.to_string(),
                    candidates: candidates.iter().map(|c| (c.lu.id.clone(), c.score)).collect(),
                    condition,
                });
                Presented {
                    kind: ResponseKind::ClarifyQuestion,
                    status: SessionStatus::AwaitingClarification,
                    text: question,
                    lu: None,
                    tokens: 0,
                }
            }
            SelectionOutcome::NoInfo { explanation } => Presented {
                kind: ResponseKind::NoInfo,
                status: SessionStatus::NoInfo,
                text: if candidates.is_empty() {
                    format!("No knowledge matches \"{query}\".")
                } else {
                    explanation
                },
                lu: None,
                tokens: 0,
            },
        }
    }

    /// Renders the selected units. The first one drives the conversation.
    fn present(&self, state: &mut SessionState, lus: &[LogicUnit]) -> Presented {
        let Some(first) = lus.first() else {
            return Presented {
                kind: ResponseKind::NoInfo,
                status: SessionStatus::NoInfo,
                text: "No knowledge matches the query.".into(),
                lu: None,
                tokens: 0,
            };
        };
        let bodies: Vec<String> = lus.iter().map(|lu| substitute_placeholders(lu, &state.ctx.facts)).collect();
        let text = bodies.join("\n\n---\n\n");
        let tokens = lus.iter().map(|lu| self.counter.count(&lu.header) + self.counter.count(&lu.body)).sum();
        state.presented.push(first.header.clone());
        let plan = first.lu_type != LuType::Step && self.config.mode == Mode::Single;
        if plan {
            state.ctx.complete(&first.header);
        }
        Presented {
            kind: if plan { ResponseKind::Plan } else { ResponseKind::StepInstruction },
            status: if plan { SessionStatus::Mitigated } else { SessionStatus::AwaitingFeedback },
            text,
            lu: Some(first.clone()),
            tokens,
        }
    }

    fn finish(&self, state: &mut SessionState, mut turn: TranscriptTurn, mut p: Presented) -> TurnResponse {
        state.turn_count += 1;
        if !p.status.is_terminal() && state.turn_count >= self.config.max_turns {
            p = Presented {
                kind: ResponseKind::Escalate,
                status: SessionStatus::Exhausted,
                text: format!("Turn budget of {} exhausted. Escalating.", self.config.max_turns),
                lu: None,
                tokens: p.tokens,
            };
        }
        if p.status != SessionStatus::AwaitingClarification {
            state.pending = None;
        }
        if let Some(lu) = &p.lu {
            state.current = Some(lu.id.clone());
        }
        state.status = p.status;
        state.ctx.push_turn(Role::System, p.text.clone());
        turn.response = p.kind;
        turn.lu_id = p.lu.as_ref().map(|l| l.id.clone());
        turn.status = p.status;
        turn.retrieved_tokens = p.tokens;
        state.transcript.push(turn);
        self.response(state, &p)
    }

    fn response(&self, state: &SessionState, p: &Presented) -> TurnResponse {
        let offer = p.status == SessionStatus::AwaitingFeedback;
        TurnResponse {
            kind: p.kind,
            status: p.status,
            text: p.text.clone(),
            lu_id: p.lu.as_ref().map(|l| l.id.clone()),
            header: p.lu.as_ref().map(|l| l.header.clone()),
            branches: match (&p.lu, offer) {
                (Some(lu), true) => offered_branches(lu),
                _ => Vec::new(),
            },
            turn: state.turn_count,
        }
    }

    /// Index of the branch whose condition best matches `outcome`.
    pub fn match_branch(&self, lu: &LogicUnit, outcome: &str) -> Option<usize> {
        if self.config.model_match {
            if let Some(gw) = &self.gateway {
                if let Some(i) = model_match(gw, lu, outcome) {
                    return Some(i);
                }
            }
        }
        lexical_match(lu, outcome, self.config.branch_match_floor)
    }

    /// Re-executes the inputs of `turns` in a fresh session.
    pub fn replay(&self, session_id: &str, turns: &[TranscriptTurn]) -> Result<SessionState, SessionError> {
        let mut iter = turns.iter();
        let first = iter.next().ok_or_else(|| SessionError::Transcript("empty transcript".into()))?;
        let TurnInput::Start { text } = &first.input else {
            return Err(SessionError::Transcript("first turn is not a start".into()));
        };
        let (mut state, _) = self.start(session_id, text)?;
        for t in iter {
            match &t.input {
                TurnInput::Start { .. } => return Err(SessionError::Transcript(format!("second start at turn {}", t.turn))),
                TurnInput::Feedback { text } => self.submit_feedback(&mut state, text)?,
                TurnInput::Clarification { text } => self.answer_clarification(&mut state, text)?,
            };
        }
        for (a, b) in state.transcript.iter().zip(turns) {
            if a != b {
                return Err(SessionError::Replay { turn: b.turn, detail: "recorded turn differs from re-execution".into() });
            }
        }
        Ok(state)
    }
}

fn scope_label(scope: &Scope) -> String {
    match &scope.doc {
        Some(d) => format!("doc:{d}"),
        None => "all".to_string(),
    }
}

pub fn offered_branches(lu: &LogicUnit) -> Vec<OfferedBranch> {
    lu.linker
        .iter()
        .enumerate()
        .map(|(index, b)| OfferedBranch {
            index,
            condition: b.condition.clone(),
            next_intent: b.next_intent.clone(),
            token: b.token.to_string(),
        })
        .collect()
}

/// Highest content-token Jaccard overlap at or above `floor`; ties go to
/// the earlier branch.
pub fn lexical_match(lu: &LogicUnit, outcome: &str, floor: f64) -> Option<usize> {
    let o = content_tokens(outcome);
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in lu.linker.iter().enumerate() {
        let s = jaccard(&o, &content_tokens(&b.condition));
        if s >= floor && best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn model_match(gw: &Gateway, lu: &LogicUnit, outcome: &str) -> Option<usize> {
    let branches: Vec<serde_json::Value> = lu
        .linker
        .iter()
        .enumerate()
        .map(|(i, b)| serde_json::json!({ "INDEX": i, "CONDITION": b.condition }))
        .collect();
    let key = hex_prefix(&Sha256::digest(format!("{}\n{outcome}", lu.id).as_bytes()), 16);
    let prompt = format!(
        "{}{}",
        prompts::fill(
            prompts::MATCH,
            &[("BRANCHES", &serde_json::Value::Array(branches).to_string()), ("OUTCOME", outcome)],
        ),
        gw.script_tag("match", &key)
    );
    let reply = gw.complete_json(&prompt).ok()?;
    let i = reply.get("INDEX")?.as_u64()? as usize;
    (i < lu.linker.len()).then_some(i)
}

fn fact_value_regex(name: &str) -> Regex {
    let words: Vec<String> = name.split_whitespace().map(regex::escape).collect();
    Regex::new(&format!(r"(?i)\b{}\s*(?:is\s+|=\s*|:\s*)([^\s,;]+)", words.join(r"\s+"))).expect("escaped pattern")
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([A-Z][A-Z0-9 _]*)>").unwrap())
}

/// The unit's body with each `<NAME>` placeholder replaced by the most
/// recent fact stating "name is value", else by its default.
pub fn substitute_placeholders(lu: &LogicUnit, facts: &[String]) -> String {
    placeholder_regex()
        .replace_all(&lu.body, |c: &regex::Captures<'_>| {
            let whole = &c[0];
            let name = c[1].trim_end_matches(|ch: char| ch.is_ascii_digit() || ch == ' ');
            let re = fact_value_regex(name);
            facts
                .iter()
                .rev()
                .find_map(|f| re.captures(f).map(|m| m[1].trim_end_matches(['.', '!', '?']).to_string()))
                .or_else(|| lu.default_parameters.get(whole).cloned())
                .unwrap_or_else(|| whole.to_string())
        })
        .into_owned()
}

#[cfg(test)]
mod tests;
