//! One JSON line per accepted call.

use serde::{Deserialize, Serialize};

use super::{ResponseKind, SessionError, SessionStatus};
use crate::selector::SelectionOutcome;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnInput {
    Start { text: String },
    Feedback { text: String },
    Clarification { text: String },
}

impl TurnInput {
    pub fn text(&self) -> &str {
        match self {
            TurnInput::Start { text } | TurnInput::Feedback { text } | TurnInput::Clarification { text } => text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub turn: u32,
    pub input: TurnInput,
    /// Retrieval query issued this turn, if any.
    #[serde(default)]
    pub query: Option<String>,
    /// "all" or "doc:<id>".
    #[serde(default)]
    pub scope: Option<String>,
    #[serde(default)]
    pub top_k: Vec<String>,
    #[serde(default)]
    pub selection: Option<SelectionOutcome>,
    #[serde(default)]
    pub branch_matched: Option<usize>,
    #[serde(default)]
    pub branch_token: Option<String>,
    /// The matched branch left the current document.
    #[serde(default)]
    pub cross_document: bool,
    pub response: ResponseKind,
    #[serde(default)]
    pub lu_id: Option<String>,
    pub status: SessionStatus,
    /// Tokens of the units handed to generation.
    #[serde(default)]
    pub retrieved_tokens: usize,
}

impl TranscriptTurn {
    pub(crate) fn new(turn: u32, input: TurnInput) -> Self {
        Self {
            turn,
            input,
            query: None,
            scope: None,
            top_k: Vec::new(),
            selection: None,
            branch_matched: None,
            branch_token: None,
            cross_document: false,
            response: ResponseKind::NoInfo,
            lu_id: None,
            status: SessionStatus::Active,
            retrieved_tokens: 0,
        }
    }
}

pub fn transcript_to_jsonl(turns: &[TranscriptTurn]) -> String {
    let mut out = String::new();
    for t in turns {
        out.push_str(&serde_json::to_string(t).expect("turn serializes"));
        out.push('\n');
    }
    out
}

pub fn transcript_from_jsonl(text: &str) -> Result<Vec<TranscriptTurn>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SessionError::Transcript(format!("line {}: {e}", i + 1))))
        .collect()
}
