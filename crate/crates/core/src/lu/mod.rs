//! The logic-unit data model.
//!
//! A logic unit (LU) is the retrieval unit of the knowledge base: a header
//! used as the index key, a body with the actionable content, a prerequisite
//! that gates selection, and a linker whose branches connect the unit to the
//! next intent depending on the observed outcome.

mod interchange;
mod linker;
mod paper;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::markdown::code_placeholders;

pub use interchange::{read_lus, write_lus, Dialect, INTERCHANGE_VERSION};
pub use linker::{
    parse_linker_block, parse_linker_lenient, render_branch, render_linker, render_linker_block,
    LinkerLineError, LinkerParseError,
};
pub use paper::{export_paper_json, export_paper_json_pretty, import_paper_json};
pub use validate::{validate_lu, IssueKind, ValidationIssue, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum LuError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing {0}")]
    MissingField(&'static str),
    #[error("unknown LU type {0:?}")]
    UnknownType(String),
    #[error("invalid logic unit: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Linker(#[from] LinkerParseError),
    #[error("interchange: {0}")]
    Interchange(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LuType {
    Step,
    Terminology,
    #[serde(rename = "FAQ")]
    Faq,
    Appendix,
}

impl LuType {
    pub const ALL: [LuType; 4] = [LuType::Step, LuType::Terminology, LuType::Faq, LuType::Appendix];

    pub fn as_str(self) -> &'static str {
        match self {
            LuType::Step => "Step",
            LuType::Terminology => "Terminology",
            LuType::Faq => "FAQ",
            LuType::Appendix => "Appendix",
        }
    }
}

impl fmt::Display for LuType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LuType {
    type Err = LuError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "step" => Ok(LuType::Step),
            "terminology" => Ok(LuType::Terminology),
            "faq" => Ok(LuType::Faq),
            "appendix" => Ok(LuType::Appendix),
            _ => Err(LuError::UnknownType(s.to_string())),
        }
    }
}

/// Layout family of a source document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatTag {
    Structured,
    Hierarchical,
    Tabular,
    Narrative,
    #[default]
    Unknown,
}

impl FormatTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatTag::Structured => "structured",
            FormatTag::Hierarchical => "hierarchical",
            FormatTag::Tabular => "tabular",
            FormatTag::Narrative => "narrative",
            FormatTag::Unknown => "unknown",
        }
    }
}

impl FromStr for FormatTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "structured" => Ok(FormatTag::Structured),
            "hierarchical" => Ok(FormatTag::Hierarchical),
            "tabular" => Ok(FormatTag::Tabular),
            "narrative" => Ok(FormatTag::Narrative),
            "unknown" | "" => Ok(FormatTag::Unknown),
            other => Err(format!("unknown format tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetaData {
    pub source_doc_id: String,
    pub title: String,
    /// ISO-8601 date or empty.
    #[serde(default)]
    pub date: String,
    #[serde(default)]
    pub format_tag: FormatTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkerToken {
    /// Next step within the same guide.
    Continue,
    /// Jump to steps outside the current guide.
    Cross,
    /// Resolved, or hand off to a human.
    Mitigate,
}

impl LinkerToken {
    pub const ALL: [LinkerToken; 3] = [LinkerToken::Continue, LinkerToken::Cross, LinkerToken::Mitigate];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkerToken::Continue => "CONTINUE",
            LinkerToken::Cross => "CROSS",
            LinkerToken::Mitigate => "MITIGATE",
        }
    }
}

impl fmt::Display for LinkerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkerToken {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CONTINUE" => Ok(LinkerToken::Continue),
            "CROSS" => Ok(LinkerToken::Cross),
            "MITIGATE" => Ok(LinkerToken::Mitigate),
            other => Err(other.to_string()),
        }
    }
}

/// The bracketed tag written after a linker branch, as found in the source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BranchToken {
    Tagged(LinkerToken),
    Unrecognized(String),
    Absent,
}

impl BranchToken {
    pub fn known(&self) -> Option<LinkerToken> {
        match self {
            BranchToken::Tagged(t) => Some(*t),
            _ => None,
        }
    }

    pub fn parse(raw: &str) -> Self {
        match raw.parse::<LinkerToken>() {
            Ok(t) => BranchToken::Tagged(t),
            Err(_) => BranchToken::Unrecognized(raw.to_string()),
        }
    }

    fn as_raw(&self) -> Option<&str> {
        match self {
            BranchToken::Tagged(t) => Some(t.as_str()),
            BranchToken::Unrecognized(s) => Some(s),
            BranchToken::Absent => None,
        }
    }
}

impl fmt::Display for BranchToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_raw().unwrap_or(""))
    }
}

impl From<LinkerToken> for BranchToken {
    fn from(t: LinkerToken) -> Self {
        BranchToken::Tagged(t)
    }
}

impl Serialize for BranchToken {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_raw().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BranchToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match Option::<String>::deserialize(d)? {
            Some(raw) => BranchToken::parse(&raw),
            None => BranchToken::Absent,
        })
    }
}

/// One "if condition, then next intent [TOKEN]" edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkerBranch {
    pub condition: String,
    pub next_intent: String,
    pub token: BranchToken,
}

impl LinkerBranch {
    pub fn new(condition: impl Into<String>, next_intent: impl Into<String>, token: LinkerToken) -> Self {
        Self { condition: condition.into(), next_intent: next_intent.into(), token: token.into() }
    }

    /// Retrieval query for the next round.
    ///
    /// This is the next intent itself, or the imperative tail following the
    /// last "please" when the clause carries a preamble ("it is a real
    /// problem, and please Check if ...").
    pub fn query(&self) -> &str {
        let lower = self.next_intent.to_ascii_lowercase();
        match lower.rfind("please ") {
            Some(i) if i == 0 || lower.as_bytes()[i - 1] == b' ' => {
                let tail = self.next_intent[i + 7..].trim();
                if tail.is_empty() {
                    &self.next_intent
                } else {
                    tail
                }
            }
            _ => &self.next_intent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicUnit {
    pub id: String,
    pub lu_type: LuType,
    pub meta: MetaData,
    #[serde(default)]
    pub prerequisite: String,
    pub header: String,
    pub body: String,
    #[serde(default)]
    pub linker: Vec<LinkerBranch>,
    /// Placeholder (including angle brackets) to default value.
    #[serde(default)]
    pub default_parameters: BTreeMap<String, String>,
}

impl LogicUnit {
    /// Builds a unit and assigns its content-hash id.
    pub fn new(lu_type: LuType, meta: MetaData, header: impl Into<String>, body: impl Into<String>) -> Self {
        let mut lu = Self {
            id: String::new(),
            lu_type,
            meta,
            prerequisite: String::new(),
            header: header.into(),
            body: body.into(),
            linker: Vec::new(),
            default_parameters: BTreeMap::new(),
        };
        lu.assign_id();
        lu
    }

    /// First 16 hex digits of SHA-256 over (source document id, header, body).
    pub fn content_id(&self) -> String {
        content_id(&self.meta.source_doc_id, &self.header, &self.body)
    }

    pub fn assign_id(&mut self) {
        self.id = self.content_id();
    }

    /// Step units with an empty linker end the procedure.
    pub fn is_terminal(&self) -> bool {
        self.linker.is_empty()
    }

    pub fn placeholders(&self) -> Vec<String> {
        code_placeholders(&self.body)
    }

    /// Prerequisite split into condition phrases: one per sentence, line or
    /// semicolon-separated clause, trailing punctuation removed.
    pub fn prerequisite_conditions(&self) -> Vec<String> {
        split_conditions(&self.prerequisite)
    }

    pub fn tokens_used(&self) -> BTreeSet<LinkerToken> {
        self.linker.iter().filter_map(|b| b.token.known()).collect()
    }
}

pub(crate) fn split_conditions(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let sentence_end = matches!(c, '.' | '!' | '?')
            && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if c == '\n' || c == ';' || sentence_end {
            push_condition(&mut out, &current);
            current.clear();
        } else {
            current.push(c);
        }
    }
    push_condition(&mut out, &current);
    out
}

fn push_condition(out: &mut Vec<String>, raw: &str) {
    let t = raw
        .trim()
        .trim_start_matches(['-', '*', '+'])
        .trim()
        .trim_end_matches([',', ':'])
        .trim();
    if t.chars().any(char::is_alphanumeric) {
        out.push(t.to_string());
    }
}

pub(crate) fn content_id(source_doc_id: &str, header: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(source_doc_id.as_bytes());
    h.update([0x1f]);
    h.update(header.as_bytes());
    h.update([0x1f]);
    h.update(body.as_bytes());
    hex_prefix(&h.finalize(), 16)
}

pub(crate) fn hex_prefix(bytes: &[u8], digits: usize) -> String {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    bytes
        .iter()
        .flat_map(|b| [HEX[(b >> 4) as usize], HEX[(b & 0xf) as usize]])
        .take(digits)
        .map(char::from)
        .collect()
}

/// A document before conversion to logic units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    pub title: String,
    pub raw_text: String,
    #[serde(default)]
    pub format_tag: FormatTag,
    #[serde(default)]
    pub date: String,
}

impl SourceDocument {
    pub fn meta(&self) -> MetaData {
        MetaData {
            source_doc_id: self.id.clone(),
            title: self.title.clone(),
            date: self.date.clone(),
            format_tag: self.format_tag,
        }
    }
}
