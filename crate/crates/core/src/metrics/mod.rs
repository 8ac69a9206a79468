//! Task- and step-level success metrics and action-item precision/recall.

mod matching;
mod report;

use std::fmt;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::session::SessionStatus;
use crate::text::{content_tokens, jaccard};

pub use matching::maximum_matching;
pub use report::{from_csv, render_table, to_csv, to_json, ReportRow};

/// Default overlap for two action items to count as the same item.
pub const ITEM_MATCH_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Chunk,
    Doc,
    Thread,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Chunk, Paradigm::Doc, Paradigm::Thread];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Chunk => "chunk",
            Paradigm::Doc => "doc",
            Paradigm::Thread => "thread",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chunk" => Ok(Paradigm::Chunk),
            "doc" => Ok(Paradigm::Doc),
            "thread" => Ok(Paradigm::Thread),
            other => Err(format!("unknown paradigm {other:?} (expected chunk|doc|thread)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub success: bool,
    pub intervention: bool,
}

impl StepOutcome {
    pub fn new(success: bool, intervention: bool) -> Self {
        Self { success, intervention }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub paradigm: Paradigm,
    pub steps: Vec<StepOutcome>,
    pub turns: u32,
    pub final_status: SessionStatus,
    /// Tokens in the retrieval units handed to generation, summed over turns.
    pub retrieved_tokens: u64,
    /// Turns that handed retrieval units to generation.
    pub retrieval_turns: u32,
    #[serde(default)]
    pub generated_items: Vec<String>,
    #[serde(default)]
    pub truth_items: Vec<String>,
}

impl EvalRecord {
    pub fn successes(&self) -> usize {
        self.steps.iter().filter(|s| s.success).count()
    }

    /// Successful steps before the first failure.
    pub fn pre_failure_successes(&self) -> usize {
        self.steps.iter().take_while(|s| s.success).count()
    }

    pub fn interventions(&self) -> usize {
        self.steps.iter().filter(|s| s.intervention).count()
    }

    pub fn mitigated(&self) -> bool {
        self.final_status == SessionStatus::Mitigated
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no evaluation records")]
    Empty,
    #[error("record {0} has no steps")]
    NoSteps(String),
    #[error("record {0} has no turns")]
    NoTurns(String),
    #[error("{0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    pub tasks: usize,
    pub sr: S,
    pub step_sr: S,
    pub pf_step_sr: S,
    pub hi: S,
    pub mean_turns: S,
    pub precision: S,
    pub recall: S,
    pub f1: S,
    pub mean_tokens_per_turn: S,
}

fn ratio<S: Num + FromPrimitive>(num: u64, den: u64) -> S {
    if den == 0 {
        return S::zero();
    }
    S::from_u64(num).expect("count fits scalar") / S::from_u64(den).expect("count fits scalar")
}

fn f1<S: Num + Copy + PartialOrd>(p: S, r: S) -> S {
    let sum = p + r;
    if sum == S::zero() {
        S::zero()
    } else {
        (S::one() + S::one()) * p * r / sum
    }
}

/// Aggregates records. Precision and recall pool matched, generated and
/// ground-truth item counts over all records.
pub fn compute_metrics<S>(records: &[EvalRecord]) -> Result<MetricsReport<S>, MetricsError>
where
    S: Num + FromPrimitive + Copy + PartialOrd,
{
    compute_metrics_with(records, &default_matcher)
}

pub fn compute_metrics_with<S>(
    records: &[EvalRecord],
    matcher: &dyn Fn(&str, &str) -> bool,
) -> Result<MetricsReport<S>, MetricsError>
where
    S: Num + FromPrimitive + Copy + PartialOrd,
{
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut steps, mut ok, mut pf, mut hi, mut full, mut turns) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let (mut tokens, mut token_turns) = (0u64, 0u64);
    let (mut matched, mut generated, mut truth) = (0u64, 0u64, 0u64);
    for r in records {
        if r.steps.is_empty() {
            return Err(MetricsError::NoSteps(r.task_id.clone()));
        }
        if r.turns == 0 {
            return Err(MetricsError::NoTurns(r.task_id.clone()));
        }
        steps += r.steps.len() as u64;
        ok += r.successes() as u64;
        pf += r.pre_failure_successes() as u64;
        hi += r.interventions() as u64;
        full += u64::from(r.successes() == r.steps.len());
        turns += u64::from(r.turns);
        tokens += r.retrieved_tokens;
        token_turns += u64::from(r.retrieval_turns);
        matched += matched_items(&r.generated_items, &r.truth_items, matcher) as u64;
        generated += r.generated_items.len() as u64;
        truth += r.truth_items.len() as u64;
    }
    let n = records.len() as u64;
    let precision = ratio(matched, generated);
    let recall = ratio(matched, truth);
    Ok(MetricsReport {
        tasks: records.len(),
        sr: ratio(full, n),
        step_sr: ratio(ok, steps),
        pf_step_sr: ratio(pf, steps),
        hi: ratio(hi, steps),
        mean_turns: ratio(turns, n),
        precision,
        recall,
        f1: f1(precision, recall),
        mean_tokens_per_turn: ratio(tokens, token_turns),
    })
}

/// Items match when their content-token Jaccard overlap is at least 0.5.
pub fn default_matcher(a: &str, b: &str) -> bool {
    jaccard(&content_tokens(a), &content_tokens(b)) >= ITEM_MATCH_FLOOR
}

/// Size of a maximum one-to-one matching between the two lists.
pub fn matched_items(generated: &[String], truth: &[String], matcher: &dyn Fn(&str, &str) -> bool) -> usize {
    let adj: Vec<Vec<usize>> = generated
        .iter()
        .map(|g| truth.iter().enumerate().filter(|(_, t)| matcher(g, t)).map(|(j, _)| j).collect())
        .collect();
    maximum_matching(&adj, truth.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf<S> {
    pub matched: usize,
    pub precision: S,
    pub recall: S,
    pub f1: S,
}

/// Precision = matched / generated, recall = matched / ground truth.
pub fn action_item_prf<S>(generated: &[String], truth: &[String], matcher: &dyn Fn(&str, &str) -> bool) -> Prf<S>
where
    S: Num + FromPrimitive + Copy + PartialOrd,
{
    let matched = matched_items(generated, truth, matcher);
    let precision = ratio(matched as u64, generated.len() as u64);
    let recall = ratio(matched as u64, truth.len() as u64);
    Prf { matched, precision, recall, f1: f1(precision, recall) }
}
