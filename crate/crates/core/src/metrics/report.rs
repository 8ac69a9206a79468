//! Comparison tables across paradigms: plain text, CSV and JSON.

use std::fmt::Write as _;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsReport};

/// One table row. Values are stored as f64 so the CSV form is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub tasks: usize,
    pub sr: f64,
    pub step_sr: f64,
    pub pf_step_sr: f64,
    pub hi: f64,
    pub turns: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tokens_per_turn: f64,
}

impl ReportRow {
    pub fn new<S: ToPrimitive + Copy>(label: impl Into<String>, r: &MetricsReport<S>) -> Self {
        let f = |v: S| v.to_f64().unwrap_or(f64::NAN);
        Self {
            label: label.into(),
            tasks: r.tasks,
            sr: f(r.sr),
            step_sr: f(r.step_sr),
            pf_step_sr: f(r.pf_step_sr),
            hi: f(r.hi),
            turns: f(r.mean_turns),
            precision: f(r.precision),
            recall: f(r.recall),
            f1: f(r.f1),
            tokens_per_turn: f(r.mean_tokens_per_turn),
        }
    }
}

const HEADERS: [&str; 8] = ["", "SR", "Step SR", "P.F. Step SR", "HI", "Turns", "F1", "Tokens/turn"];

/// Fixed-width table. Rates are percentages; rows after the first carry a
/// delta against the first row.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let label_w = rows.iter().map(|r| r.label.len()).chain([6]).max().unwrap_or(6);
    let _ = write!(out, "{:<label_w$}", HEADERS[0]);
    for h in &HEADERS[1..] {
        let _ = write!(out, "  {h:>16}");
    }
    out.push('\n');
    let base = rows.first();
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(out, "{:<label_w$}", r.label);
        let cells = [
            (r.sr * 100.0, base.map(|b| b.sr * 100.0)),
            (r.step_sr * 100.0, base.map(|b| b.step_sr * 100.0)),
            (r.pf_step_sr * 100.0, base.map(|b| b.pf_step_sr * 100.0)),
            (r.hi * 100.0, base.map(|b| b.hi * 100.0)),
            (r.turns, base.map(|b| b.turns)),
            (r.f1 * 100.0, base.map(|b| b.f1 * 100.0)),
            (r.tokens_per_turn, base.map(|b| b.tokens_per_turn)),
        ];
        for (v, b) in cells {
            let cell = match b {
                Some(b) if i > 0 => format!("{v:.2} ({:+.2})", v - b),
                _ => format!("{v:.2}"),
            };
            let _ = write!(out, "  {cell:>16}");
        }
        out.push('\n');
    }
    out
}

pub fn to_csv(rows: &[ReportRow]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>, MetricsError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<ReportRow>, _>>()
        .map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn to_json(rows: &[ReportRow]) -> serde_json::Value {
    serde_json::to_value(rows).expect("rows serialize")
}
