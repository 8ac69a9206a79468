//! LU interchange files: UTF-8 JSON lines, one unit per line, after a
//! header line naming the format version and dialect.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::paper::{export_paper_json, import_paper_json};
use super::validate::validate_lu;
use super::{LogicUnit, LuError};

pub const INTERCHANGE_VERSION: u32 = 1;
const FORMAT_NAME: &str = "threadkb-lu";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// snake_case keys matching the in-memory model.
    #[default]
    Normalized,
    /// `#field#` keys.
    Paper,
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(Dialect::Normalized),
            "paper" => Ok(Dialect::Paper),
            other => Err(format!("unknown dialect {other:?} (expected normalized|paper)")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dialect: Dialect,
}

pub fn write_lus<W: Write>(mut out: W, lus: &[LogicUnit], dialect: Dialect) -> Result<(), LuError> {
    let header = Header { format: FORMAT_NAME.into(), version: INTERCHANGE_VERSION, dialect };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for lu in lus {
        let line = match dialect {
            Dialect::Normalized => serde_json::to_string(lu)?,
            Dialect::Paper => export_paper_json(lu),
        };
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads an interchange file. Files without a header line are accepted; the
/// dialect is then sniffed per line.
pub fn read_lus<R: BufRead>(input: R) -> Result<Vec<LogicUnit>, LuError> {
    let mut dialect = None;
    let mut lus = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<Header>(trimmed) {
                if h.format != FORMAT_NAME {
                    return Err(LuError::Interchange(format!("unexpected format {:?}", h.format)));
                }
                if h.version != INTERCHANGE_VERSION {
                    return Err(LuError::Interchange(format!(
                        "unsupported version {} (expected {INTERCHANGE_VERSION})",
                        h.version
                    )));
                }
                dialect = Some(h.dialect);
                continue;
            }
        }
        let d = dialect.unwrap_or(if trimmed.contains("\"#header#\"") { Dialect::Paper } else { Dialect::Normalized });
        let lu = match d {
            Dialect::Paper => import_paper_json(trimmed),
            Dialect::Normalized => {
                let lu: LogicUnit = serde_json::from_str(trimmed)?;
                let report = validate_lu(&lu);
                if report.is_valid() {
                    Ok(lu)
                } else {
                    Err(LuError::Invalid(report))
                }
            }
        }
        .map_err(|e| LuError::Interchange(format!("line {}: {e}", idx + 1)))?;
        lus.push(lu);
    }
    Ok(lus)
}
