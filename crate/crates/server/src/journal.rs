//! Append-only JSON-lines journal of session turns, replayed at startup.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use threadkb::session::{Mode, TranscriptTurn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub session_id: String,
    pub mode: Mode,
    pub turn: TranscriptTurn,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entries: &[JournalEntry]) -> std::io::Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e).map_err(std::io::Error::other)?);
            buf.push('\n');
        }
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(buf.as_bytes())?;
        f.flush()
    }
}

/// Turns grouped by session, in first-seen order. Unparseable lines (e.g. a
/// torn final write) are skipped.
pub fn read_journal(path: &Path) -> std::io::Result<Vec<(String, Mode, Vec<TranscriptTurn>)>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut order = Vec::new();
    let mut by_id: BTreeMap<String, (Mode, Vec<TranscriptTurn>)> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalEntry>(&line) {
            Ok(e) => {
                let slot = by_id.entry(e.session_id.clone()).or_insert_with(|| {
                    order.push(e.session_id.clone());
                    (e.mode, Vec::new())
                });
                slot.1.push(e.turn);
            }
            Err(err) => log::warn!("journal line {}: {err}", i + 1),
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|id| by_id.remove(&id).map(|(m, t)| (id, m, t)))
        .collect())
}
