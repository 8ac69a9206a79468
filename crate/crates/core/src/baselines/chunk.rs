//! Recursive separator-based chunking with token budgets and overlap.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::text::{token_ends, TokenCounter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub source_doc_id: String,
    pub text: String,
    /// Character offsets into the source, end exclusive.
    pub start: usize,
    pub end: usize,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    /// Tried in order; text is split on the first one present.
    #[serde(default = "default_separators")]
    pub separators: Vec<String>,
}

fn default_separators() -> Vec<String> {
    ["\n\n", "\n", ". ", " "].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("chunk size must be positive")]
    ZeroSize,
    #[error("overlap {overlap} must be smaller than chunk size {size}")]
    Overlap { overlap: usize, size: usize },
    #[error("empty separator")]
    EmptySeparator,
}

impl ChunkConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, ChunkError> {
        let cfg = Self { chunk_size, overlap, separators: default_separators() };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 1000 / 50.
    pub fn web() -> Self {
        Self { chunk_size: 1000, overlap: 50, separators: default_separators() }
    }

    /// 2000 / 100.
    pub fn incident() -> Self {
        Self { chunk_size: 2000, overlap: 100, separators: default_separators() }
    }

    /// 300 / 30.
    pub fn howto() -> Self {
        Self { chunk_size: 300, overlap: 30, separators: default_separators() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "web" | "mind2web" => Some(Self::web()),
            "incident" | "icm" => Some(Self::incident()),
            "howto" | "wikihow" => Some(Self::howto()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.chunk_size == 0 {
            return Err(ChunkError::ZeroSize);
        }
        if self.overlap >= self.chunk_size {
            return Err(ChunkError::Overlap { overlap: self.overlap, size: self.chunk_size });
        }
        if self.separators.iter().any(String::is_empty) {
            return Err(ChunkError::EmptySeparator);
        }
        Ok(())
    }
}

/// Splits `text` into chunks of at most `cfg.chunk_size` tokens.
///
/// The text is cut recursively on the separators (a separator stays with
/// the piece before it), falling back to token boundaries, and the pieces
/// are packed greedily. Each new chunk starts with the longest run of
/// trailing pieces of the previous one that fits in `cfg.overlap` tokens.
/// Chunk text is the exact source slice, with surrounding whitespace
/// excluded.
pub fn recursive_chunk(
    doc_id: &str,
    text: &str,
    cfg: &ChunkConfig,
    counter: &dyn TokenCounter,
) -> Result<Vec<Chunk>, ChunkError> {
    cfg.validate()?;
    let mut pieces = Vec::new();
    split(text, 0..text.len(), &cfg.separators, cfg.chunk_size, counter, &mut pieces);
    let count = |r: Range<usize>| counter.count(&text[r]);
    let mut spans: Vec<Range<usize>> = Vec::new();
    let mut first = 0;
    while first < pieces.len() {
        let mut last = first;
        while last + 1 < pieces.len() && count(pieces[first].start..pieces[last + 1].end) <= cfg.chunk_size {
            last += 1;
        }
        spans.push(pieces[first].start..pieces[last].end);
        if last + 1 == pieces.len() {
            break;
        }
        let next = last + 1;
        let mut start = next;
        while start > first + 1
            && count(pieces[start - 1].start..pieces[last].end) <= cfg.overlap
            && count(pieces[start - 1].start..pieces[next].end) <= cfg.chunk_size
        {
            start -= 1;
        }
        first = start;
    }
    let chars = CharIndex::new(text);
    Ok(spans
        .into_iter()
        .filter_map(|r| trim_range(text, r))
        .enumerate()
        .map(|(i, r)| Chunk {
            id: format!("{doc_id}#{i:04}"),
            source_doc_id: doc_id.to_string(),
            text: text[r.clone()].to_string(),
            start: chars.of(r.start),
            end: chars.of(r.end),
            token_count: count(r),
        })
        .collect())
}

fn split(
    text: &str,
    range: Range<usize>,
    seps: &[String],
    size: usize,
    counter: &dyn TokenCounter,
    out: &mut Vec<Range<usize>>,
) {
    if range.is_empty() {
        return;
    }
    if counter.count(&text[range.clone()]) <= size {
        out.push(range);
        return;
    }
    let slice = &text[range.clone()];
    let Some((i, sep)) = seps.iter().enumerate().find(|(_, s)| slice.contains(s.as_str())) else {
        split_tokens(text, range, size, out);
        return;
    };
    let mut at = range.start;
    for (pos, _) in slice.match_indices(sep.as_str()) {
        let end = range.start + pos + sep.len();
        if end > at {
            split(text, at..end, &seps[i + 1..], size, counter, out);
            at = end;
        }
    }
    split(text, at..range.end, &seps[i + 1..], size, counter, out);
}

/// Last resort: cut every `size` tokens.
fn split_tokens(text: &str, range: Range<usize>, size: usize, out: &mut Vec<Range<usize>>) {
    let slice = &text[range.clone()];
    let mut at = 0;
    for (n, end) in token_ends(slice).enumerate() {
        if (n + 1) % size == 0 {
            out.push(range.start + at..range.start + end);
            at = end;
        }
    }
    if at < slice.len() {
        out.push(range.start + at..range.end);
    }
}

fn trim_range(text: &str, r: Range<usize>) -> Option<Range<usize>> {
    let s = &text[r.clone()];
    let lead = s.len() - s.trim_start().len();
    let trail = s.len() - s.trim_end().len();
    (lead < s.len()).then(|| r.start + lead..r.end - trail)
}

struct CharIndex(Vec<usize>);

impl CharIndex {
    fn new(text: &str) -> Self {
        Self(text.char_indices().map(|(b, _)| b).collect())
    }

    fn of(&self, byte: usize) -> usize {
        self.0.partition_point(|&b| b < byte)
    }
}

/// The source slice at a chunk's character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

pub fn chunks_to_jsonl(chunks: &[Chunk]) -> String {
    chunks.iter().map(|c| serde_json::to_string(c).expect("chunk serializes") + "\n").collect()
}

pub fn chunks_from_jsonl(text: &str) -> Result<Vec<Chunk>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
