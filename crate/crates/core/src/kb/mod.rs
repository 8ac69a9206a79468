//! Immutable knowledge-base snapshots with a header index.
//!
//! Retrieval is an exhaustive scan: every header vector is scored against
//! the query, so results are exact. Without an embedder the index falls back
//! to token-set Jaccard over headers with the same ranking contract.

mod persist;
mod stats;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{Embedder, Embedding, GatewayError};
use crate::lu::{hex_prefix, LinkerToken, LogicUnit};
use crate::scalar::Scalar;
use crate::text::{jaccard, token_set};

pub use persist::{load, load_with, persist, persist_to_writer, LoadReport, KB_MAGIC, KB_VERSION};
pub use stats::{kb_stats, KbStats};

/// Default number of units retrieved per round.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("duplicate LU id {0}")]
    DuplicateId(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] GatewayError),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("the index is dense; an embedder is required to score queries")]
    EmbedderRequired,
    #[error("not a knowledge-base file: {0}")]
    Format(String),
    #[error("unsupported knowledge-base version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch: file is truncated or corrupted")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed LU record {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<S> {
    pub lu_id: String,
    pub header: String,
    /// Absent for lexical indexes.
    pub embedding: Option<Embedding<S>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildInfo {
    /// `None` for a lexical index.
    pub embedder_id: Option<String>,
    pub dim: usize,
    /// Build timestamp, if recorded; left empty so rebuilds are byte-identical.
    pub built_at: Option<String>,
    pub corpus_digest: String,
}

/// Restricts retrieval to part of the knowledge base.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scope {
    pub doc: Option<String>,
    pub exclude: Vec<String>,
}

impl Scope {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn doc(doc_id: impl Into<String>) -> Self {
        Self { doc: Some(doc_id.into()), exclude: Vec::new() }
    }

    pub fn excluding(mut self, lu_id: impl Into<String>) -> Self {
        self.exclude.push(lu_id.into());
        self
    }

    fn admits(&self, lu: &LogicUnit) -> bool {
        self.doc.as_ref().is_none_or(|d| *d == lu.meta.source_doc_id) && !self.exclude.contains(&lu.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<S> {
    /// Position in [`KnowledgeBase::units`].
    pub index: usize,
    pub lu_id: String,
    pub score: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase<S> {
    units: Vec<LogicUnit>,
    entries: Vec<IndexEntry<S>>,
    by_id: HashMap<String, usize>,
    info: BuildInfo,
}

fn corpus_digest(units: &[LogicUnit]) -> String {
    let mut h = Sha256::new();
    for u in units {
        h.update(u.id.as_bytes());
        h.update(b"\n");
    }
    hex_prefix(&h.finalize(), 16)
}

impl<S: Scalar> KnowledgeBase<S> {
    /// One index entry per unit, embedding its header. Fails without
    /// producing a partial index.
    pub fn build(units: Vec<LogicUnit>, embedder: Option<&dyn Embedder<S>>) -> Result<Self, KbError> {
        let by_id = index_ids(&units)?;
        let (embeddings, embedder_id) = match embedder {
            Some(e) => {
                let headers: Vec<&str> = units.iter().map(|u| u.header.as_str()).collect();
                let vecs = if headers.is_empty() { Vec::new() } else { e.embed(&headers)? };
                (vecs.into_iter().map(Some).collect(), Some(e.id()))
            }
            None => (vec![None; units.len()], None),
        };
        Self::assemble(units, by_id, embeddings, embedder_id)
    }

    fn assemble(
        units: Vec<LogicUnit>,
        by_id: HashMap<String, usize>,
        embeddings: Vec<Option<Embedding<S>>>,
        embedder_id: Option<String>,
    ) -> Result<Self, KbError> {
        let dim = embeddings.iter().flatten().map(Embedding::dim).next().unwrap_or(0);
        if let Some(bad) = embeddings.iter().flatten().find(|e| e.dim() != dim) {
            return Err(KbError::Dimension { expected: dim, got: bad.dim() });
        }
        let entries = units
            .iter()
            .zip(embeddings)
            .map(|(u, embedding)| IndexEntry { lu_id: u.id.clone(), header: u.header.clone(), embedding })
            .collect();
        let info = BuildInfo { embedder_id, dim, built_at: None, corpus_digest: corpus_digest(&units) };
        Ok(Self { units, entries, by_id, info })
    }

    pub fn empty() -> Self {
        Self { units: Vec::new(), entries: Vec::new(), by_id: HashMap::new(), info: BuildInfo::default() }
    }

    pub fn with_built_at(mut self, ts: impl Into<String>) -> Self {
        self.info.built_at = Some(ts.into());
        self
    }

    pub fn units(&self) -> &[LogicUnit] {
        &self.units
    }

    pub fn entries(&self) -> &[IndexEntry<S>] {
        &self.entries
    }

    pub fn info(&self) -> &BuildInfo {
        &self.info
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn get(&self, lu_id: &str) -> Option<&LogicUnit> {
        self.by_id.get(lu_id).map(|&i| &self.units[i])
    }

    pub fn position(&self, lu_id: &str) -> Option<usize> {
        self.by_id.get(lu_id).copied()
    }

    pub fn is_dense(&self) -> bool {
        self.info.embedder_id.is_some()
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.units.iter().map(|u| u.meta.source_doc_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Top-`k` units by query–header similarity, descending, ties by
    /// ascending id.
    pub fn retrieve(
        &self,
        query: &str,
        k: usize,
        embedder: Option<&dyn Embedder<S>>,
        scope: &Scope,
    ) -> Result<Vec<Hit<S>>, KbError> {
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        if self.is_empty() || query.trim().is_empty() {
            return Ok(Vec::new());
        }
        let scores: Vec<S> = if self.is_dense() {
            let e = embedder.ok_or(KbError::EmbedderRequired)?;
            let q = e.embed_one(query)?;
            if q.dim() != self.info.dim {
                return Err(KbError::Dimension { expected: self.info.dim, got: q.dim() });
            }
            self.entries.iter().map(|en| en.embedding.as_ref().map_or(S::zero(), |v| v.dot(&q))).collect()
        } else {
            let qt = token_set(query);
            self.entries.iter().map(|en| S::from_f64_lossy(jaccard(&qt, &token_set(&en.header)))).collect()
        };
        Ok(self.rank(&scores, k, scope))
    }

    /// Ranks precomputed scores (one per unit).
    pub fn rank(&self, scores: &[S], k: usize, scope: &Scope) -> Vec<Hit<S>> {
        let mut hits: Vec<Hit<S>> = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| scope.admits(&self.units[*i]))
            .map(|(i, &s)| {
                let score = s.max(-S::one()).min(S::one());
                Hit { index: i, lu_id: self.units[i].id.clone(), score }
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.lu_id.cmp(&b.lu_id))
        });
        hits.truncate(k);
        hits
    }

    /// New snapshot with every unit of `doc_id` replaced by `replacement`.
    /// Surviving entries keep their vectors; only new headers are embedded.
    pub fn replace_doc(
        &self,
        doc_id: &str,
        replacement: Vec<LogicUnit>,
        embedder: Option<&dyn Embedder<S>>,
    ) -> Result<Self, KbError> {
        let mut units = Vec::with_capacity(self.units.len() + replacement.len());
        let mut embeddings = Vec::with_capacity(units.capacity());
        for (u, e) in self.units.iter().zip(&self.entries) {
            if u.meta.source_doc_id != doc_id {
                units.push(u.clone());
                embeddings.push(e.embedding.clone());
            }
        }
        let fresh: Vec<Option<Embedding<S>>> = match (self.is_dense() || self.is_empty(), embedder) {
            (true, Some(e)) if !replacement.is_empty() => {
                let headers: Vec<&str> = replacement.iter().map(|u| u.header.as_str()).collect();
                e.embed(&headers)?.into_iter().map(Some).collect()
            }
            (true, None) if self.is_dense() => return Err(KbError::EmbedderRequired),
            _ => vec![None; replacement.len()],
        };
        units.extend(replacement);
        embeddings.extend(fresh);
        let by_id = index_ids(&units)?;
        let embedder_id = match (&self.info.embedder_id, embedder) {
            (Some(id), _) => Some(id.clone()),
            (None, Some(e)) if self.is_empty() => Some(e.id()),
            _ => None,
        };
        Self::assemble(units, by_id, embeddings, embedder_id)
    }

    /// Re-embeds every header with `embedder`.
    pub fn reembed(&self, embedder: &dyn Embedder<S>) -> Result<Self, KbError> {
        Self::build(self.units.clone(), Some(embedder))
    }

    /// Where each CONTINUE/CROSS branch of `lu_id` leads: the best-scoring
    /// other unit (same document for CONTINUE) at or above `floor`.
    pub fn neighbors(
        &self,
        lu_id: &str,
        embedder: Option<&dyn Embedder<S>>,
        floor: f64,
    ) -> Result<Vec<Neighbor>, KbError> {
        let Some(lu) = self.get(lu_id) else { return Ok(Vec::new()) };
        let mut out = Vec::with_capacity(lu.linker.len());
        for (i, b) in lu.linker.iter().enumerate() {
            let token = b.token.known();
            let target = match token {
                Some(LinkerToken::Mitigate) => None,
                _ => {
                    let scope = if token == Some(LinkerToken::Cross) {
                        Scope::all()
                    } else {
                        Scope::doc(lu.meta.source_doc_id.clone())
                    }
                    .excluding(lu.id.clone());
                    self.retrieve(b.query(), 1, embedder, &scope)?
                        .into_iter()
                        .find(|h| h.score.to_f64_lossy() >= floor)
                        .map(|h| (h.lu_id, h.score.to_f64_lossy()))
                }
            };
            out.push(Neighbor {
                branch: i,
                token: token.map(|t| t.as_str().to_string()),
                condition: b.condition.clone(),
                next_intent: b.next_intent.clone(),
                target: target.as_ref().map(|t| t.0.clone()),
                score: target.map(|t| t.1),
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub branch: usize,
    pub token: Option<String>,
    pub condition: String,
    pub next_intent: String,
    pub target: Option<String>,
    pub score: Option<f64>,
}

fn index_ids(units: &[LogicUnit]) -> Result<HashMap<String, usize>, KbError> {
    let mut by_id = HashMap::with_capacity(units.len());
    for (i, u) in units.iter().enumerate() {
        if by_id.insert(u.id.clone(), i).is_some() {
            return Err(KbError::DuplicateId(u.id.clone()));
        }
    }
    Ok(by_id)
}

/// A shareable snapshot handle.
pub type SharedKb<S> = Arc<KnowledgeBase<S>>;
