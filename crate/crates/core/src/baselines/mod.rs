//! Comparison paradigms: fixed-size chunks and whole documents, run through
//! the same scripted harness as logic-unit sessions.

mod chunk;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{Embedder, Embedding};
use crate::kb::KbError;
use crate::lu::SourceDocument;
use crate::metrics::{EvalRecord, Paradigm, StepOutcome};
use crate::scalar::Scalar;
use crate::session::{step_matches, Engine, ResponseKind, SessionError, SessionStatus, TaskScript, TranscriptTurn, TurnInput};
use crate::text::{content_tokens, coverage, jaccard, normalize_heading, prefix_tokens, token_set, TokenCounter};

pub use chunk::{
    char_slice, chunks_from_jsonl, chunks_to_jsonl, recursive_chunk, Chunk, ChunkConfig, ChunkError,
};

/// Chunks handed to generation per turn.
pub const CHUNK_K: usize = 5;
/// Leading tokens of a document used, with its title, as its retrieval key.
pub const DOC_KEY_TOKENS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("empty query")]
    EmptyQuery,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Exhaustive similarity search over text keys.
struct KeyIndex<S> {
    ids: Vec<String>,
    keys: Vec<String>,
    vectors: Option<Vec<Embedding<S>>>,
}

impl<S: Scalar> KeyIndex<S> {
    fn build(ids: Vec<String>, keys: Vec<String>, embedder: Option<&dyn Embedder<S>>) -> Result<Self, BaselineError> {
        let vectors = match embedder {
            Some(e) if !keys.is_empty() => {
                let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
                Some(e.embed(&refs).map_err(KbError::Embedding)?)
            }
            _ => None,
        };
        Ok(Self { ids, keys, vectors })
    }

    /// Top `k` positions, descending score, ties by ascending id.
    fn top(&self, query: &str, k: usize, embedder: Option<&dyn Embedder<S>>) -> Result<Vec<(usize, f64)>, BaselineError> {
        let scores: Vec<f64> = match (&self.vectors, embedder) {
            (Some(vs), Some(e)) => {
                let q = e.embed_one(query).map_err(KbError::Embedding)?;
                vs.iter().map(|v| v.dot(&q).to_f64_lossy()).collect()
            }
            _ => {
                let q = token_set(query);
                self.keys.iter().map(|k| jaccard(&q, &token_set(k))).collect()
            }
        };
        let mut order: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        order.truncate(k);
        Ok(order)
    }
}

pub struct ChunkIndex<S> {
    chunks: Vec<Chunk>,
    index: KeyIndex<S>,
}

impl<S: Scalar> ChunkIndex<S> {
    pub fn build(chunks: Vec<Chunk>, embedder: Option<&dyn Embedder<S>>) -> Result<Self, BaselineError> {
        let index = KeyIndex::build(
            chunks.iter().map(|c| c.id.clone()).collect(),
            chunks.iter().map(|c| c.text.clone()).collect(),
            embedder,
        )?;
        Ok(Self { chunks, index })
    }

    /// Chunks every document of `docs`.
    pub fn from_docs(
        docs: &[SourceDocument],
        cfg: &ChunkConfig,
        counter: &dyn TokenCounter,
        embedder: Option<&dyn Embedder<S>>,
    ) -> Result<Self, BaselineError> {
        let mut chunks = Vec::new();
        for d in docs {
            chunks.extend(recursive_chunk(&d.id, &d.raw_text, cfg, counter)?);
        }
        Self::build(chunks, embedder)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn retrieve(&self, query: &str, k: usize, embedder: Option<&dyn Embedder<S>>) -> Result<Vec<&Chunk>, BaselineError> {
        if query.trim().is_empty() {
            return Err(BaselineError::EmptyQuery);
        }
        Ok(self.index.top(query, k, embedder)?.into_iter().map(|(i, _)| &self.chunks[i]).collect())
    }
}

pub struct DocIndex<S> {
    docs: Vec<SourceDocument>,
    index: KeyIndex<S>,
}

/// Title plus the first 200 tokens.
pub fn doc_key(doc: &SourceDocument) -> String {
    format!("{}\n{}", doc.title, prefix_tokens(&doc.raw_text, DOC_KEY_TOKENS))
}

impl<S: Scalar> DocIndex<S> {
    pub fn build(docs: Vec<SourceDocument>, embedder: Option<&dyn Embedder<S>>) -> Result<Self, BaselineError> {
        let index = KeyIndex::build(docs.iter().map(|d| d.id.clone()).collect(), docs.iter().map(doc_key).collect(), embedder)?;
        Ok(Self { docs, index })
    }

    pub fn docs(&self) -> &[SourceDocument] {
        &self.docs
    }

    /// The single best document. A query equal to a title selects that
    /// document outright.
    pub fn retrieve(&self, query: &str, embedder: Option<&dyn Embedder<S>>) -> Result<&SourceDocument, BaselineError> {
        let q = query.trim();
        if q.is_empty() {
            return Err(BaselineError::EmptyQuery);
        }
        if self.docs.is_empty() {
            return Err(BaselineError::EmptyCorpus);
        }
        if let Some(d) = self.docs.iter().find(|d| d.title.trim().eq_ignore_ascii_case(q)) {
            return Ok(d);
        }
        let top = self.index.top(q, 1, embedder)?;
        Ok(&self.docs[top[0].0])
    }
}

/// Module-level convenience over a one-off index.
pub fn doc_retrieve<'a, S: Scalar>(
    index: &'a DocIndex<S>,
    query: &str,
    embedder: Option<&dyn Embedder<S>>,
) -> Result<&'a SourceDocument, BaselineError> {
    index.retrieve(query, embedder)
}

/// A heading and the text under it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub heading: String,
    pub text: String,
}

/// Splits markdown context into heading blocks; text before the first
/// heading is dropped.
pub fn heading_blocks(context: &str) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::new();
    let mut in_fence = false;
    for line in context.lines() {
        let t = line.trim_start();
        if t.starts_with("```") {
            in_fence = !in_fence;
        }
        if !in_fence && t.starts_with('#') {
            let heading = t.trim_start_matches('#').trim();
            if !heading.is_empty() {
                blocks.push(Block { heading: heading.to_string(), text: String::new() });
                continue;
            }
        }
        if let Some(b) = blocks.last_mut() {
            b.text.push_str(line);
            b.text.push('\n');
        }
    }
    blocks
}

/// Extractive stand-in for the generator: the unseen block covering the
/// most query tokens, earliest first on ties.
pub fn extract_step<'a>(blocks: &'a [Block], query: &str, seen: &BTreeSet<String>) -> Option<&'a Block> {
    let q = content_tokens(query);
    let mut best: Option<(&Block, f64)> = None;
    for b in blocks {
        if seen.contains(&normalize_heading(&b.heading)) {
            continue;
        }
        let s = coverage(&q, &content_tokens(&format!("{}\n{}", b.heading, b.text)));
        if s > 0.0 && best.is_none_or(|(_, bs)| s > bs) {
            best = Some((b, s));
        }
    }
    best.map(|(b, _)| b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmRun {
    pub record: EvalRecord,
    pub transcript: Vec<TranscriptTurn>,
}

/// Everything needed to run one task under each paradigm.
pub struct Bench<S> {
    engine: Engine<S>,
    chunks: ChunkIndex<S>,
    docs: DocIndex<S>,
    embedder: Option<Arc<dyn Embedder<S>>>,
    pub chunk_k: usize,
}

impl<S: Scalar> Bench<S> {
    pub fn new(
        engine: Engine<S>,
        docs: Vec<SourceDocument>,
        chunk_cfg: &ChunkConfig,
        embedder: Option<Arc<dyn Embedder<S>>>,
    ) -> Result<Self, BaselineError> {
        let chunks = ChunkIndex::from_docs(&docs, chunk_cfg, engine.counter(), embedder.as_deref())?;
        let docs = DocIndex::build(docs, embedder.as_deref())?;
        Ok(Self { engine, chunks, docs, embedder, chunk_k: CHUNK_K })
    }

    pub fn engine(&self) -> &Engine<S> {
        &self.engine
    }

    pub fn chunk_index(&self) -> &ChunkIndex<S> {
        &self.chunks
    }

    pub fn doc_index(&self) -> &DocIndex<S> {
        &self.docs
    }

    pub fn run(&self, paradigm: Paradigm, task: &TaskScript) -> Result<ParadigmRun, SessionError> {
        match paradigm {
            Paradigm::Thread => {
                let (record, transcript) = self.engine.run_scripted_with_transcript(task)?;
                Ok(ParadigmRun { record, transcript })
            }
            Paradigm::Chunk | Paradigm::Doc => self.run_baseline(paradigm, task),
        }
    }

    /// Units in context for `query`: (ids, concatenated text, tokens).
    fn context(&self, paradigm: Paradigm, query: &str) -> Result<(Vec<String>, String, usize), SessionError> {
        let counter = self.engine.counter();
        let e = self.embedder.as_deref();
        let wrap = |err: BaselineError| match err {
            BaselineError::Kb(k) => SessionError::Kb(k),
            other => SessionError::Transcript(other.to_string()),
        };
        match paradigm {
            Paradigm::Chunk => {
                let hits = self.chunks.retrieve(query, self.chunk_k, e).map_err(wrap)?;
                let text = hits.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n\n");
                let tokens = hits.iter().map(|c| counter.count(&c.text)).sum();
                Ok((hits.iter().map(|c| c.id.clone()).collect(), text, tokens))
            }
            _ => {
                let d = self.docs.retrieve(query, e).map_err(wrap)?;
                Ok((vec![d.id.clone()], d.raw_text.clone(), counter.count(&d.raw_text)))
            }
        }
    }

    fn run_baseline(&self, paradigm: Paradigm, task: &TaskScript) -> Result<ParadigmRun, SessionError> {
        if task.steps.is_empty() {
            return Err(SessionError::EmptyTask);
        }
        let question = task.question.trim();
        if question.is_empty() {
            return Err(SessionError::EmptyInput("question"));
        }
        let mut transcript = Vec::new();
        let mut seen = BTreeSet::new();
        let mut presented = Vec::new();
        let mut steps = Vec::with_capacity(task.steps.len());
        let mut input = TurnInput::Start { text: question.to_string() };
        let mut query = question.to_string();
        for (i, step) in task.steps.iter().enumerate() {
            let n = transcript.len() as u32 + 1;
            let mut turn = TranscriptTurn::new(n, input.clone());
            let (ids, context, tokens) = self.context(paradigm, &query)?;
            let blocks = heading_blocks(&context);
            let block = extract_step(&blocks, &query, &seen);
            turn.query = Some(query.clone());
            turn.scope = Some("all".into());
            turn.top_k = ids;
            turn.retrieved_tokens = tokens;
            turn.response = if block.is_some() { ResponseKind::StepInstruction } else { ResponseKind::NoInfo };
            turn.status = SessionStatus::AwaitingFeedback;
            transcript.push(turn);
            let success = block.is_some_and(|b| step_matches(&b.heading, &step.expected_header));
            if let Some(b) = block {
                seen.insert(normalize_heading(&b.heading));
                presented.push(b.heading.clone());
            }
            // The operator carries out the expected step either way.
            seen.insert(normalize_heading(&step.expected_header));
            steps.push(StepOutcome::new(success, !success || step.forced_intervention));
            input = TurnInput::Feedback { text: step.outcome.clone() };
            query = format!("{question} {}", step.outcome);
            if i + 1 == task.steps.len() {
                let mut last = TranscriptTurn::new(n + 1, input.clone());
                let ok = steps.last().is_some_and(|s| s.success);
                last.response = if ok { ResponseKind::Mitigated } else { ResponseKind::Escalate };
                last.status = if ok { SessionStatus::Mitigated } else { SessionStatus::Escalated };
                transcript.push(last);
            }
        }
        let final_status = transcript.last().map(|t| t.status).unwrap_or(SessionStatus::Escalated);
        let record = EvalRecord {
            task_id: task.id.clone(),
            paradigm,
            turns: (transcript.len() as u32 - 1).max(1),
            final_status,
            retrieved_tokens: transcript.iter().map(|t| t.retrieved_tokens as u64).sum(),
            retrieval_turns: transcript.iter().filter(|t| t.retrieved_tokens > 0).count() as u32,
            generated_items: presented,
            truth_items: task.truth(),
            steps,
        };
        Ok(ParadigmRun { record, transcript })
    }

    /// Runs every task under `paradigm`.
    pub fn run_all(&self, paradigm: Paradigm, tasks: &[TaskScript]) -> Result<Vec<ParadigmRun>, SessionError> {
        tasks.iter().map(|t| self.run(paradigm, t)).collect()
    }
}
