//! On-disk snapshot format.
//!
//! ```text
//! THREADKB<TAB>1<TAB>{header json}\n
//! one normalized LU JSON object per line (count lines)
//! little-endian vector block: count × dim values of the header dtype
//! ```
//! The header carries embedder id, dimension, count, dtype, build info and a
//! SHA-256 checksum of everything after the header line.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{index_ids, BuildInfo, KbError, KnowledgeBase};
use crate::gateway::Embedding;
use crate::lu::{hex_prefix, LogicUnit};
use crate::scalar::Scalar;

pub const KB_MAGIC: &str = "THREADKB";
pub const KB_VERSION: u32 = 1;

const MISMATCH_WARNING: &str = "index/embedder mismatch; re-embed recommended";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    embedder_id: Option<String>,
    dim: usize,
    count: usize,
    dtype: String,
    checksum: String,
    built_at: Option<String>,
    corpus_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub warnings: Vec<String>,
}

pub fn persist_to_writer<S: Scalar, W: Write>(kb: &KnowledgeBase<S>, mut out: W) -> Result<(), KbError> {
    let mut payload = Vec::new();
    for u in &kb.units {
        serde_json::to_writer(&mut payload, u).map_err(|e| KbError::Format(e.to_string()))?;
        payload.push(b'\n');
    }
    if kb.is_dense() {
        for e in &kb.entries {
            match &e.embedding {
                Some(v) => v.as_slice().iter().for_each(|x| x.write_le(&mut payload)),
                None => (0..kb.info.dim).for_each(|_| S::zero().write_le(&mut payload)),
            }
        }
    }
    let header = Header {
        embedder_id: kb.info.embedder_id.clone(),
        dim: kb.info.dim,
        count: kb.units.len(),
        dtype: S::DTYPE.to_string(),
        checksum: hex_prefix(&Sha256::digest(&payload), 64),
        built_at: kb.info.built_at.clone(),
        corpus_digest: kb.info.corpus_digest.clone(),
    };
    let header_json = serde_json::to_string(&header).map_err(|e| KbError::Format(e.to_string()))?;
    out.write_all(format!("{KB_MAGIC}\t{KB_VERSION}\t{header_json}\n").as_bytes())?;
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn persist<S: Scalar>(kb: &KnowledgeBase<S>, path: &Path) -> Result<(), KbError> {
    let tmp = path.with_extension("tmp");
    {
        let f = std::fs::File::create(&tmp)?;
        persist_to_writer(kb, std::io::BufWriter::new(f))?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<KnowledgeBase<S>, KbError> {
    load_with(path, None).map(|(kb, _)| kb)
}

/// Loads a snapshot; when `expected_embedder` differs from the one recorded
/// in the file, a warning is returned alongside the snapshot.
pub fn load_with<S: Scalar>(
    path: &Path,
    expected_embedder: Option<&str>,
) -> Result<(KnowledgeBase<S>, LoadReport), KbError> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes, expected_embedder)
}

fn read_values<S: Scalar>(block: &[u8], dtype: &str) -> Result<Vec<S>, KbError> {
    match dtype {
        d if d == S::DTYPE => Ok(block.chunks_exact(S::WIDTH).map(S::read_le).collect()),
        "f32" => Ok(block.chunks_exact(4).map(|c| S::from_f64_lossy(f32::read_le(c) as f64)).collect()),
        "f64" => Ok(block.chunks_exact(8).map(|c| S::from_f64_lossy(f64::read_le(c))).collect()),
        other => Err(KbError::Format(format!("unknown dtype {other:?}"))),
    }
}

fn width_of(dtype: &str) -> Result<usize, KbError> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(KbError::Format(format!("unknown dtype {other:?}"))),
    }
}

pub(crate) fn from_bytes<S: Scalar>(
    bytes: &[u8],
    expected_embedder: Option<&str>,
) -> Result<(KnowledgeBase<S>, LoadReport), KbError> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| KbError::Format("missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| KbError::Format("header is not UTF-8".into()))?;
    let mut parts = line.splitn(3, '\t');
    if parts.next() != Some(KB_MAGIC) {
        return Err(KbError::Format("bad magic".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| KbError::Format("bad version field".into()))?;
    if version != KB_VERSION {
        return Err(KbError::Version { found: version, expected: KB_VERSION });
    }
    let header: Header = serde_json::from_str(parts.next().unwrap_or(""))
        .map_err(|e| KbError::Format(format!("header: {e}")))?;
    let payload = &bytes[nl + 1..];
    if hex_prefix(&Sha256::digest(payload), 64) != header.checksum {
        return Err(KbError::Checksum);
    }

    let mut units: Vec<LogicUnit> = Vec::with_capacity(header.count);
    let mut pos = 0;
    for line_no in 0..header.count {
        let end = payload[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| pos + e)
            .ok_or_else(|| KbError::Format(format!("expected {} LU records, found {line_no}", header.count)))?;
        let lu = serde_json::from_slice(&payload[pos..end])
            .map_err(|source| KbError::Record { line: line_no + 2, source })?;
        units.push(lu);
        pos = end + 1;
    }
    let block = &payload[pos..];
    let embeddings: Vec<Option<Embedding<S>>> = if header.embedder_id.is_some() {
        let expected = header.count * header.dim * width_of(&header.dtype)?;
        if block.len() != expected {
            return Err(KbError::Format(format!("vector block has {} bytes, expected {expected}", block.len())));
        }
        let values = read_values::<S>(block, &header.dtype)?;
        if header.dim == 0 {
            vec![Some(Embedding::from_raw(Vec::new())); header.count]
        } else {
            values.chunks_exact(header.dim).map(|c| Some(Embedding::from_raw(c.to_vec()))).collect()
        }
    } else {
        if !block.is_empty() {
            return Err(KbError::Format("unexpected vector block in lexical index".into()));
        }
        vec![None; header.count]
    };

    let by_id = index_ids(&units)?;
    let mut kb = KnowledgeBase::assemble(units, by_id, embeddings, header.embedder_id.clone())?;
    kb.info = BuildInfo {
        embedder_id: header.embedder_id.clone(),
        dim: header.dim,
        built_at: header.built_at,
        corpus_digest: header.corpus_digest,
    };

    let mut report = LoadReport::default();
    if header.dtype != S::DTYPE {
        report.warnings.push(format!("vectors stored as {} converted to {}", header.dtype, S::DTYPE));
    }
    if let Some(expected) = expected_embedder {
        if header.embedder_id.as_deref() != Some(expected) {
            log::warn!("{MISMATCH_WARNING}");
            report.warnings.push(MISMATCH_WARNING.to_string());
        }
    }
    Ok((kb, report))
}
