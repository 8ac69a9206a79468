//! Offline providers.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{check_texts, last_script_key, ChatModel, ChatParams, Embedder, Embedding, GatewayError};
use crate::scalar::Scalar;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
enum ScriptEntry {
    Reply(String),
    Fail(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Text(String),
    File { file: String },
    Error { error: String },
}

/// Chat provider that answers from a fixed table keyed by the last
/// `[[SCRIPT:key]]` tag in the prompt.
///
/// Script files are JSON objects mapping keys to a reply string,
/// `{"file": "relative/path"}` or `{"error": "message"}` (an injected failure).
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    table: HashMap<String, ScriptEntry>,
}

impl ScriptedChat {
    pub fn with_reply(mut self, key: impl Into<String>, reply: impl Into<String>) -> Self {
        self.table.insert(key.into(), ScriptEntry::Reply(reply.into()));
        self
    }

    pub fn with_failure(mut self, key: impl Into<String>, message: impl Into<String>) -> Self {
        self.table.insert(key.into(), ScriptEntry::Fail(message.into()));
        self
    }

    /// Parses a script table; `file` entries resolve against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> Result<Self, GatewayError> {
        let raw: HashMap<String, RawEntry> =
            serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("script table: {e}")))?;
        let mut table = HashMap::with_capacity(raw.len());
        for (key, entry) in raw {
            let entry = match entry {
                RawEntry::Text(t) => ScriptEntry::Reply(t),
                RawEntry::Error { error } => ScriptEntry::Fail(error),
                RawEntry::File { file } => {
                    let path = base_dir.map(|d| d.join(&file)).unwrap_or_else(|| file.clone().into());
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| GatewayError::Config(format!("script file {}: {e}", path.display())))?;
                    ScriptEntry::Reply(text)
                }
            };
            table.insert(key, entry);
        }
        Ok(Self { table })
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("script table {}: {e}", path.display())))?;
        Self::from_json_str(&text, path.parent())
    }

    /// Adds every entry of `other`, replacing duplicates.
    pub fn merged(mut self, other: ScriptedChat) -> Self {
        self.table.extend(other.table);
        self
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl ChatModel for ScriptedChat {
    fn id(&self) -> String {
        "mock-scripted".into()
    }

    fn complete(&self, prompt: &str, _params: &ChatParams) -> Result<String, GatewayError> {
        let key = last_script_key(prompt).unwrap_or("");
        match self.table.get(key) {
            Some(ScriptEntry::Reply(r)) => Ok(r.clone()),
            Some(ScriptEntry::Fail(m)) => Err(GatewayError::Scripted(m.clone())),
            None => Err(GatewayError::NoScript(key.to_string())),
        }
    }

    fn uses_script_tags(&self) -> bool {
        true
    }
}

/// Feature-hashing bag-of-words embedder: lowercase tokens split on
/// non-alphanumerics, FNV-1a 64 hashed into `dim` buckets, counted, then
/// L2-normalized. Text without any token embeds to the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw bucket counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<u32> {
        let mut counts = vec![0u32; self.dim];
        for tok in crate::text::tokens(text) {
            counts[(fnv1a64(tok.as_bytes()) % self.dim as u64) as usize] += 1;
        }
        counts
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

impl<S: Scalar> Embedder<S> for HashingEmbedder {
    fn id(&self) -> String {
        format!("hash-fnv1a-{}", self.dim)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, GatewayError> {
        check_texts(texts)?;
        Ok(texts
            .iter()
            .map(|t| {
                let raw = self
                    .counts(t)
                    .into_iter()
                    .map(|c| S::from_u32(c).expect("bucket count fits the scalar"))
                    .collect();
                Embedding::normalized(raw)
            })
            .collect())
    }
}
