//! Access to chat-completion and embedding models.
//!
//! Every pipeline stage talks to models through [`Gateway`] and the
//! [`Embedder`] trait. The offline providers in [`mock`] make the whole
//! system reproducible: scripted chat replies keyed by `[[SCRIPT:…]]` tags and
//! feature-hashing embeddings.

pub mod http;
pub mod mock;
mod rate;

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub use mock::{HashingEmbedder, ScriptedChat};
pub use rate::TokenBucket;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no script for key {0:?}")]
    NoScript(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("reply unparseable after retry: {0}")]
    Unparseable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid chat parameters: {0}")]
    InvalidParams(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Whether the provider itself is unreachable or failing.
    pub fn is_unavailable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout => true,
            GatewayError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatParams {
    pub temperature: f64,
    pub top_p: f64,
    /// Repair attempts for replies that must parse as JSON.
    pub max_turns_retry: u8,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self { temperature: 0.0, top_p: 1.0, max_turns_retry: 1 }
    }
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!("temperature {} < 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidParams(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

pub trait ChatModel: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, prompt: &str, params: &ChatParams) -> Result<String, GatewayError>;

    /// Scripted providers look replies up by `[[SCRIPT:…]]` tags in the prompt.
    fn uses_script_tags(&self) -> bool {
        false
    }
}

/// A unit-normalized embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<S>(Vec<S>);

impl<S: Scalar> Embedding<S> {
    /// Normalizes `raw` to unit L2 norm. All-zero input stays zero.
    pub fn normalized(mut raw: Vec<S>) -> Self {
        let norm = crate::scalar::l2_norm(&raw);
        if norm > S::zero() {
            for v in &mut raw {
                *v = *v / norm;
            }
        }
        Embedding(raw)
    }

    /// Wraps values that are already normalized (e.g. read back from disk).
    pub fn from_raw(values: Vec<S>) -> Self {
        Embedding(values)
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Dot product; equals cosine similarity for unit vectors.
    pub fn dot(&self, other: &Self) -> S {
        crate::scalar::dot(&self.0, &other.0)
    }

    pub fn into_vec(self) -> Vec<S> {
        self.0
    }
}

pub trait Embedder<S: Scalar>: Send + Sync {
    /// Stable identifier recorded in persisted indexes.
    fn id(&self) -> String;

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, GatewayError>;

    fn embed_one(&self, text: &str) -> Result<Embedding<S>, GatewayError> {
        Ok(self.embed(&[text])?.remove(0))
    }
}

pub(crate) fn check_texts(texts: &[&str]) -> Result<(), GatewayError> {
    match texts.iter().position(|t| t.trim().is_empty()) {
        Some(i) => Err(GatewayError::InvalidInput(format!("text {i} is empty"))),
        None => Ok(()),
    }
}

fn script_tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\[SCRIPT:([^\]]+)\]\]").unwrap())
}

/// Key of the last `[[SCRIPT:key]]` tag in `prompt`.
pub fn last_script_key(prompt: &str) -> Option<&str> {
    script_tag_regex()
        .captures_iter(prompt)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
}

const REPAIR_INSTRUCTION: &str =
    "Your previous reply could not be parsed. Return valid JSON only, with no surrounding prose.";

/// Chat access with structured-reply repair.
#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatModel>,
    params: ChatParams,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("chat", &self.chat.id()).field("params", &self.params).finish()
    }
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatModel>) -> Self {
        Self { chat, params: ChatParams::default() }
    }

    pub fn with_params(mut self, params: ChatParams) -> Self {
        self.params = params;
        self
    }

    pub fn params(&self) -> &ChatParams {
        &self.params
    }

    pub fn model_id(&self) -> String {
        self.chat.id()
    }

    /// A `[[SCRIPT:stage:key]]` line for scripted providers, empty otherwise.
    pub fn script_tag(&self, stage: &str, key: &str) -> String {
        if self.chat.uses_script_tags() {
            format!("\n[[SCRIPT:{stage}:{key}]]")
        } else {
            String::new()
        }
    }

    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        self.complete_with(prompt, &self.params)
    }

    pub fn complete_with(&self, prompt: &str, params: &ChatParams) -> Result<String, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidInput("empty prompt".into()));
        }
        params.validate()?;
        self.chat.complete(prompt, params)
    }

    /// Completes and parses the reply with `parse`. Unparseable replies get
    /// `max_turns_retry` repair prompts before the call fails.
    pub fn complete_parsed<T>(
        &self,
        prompt: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, GatewayError> {
        let mut reply = self.complete(prompt)?;
        if let Some(v) = parse(&reply) {
            return Ok(v);
        }
        let mut repair_prompt = prompt.to_string();
        for attempt in 0..self.params.max_turns_retry {
            repair_prompt.push_str("\n\n");
            repair_prompt.push_str(REPAIR_INSTRUCTION);
            if let Some(key) = last_script_key(prompt) {
                repair_prompt.push_str(&format!("\n[[SCRIPT:{key}:repair]]"));
            }
            log::debug!("repair attempt {} for unparseable reply", attempt + 1);
            reply = match self.complete(&repair_prompt) {
                Ok(r) => r,
                Err(GatewayError::NoScript(_)) => break,
                Err(e) => return Err(e),
            };
            if let Some(v) = parse(&reply) {
                return Ok(v);
            }
        }
        Err(GatewayError::Unparseable(truncate(&reply, 200)))
    }

    pub fn complete_json(&self, prompt: &str) -> Result<serde_json::Value, GatewayError> {
        self.complete_parsed(prompt, parse_json_reply)
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Parses a JSON value from a model reply, tolerating ```json fences and
/// leading prose such as "<RESPONSE>".
pub fn parse_json_reply(reply: &str) -> Option<serde_json::Value> {
    let t = reply.trim();
    if let Ok(v) = serde_json::from_str(t) {
        return Some(v);
    }
    for block in crate::markdown::fenced_blocks(t) {
        if let Ok(v) = serde_json::from_str(&t[block.content.clone()]) {
            return Some(v);
        }
    }
    let start = t.find(['{', '['])?;
    let end = t.rfind(['}', ']'])?;
    (end > start).then(|| serde_json::from_str(&t[start..=end]).ok()).flatten()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Mock,
    Openai,
}

impl std::str::FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Provider::Mock),
            "openai" => Ok(Provider::Openai),
            other => Err(format!("unknown provider {other:?} (expected mock|openai)")),
        }
    }
}

/// Provider selection; the only place where mock and real models diverge.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub provider: Provider,
    /// Script table for the mock chat provider.
    pub script: Option<PathBuf>,
    pub embedding_dim: usize,
    pub params: ChatParams,
    pub timeout_secs: u64,
    /// Token bucket for real providers: burst size and refill per second.
    pub rate_burst: u32,
    pub rate_per_sec: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Mock,
            script: None,
            embedding_dim: mock::DEFAULT_DIM,
            params: ChatParams::default(),
            timeout_secs: 60,
            rate_burst: 4,
            rate_per_sec: 2.0,
        }
    }
}

impl GatewayConfig {
    pub fn build_gateway(&self) -> Result<Gateway, GatewayError> {
        let chat: Arc<dyn ChatModel> = match self.provider {
            Provider::Mock => Arc::new(match &self.script {
                Some(path) => ScriptedChat::from_file(path)?,
                None => ScriptedChat::default(),
            }),
            Provider::Openai => Arc::new(http::OpenAiChat::from_env(self.timeout_secs, Some(self.limiter()))?),
        };
        Ok(Gateway::new(chat).with_params(self.params))
    }

    pub fn build_embedder<S: Scalar>(&self) -> Result<Arc<dyn Embedder<S>>, GatewayError> {
        Ok(match self.provider {
            Provider::Mock => Arc::new(HashingEmbedder::new(self.embedding_dim)),
            Provider::Openai => Arc::new(http::OpenAiEmbedder::from_env(self.timeout_secs, Some(self.limiter()))?),
        })
    }

    fn limiter(&self) -> Arc<TokenBucket> {
        Arc::new(TokenBucket::new(self.rate_burst, self.rate_per_sec))
    }
}
