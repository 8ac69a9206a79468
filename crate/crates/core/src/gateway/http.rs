//! OpenAI-compatible chat-completions and embeddings endpoints.
//!
//! Endpoints and credentials come from `THREADKB_CHAT_URL`,
//! `THREADKB_EMBED_URL` and `THREADKB_API_KEY`; model names from
//! `THREADKB_CHAT_MODEL` and `THREADKB_EMBED_MODEL`.

use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{check_texts, ChatModel, ChatParams, Embedder, Embedding, GatewayError, TokenBucket};
use crate::scalar::Scalar;

const DEFAULT_CHAT_MODEL: &str = "gpt-4";
const DEFAULT_EMBED_MODEL: &str = "text-embedding-ada-002";

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

fn client(timeout_secs: u64) -> Result<reqwest::blocking::Client, GatewayError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| GatewayError::Config(e.to_string()))
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    limiter: Option<&TokenBucket>,
    body: &serde_json::Value,
) -> Result<String, GatewayError> {
    if let Some(l) = limiter {
        l.acquire();
    }
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            GatewayError::Timeout
        } else {
            GatewayError::Transport(e.to_string())
        }
    })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(GatewayError::Http { status: status.as_u16(), body: text });
    }
    Ok(text)
}

pub struct OpenAiChat {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Option<Arc<TokenBucket>>,
}

impl OpenAiChat {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout_secs: u64) -> Result<Self, GatewayError> {
        Ok(Self { url: url.into(), model: model.into(), api_key, client: client(timeout_secs)?, limiter: None })
    }

    pub fn from_env(timeout_secs: u64, limiter: Option<Arc<TokenBucket>>) -> Result<Self, GatewayError> {
        let url = env("THREADKB_CHAT_URL").ok_or_else(|| GatewayError::Config("THREADKB_CHAT_URL is not set".into()))?;
        let model = env("THREADKB_CHAT_MODEL").unwrap_or_else(|| DEFAULT_CHAT_MODEL.into());
        let mut chat = Self::new(url, model, env("THREADKB_API_KEY"), timeout_secs)?;
        chat.limiter = limiter;
        Ok(chat)
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl ChatModel for OpenAiChat {
    fn id(&self) -> String {
        format!("openai:{}", self.model)
    }

    fn complete(&self, prompt: &str, params: &ChatParams) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
        });
        let text = post_json(&self.client, &self.url, self.api_key.as_deref(), self.limiter.as_deref(), &body)?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Transport(format!("bad chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Transport("chat response without content".into()))
    }
}

pub struct OpenAiEmbedder {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Option<Arc<TokenBucket>>,
}

impl OpenAiEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout_secs: u64) -> Result<Self, GatewayError> {
        Ok(Self { url: url.into(), model: model.into(), api_key, client: client(timeout_secs)?, limiter: None })
    }

    pub fn from_env(timeout_secs: u64, limiter: Option<Arc<TokenBucket>>) -> Result<Self, GatewayError> {
        let url = env("THREADKB_EMBED_URL").ok_or_else(|| GatewayError::Config("THREADKB_EMBED_URL is not set".into()))?;
        let model = env("THREADKB_EMBED_MODEL").unwrap_or_else(|| DEFAULT_EMBED_MODEL.into());
        let mut e = Self::new(url, model, env("THREADKB_API_KEY"), timeout_secs)?;
        e.limiter = limiter;
        Ok(e)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl<S: Scalar> Embedder<S> for OpenAiEmbedder {
    fn id(&self) -> String {
        format!("openai:{}", self.model)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, GatewayError> {
        check_texts(texts)?;
        let body = json!({"model": self.model, "input": texts});
        let text = post_json(&self.client, &self.url, self.api_key.as_deref(), self.limiter.as_deref(), &body)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Transport(format!("bad embedding response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(GatewayError::Transport(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|d| d.index);
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.iter().any(|v| !v.is_finite()) {
                    return Err(GatewayError::Transport("non-finite embedding component".into()));
                }
                Ok(Embedding::normalized(d.embedding.into_iter().map(S::from_f64_lossy).collect()))
            })
            .collect()
    }
}
