//! One generation primitive over interchangeable backends.
//!
//! Every stage talks to a [`Gateway`], which validates requests, enforces the
//! prompt-length limit in the backend's own token units, and checks that the
//! backend returned exactly `n` completions.

mod http;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpOptions};
pub use scripted::{load_fixture, prompt_hash, FixtureRecord, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, n: usize, temperature: f64, max_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            n,
            temperature,
            max_tokens,
            seed: None,
            stop: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.n == 0 {
            return Err(GatewayError::InvalidRequest("n must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub completions: Vec<String>,
    pub token_counts: Vec<usize>,
    pub backend_id: String,
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("server returned HTTP {status} after {attempts} attempt(s): {message}")]
    Status { status: u16, attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("no fixture entry for prompt sha256 {prompt_hash}")]
    FixtureMiss { prompt_hash: String },

    #[error("fixture line {line}: {message}")]
    FixtureParse { line: usize, message: String },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("prompt has {tokens} tokens, limit is {limit}")]
    PromptTooLong { tokens: usize, limit: usize },
}

impl GatewayError {
    /// Network-level failures and server-side errors; worth retrying later.
    pub fn is_transport(&self) -> bool {
        match self {
            GatewayError::Transport { .. } => true,
            GatewayError::Status { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// A text generator. Implementations must be callable from many threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError>;

    /// Token count in this backend's units, when it can tell.
    fn count_tokens(&self, _text: &str) -> Option<usize> {
        None
    }
}

/// Whitespace-separated symbols; the unit used by the toy and scripted backends.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    max_prompt_len: Option<usize>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            max_prompt_len: None,
        }
    }

    pub fn with_prompt_limit(mut self, limit: usize) -> Self {
        self.max_prompt_len = Some(limit);
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        request.validate()?;
        if let Some(limit) = self.max_prompt_len {
            if let Some(tokens) = self.backend.count_tokens(&request.prompt) {
                if tokens > limit {
                    return Err(GatewayError::PromptTooLong { tokens, limit });
                }
            }
        }
        let response = self.backend.generate(request)?;
        if response.completions.len() != request.n || response.token_counts.len() != request.n {
            return Err(GatewayError::Protocol(format!(
                "requested {} completions, backend returned {} ({} token counts)",
                request.n,
                response.completions.len(),
                response.token_counts.len()
            )));
        }
        Ok(response)
    }
}
