//! Chat, embedding and re-ranking behind one interface.
//!
//! [`ModelBackend`] is what a transport implements ([`HttpBackend`] for
//! OpenAI-compatible servers, [`MockBackend`] for tests). [`Gateway`] wraps a
//! backend and enforces the boundary contracts: request validation,
//! placeholder substitution for empty texts, L2 normalization, consistent
//! embedding dimension, and rerank ordering.

mod http;
mod mock;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{tokens, Fixture, MockBackend};

/// Temperature used where a deterministic reply is wanted.
pub const LOW_TEMPERATURE: f64 = 0.0;
/// Temperature used for diverse sampling across attempts.
pub const MODERATE_TEMPERATURE: f64 = 0.7;
/// Substituted for empty texts before they are embedded.
pub const EMPTY_TEXT_PLACEHOLDER: &str = " ";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{endpoint} returned status {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("gave up on {endpoint} after {attempts} attempts: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        last: String,
    },
    #[error("malformed response from {endpoint}: {detail}")]
    Protocol { endpoint: String, detail: String },
    #[error("inconsistent embedding dimension: expected {expected}, got {got}")]
    InconsistentDimension { expected: usize, got: usize },
    #[error("embedding {0} has zero norm")]
    ZeroNorm(usize),
    #[error("reranker returned {got} scores for {expected} passages")]
    CountMismatch { expected: usize, got: usize },
    #[error("no mock fixture matches prompt starting with {0:?}")]
    NoFixture(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0} endpoint is not configured")]
    NotConfigured(&'static str),
    #[error("bad fixture {path}: {detail}")]
    Fixture { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.last() {
            Some(m) if m.role == Role::User => {}
            Some(_) => return Err(GatewayError::InvalidRequest("last message must have role user".into())),
            None => return Err(GatewayError::InvalidRequest("no messages".into())),
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message contents joined by newlines; what mock fixtures match on.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit L2 norm. Fails on an all-zero vector.
    pub fn normalized(raw: &[f64]) -> Option<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if raw.is_empty() || norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self {
            values: raw.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    /// Wraps values that are already unit norm (e.g. rows read from disk).
    pub fn from_unit(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankScore {
    pub candidate_index: usize,
    pub score: f64,
}

/// A transport for the three model capabilities.
pub trait ModelBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError>;

    /// Raw, possibly unnormalized vectors, one per text.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    /// `(passage index, score)` pairs in whatever order the server returns.
    fn rerank_raw(&self, query: &str, passages: &[String]) -> Result<Vec<(usize, f64)>, GatewayError>;

    fn has_reranker(&self) -> bool;

    fn chat_model(&self) -> &str;

    fn embed_model(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub endpoint: Option<String>,
    pub model: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

/// Transport settings shared by all three endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub backend: BackendKind,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub max_tokens: u32,
    pub mock_fixtures: Option<PathBuf>,
    pub mock_embed_dim: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            backend: BackendKind::Http,
            max_retries: 3,
            backoff_base_ms: 1000,
            timeout_secs: 120,
            max_in_flight: 4,
            max_tokens: 4096,
            mock_fixtures: None,
            mock_embed_dim: 8,
        }
    }
}

/// Enforces the gateway contracts over any [`ModelBackend`].
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    chat_calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("chat_model", &self.backend.chat_model())
            .field("embed_model", &self.backend.embed_model())
            .field("reranker", &self.backend.has_reranker())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl ModelBackend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn ModelBackend>) -> Self {
        Self {
            backend,
            chat_calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn chat_model(&self) -> &str {
        self.backend.chat_model()
    }

    pub fn embed_model(&self) -> &str {
        self.backend.embed_model()
    }

    pub fn has_reranker(&self) -> bool {
        self.backend.has_reranker()
    }

    /// Number of chat requests dispatched through this gateway (and clones).
    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        req.validate()?;
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.backend.chat(req)
    }

    /// One unit-norm vector per text, in input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("nothing to embed".into()));
        }
        let prepared: Vec<String> = texts
            .iter()
            .map(|t| if t.is_empty() { EMPTY_TEXT_PLACEHOLDER.to_string() } else { t.clone() })
            .collect();
        let raw = self.backend.embed_raw(&prepared)?;
        if raw.len() != texts.len() {
            return Err(GatewayError::CountMismatch {
                expected: texts.len(),
                got: raw.len(),
            });
        }
        let dim = raw[0].len();
        raw.iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != dim {
                    return Err(GatewayError::InconsistentDimension {
                        expected: dim,
                        got: v.len(),
                    });
                }
                EmbeddingVector::normalized(v).ok_or(GatewayError::ZeroNorm(i))
            })
            .collect()
    }

    /// Scores ordered by descending score, ties by ascending index.
    pub fn rerank(&self, query: &str, passages: &[String]) -> Result<Vec<RerankScore>, GatewayError> {
        if passages.is_empty() {
            return Err(GatewayError::InvalidRequest("no passages to rerank".into()));
        }
        let raw = self.backend.rerank_raw(query, passages)?;
        if raw.len() != passages.len() {
            return Err(GatewayError::CountMismatch {
                expected: passages.len(),
                got: raw.len(),
            });
        }
        let mut seen = vec![false; passages.len()];
        for &(idx, _) in &raw {
            if idx >= passages.len() || std::mem::replace(&mut seen[idx], true) {
                return Err(GatewayError::Protocol {
                    endpoint: "rerank".into(),
                    detail: format!("index {idx} is out of range or repeated"),
                });
            }
        }
        let mut scores: Vec<RerankScore> = raw
            .into_iter()
            .map(|(candidate_index, score)| RerankScore { candidate_index, score })
            .collect();
        scores.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.candidate_index.cmp(&b.candidate_index))
        });
        Ok(scores)
    }
}
