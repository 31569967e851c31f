//! Uniform LLM access: an HTTP chat-completions client, deterministic mock
//! models for offline runs, a response cache, and text embedders.

mod cache;
mod client;
mod embed;
mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{AuditLog, CachedLlm, LlmExchange};
pub use client::{EndpointConfig, HttpLlm};
pub use embed::{tokenize, Embedder, Embedding, HashEmbedder, RemoteEmbedder, DEFAULT_EMBED_DIM};
pub use mock::{candidate_block, make_mock, MockKind, MockLlm};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("request has no messages")]
    EmptyRequest,
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    RetriesExhausted { attempts: u32, last_status: Option<u16>, message: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LlmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
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

/// Test-only side channel for the oracle mock. Never rendered into prompts
/// and never serialized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleHint {
    /// The rendered candidate line of the ground-truth item.
    pub ground_truth_line: Option<String>,
    /// True label for binary (CTR) questions.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub hint: Option<OracleHint>,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        Self { messages, hint: None }
    }

    pub fn single(user_text: impl Into<String>) -> Self {
        Self::new(vec![Message::user(user_text)])
    }

    pub fn with_hint(mut self, hint: OracleHint) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }

    /// Canonical serialization of the conversation, used for hashing.
    pub fn transcript(&self) -> String {
        serde_json::to_string(&self.messages).expect("messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency: Duration,
    pub cached: bool,
}

impl Completion {
    pub fn immediate(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            attempts: 1,
            latency: Duration::ZERO,
            cached: false,
        }
    }
}

/// Anything that can answer a chat request.
pub trait Llm: Send + Sync {
    /// Stable identifier (endpoint + model, or mock spec) for cache keys and
    /// reports.
    fn name(&self) -> String;

    fn complete(&self, request: &ChatRequest) -> Result<Completion>;

    /// Whether this model runs offline and deterministically.
    fn is_mock(&self) -> bool {
        false
    }
}

impl<T: Llm + ?Sized> Llm for std::sync::Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        (**self).complete(request)
    }

    fn is_mock(&self) -> bool {
        (**self).is_mock()
    }
}

impl<T: Llm + ?Sized> Llm for &T {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        (**self).complete(request)
    }

    fn is_mock(&self) -> bool {
        (**self).is_mock()
    }
}
