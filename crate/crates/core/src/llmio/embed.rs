use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{EndpointConfig, WireClient};
use super::{LlmError, Result};
use crate::hashing::fnv1a64;

pub const DEFAULT_EMBED_DIM: usize = 256;

/// L2-normalized vector (or all zeros).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalize `values` to unit length; all-zero input stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut values {
                *x /= norm;
            }
        }
        Embedding(values)
    }

    /// Wrap stored values as-is.
    pub fn from_raw(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

pub trait Embedder: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding>;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed bag-of-words: term counts bucketed by `fnv1a64(token) % dim`,
/// then L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(LlmError::Config("embedding dimension must be >= 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM }
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> String {
        format!("hash-bow-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        Ok(Embedding::normalized(v))
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    wire: WireClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(config: EndpointConfig, dim: usize) -> Result<Self> {
        Ok(Self {
            wire: WireClient::new(config)?,
            dim,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> String {
        format!("{}#{}", self.wire.config.base_url, self.wire.config.model)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let body = json!({ "model": self.wire.config.model, "input": text });
        let (v, _) = self.wire.post("embeddings", &body)?;
        let values: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::InvalidResponse("no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| LlmError::InvalidResponse("non-numeric embedding".into())))
            .collect::<Result<_>>()?;
        if values.len() != self.dim {
            return Err(LlmError::InvalidResponse(format!("expected dimension {}, got {}", self.dim, values.len())));
        }
        Ok(Embedding::normalized(values))
    }
}
