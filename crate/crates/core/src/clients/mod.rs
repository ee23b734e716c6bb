//! Model-service roles and their transports.
//!
//! Four roles are consumed by the pipeline: a commonsense reaction generator,
//! a sentence embedder, a polarity classifier and an instruction-following
//! completer. Each is a trait so the HTTP client and the offline
//! [`MockClient`] are interchangeable.

mod http;
mod mock;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClient, InferenceEndpoint};
pub use mock::{mock_hash, CallCounts, MockClient, MockConfig, REFUSAL_SENTINEL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{endpoint}: request failed after {attempts} attempt(s): {cause}")]
    Request {
        endpoint: String,
        attempts: u32,
        cause: String,
    },
    #[error("embedding dimension mismatch at index {index}: expected {expected}, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
}

impl ClientError {
    /// Transport-level failures (as opposed to caller mistakes).
    pub fn is_transport(&self) -> bool {
        !matches!(self, ClientError::Precondition(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "POSITIVE",
            Polarity::Negative => "NEGATIVE",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarityVerdict {
    pub label: Polarity,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Decode {
    #[default]
    Greedy,
    Sampled {
        seed: u64,
    },
}

pub trait ReactionGenerator: Send + Sync {
    /// Queries the xReact relation for a whole document. The returned string
    /// is the service's surface form, trimmed; it may be `"none"`.
    fn generate_reaction(&self, document_text: &str) -> Result<String, ClientError>;
}

pub trait Embedder: Send + Sync {
    /// One vector per input, in input order, all of equal dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError>;
}

pub trait PolarityClassifier: Send + Sync {
    fn classify_polarity(&self, document_text: &str) -> Result<PolarityVerdict, ClientError>;
}

pub trait Completer: Send + Sync {
    fn complete(&self, instruction: &str, decode: Decode) -> Result<String, ClientError>;
}

/// The four roles bundled together. Roles may point at different backends.
#[derive(Clone)]
pub struct Clients {
    pub generator: Arc<dyn ReactionGenerator>,
    pub embedder: Arc<dyn Embedder>,
    pub polarity: Arc<dyn PolarityClassifier>,
    pub completer: Arc<dyn Completer>,
}

impl Clients {
    /// Every role served by the same mock instance.
    pub fn mock(mock: Arc<MockClient>) -> Self {
        Self {
            generator: mock.clone(),
            embedder: mock.clone(),
            polarity: mock.clone(),
            completer: mock,
        }
    }
}

pub(crate) fn require_text(what: &str, text: &str) -> Result<(), ClientError> {
    if text.trim().is_empty() {
        Err(ClientError::Precondition(format!(
            "{what} must be nonempty"
        )))
    } else {
        Ok(())
    }
}

pub(crate) fn require_texts(texts: &[String]) -> Result<(), ClientError> {
    if texts.is_empty() {
        return Err(ClientError::Precondition(
            "embed requires at least one text".into(),
        ));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(ClientError::Precondition(format!(
            "embed text at index {i} is empty"
        )));
    }
    Ok(())
}

/// Checks the batch shape contract: one vector per text, all with one dimension.
pub(crate) fn check_batch(
    expected_len: usize,
    vectors: &[EmbeddingVector],
    declared_dim: Option<usize>,
) -> Result<(), ClientError> {
    if vectors.len() != expected_len {
        return Err(ClientError::Precondition(format!(
            "embedder returned {} vectors for {} texts",
            vectors.len(),
            expected_len
        )));
    }
    let Some(first) = vectors.first() else {
        return Ok(());
    };
    let dim = declared_dim.unwrap_or(first.dim());
    if dim == 0 {
        return Err(ClientError::DimensionMismatch {
            index: 0,
            expected: 1,
            found: 0,
        });
    }
    for (index, v) in vectors.iter().enumerate() {
        if v.dim() != dim {
            return Err(ClientError::DimensionMismatch {
                index,
                expected: dim,
                found: v.dim(),
            });
        }
    }
    Ok(())
}
