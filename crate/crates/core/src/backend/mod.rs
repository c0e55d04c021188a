//! Language-model backends behind a continuation log-probability contract.
//!
//! A backend receives a prompt plus candidate continuations and returns, for
//! each continuation, its tokens and the natural-log probability of every token
//! given the prompt and the preceding continuation tokens.

mod cassette;
mod http;
mod mock;
mod server;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{CassetteEntry, CassetteMode, RecordReplay};
pub use http::{HttpBackend, RetryPolicy, ENDPOINT_ENV, TOKEN_ENV};
pub use mock::{MockBehavior, MockRespondent, DEFAULT_MARGIN};
pub use server::{router, serve, ServerOptions};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuations: Vec<String>,
}

impl ScoreRequest {
    pub fn new(prompt: impl Into<String>, continuations: Vec<String>) -> Self {
        ScoreRequest {
            prompt: prompt.into(),
            continuations,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.continuations.is_empty() {
            return Err(BackendError::InvalidRequest("no continuations".into()));
        }
        if let Some(i) = self.continuations.iter().position(String::is_empty) {
            return Err(BackendError::InvalidRequest(format!("continuation {i} is empty")));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding; the cassette key.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("requests always serialize");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Tokens of one continuation and their log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl ContinuationScore {
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(format!(
                "{} tokens but {} logprobs",
                self.tokens.len(),
                self.logprobs.len()
            ));
        }
        if self.tokens.is_empty() {
            return Err("continuation has no tokens".into());
        }
        if let Some(lp) = self.logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(format!("logprob {lp} is not a finite value <= 0"));
        }
        Ok(())
    }

    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Body of a successful `/v1/score` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub model: String,
    pub results: Vec<ContinuationScore>,
}

impl ScoreResponse {
    /// Checks shape against the request it answers.
    pub fn validate_for(&self, req: &ScoreRequest) -> Result<(), BackendError> {
        if self.results.len() != req.continuations.len() {
            return Err(BackendError::Protocol(format!(
                "{} results for {} continuations",
                self.results.len(),
                req.continuations.len()
            )));
        }
        for (i, r) in self.results.iter().enumerate() {
            r.validate()
                .map_err(|e| BackendError::Protocol(format!("result {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Body of an error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub deterministic: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned {status}: {message}")]
    Unavailable { status: u16, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette has no entry for request {request_sha256}")]
    CassetteMiss { request_sha256: String },
    #[error("corrupt cassette: {0}")]
    CorruptCassette(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Transport failures and 5xx responses may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_) | BackendError::Unavailable { .. }
        )
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// One score per continuation, in request order.
    async fn score(&self, req: &ScoreRequest) -> Result<Vec<ContinuationScore>, BackendError>;
}

/// Validates the request, scores it and checks the response shape.
pub async fn score(
    backend: &dyn Backend,
    req: &ScoreRequest,
) -> Result<Vec<ContinuationScore>, BackendError> {
    req.validate()?;
    let results = backend.score(req).await?;
    let response = ScoreResponse {
        model: String::new(),
        results,
    };
    response.validate_for(req)?;
    Ok(response.results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ScoreRequest::new("", vec!["A".into()]).validate().is_err());
        assert!(ScoreRequest::new("p", vec![]).validate().is_err());
        assert!(ScoreRequest::new("p", vec!["A".into(), "".into()]).validate().is_err());
        assert!(ScoreRequest::new("p", vec!["A".into()]).validate().is_ok());
    }

    #[test]
    fn continuation_invariants() {
        let ok = ContinuationScore {
            tokens: vec!["Very".into(), " Accurate".into()],
            logprobs: vec![-0.5, -1.0],
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.total_logprob(), -1.5);
        let ragged = ContinuationScore {
            tokens: vec!["A".into()],
            logprobs: vec![-0.1, -0.2],
        };
        assert!(ragged.validate().is_err());
        let positive = ContinuationScore {
            tokens: vec!["A".into()],
            logprobs: vec![0.1],
        };
        assert!(positive.validate().is_err());
    }

    #[test]
    fn request_hash_is_stable() {
        let a = ScoreRequest::new("p", vec!["A".into(), "B".into()]);
        let b = ScoreRequest::new("p", vec!["B".into(), "A".into()]);
        assert_eq!(a.sha256(), a.clone().sha256());
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }
}
