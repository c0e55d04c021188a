use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;

use super::{
    Backend, BackendDescriptor, BackendError, ContinuationScore, ErrorBody, ScoreRequest,
    ScoreResponse,
};

pub const ENDPOINT_ENV: &str = "PSYPROBE_ENDPOINT";
pub const TOKEN_ENV: &str = "PSYPROBE_TOKEN";

/// Bounded exponential backoff; applies to transport failures and 5xx only.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Client for `POST {base_url}/v1/score`.
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
    token: Option<String>,
    retry: RetryPolicy,
    model: Mutex<Option<String>>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpBackend {
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("default http client"),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: None,
            retry: RetryPolicy::default(),
            model: Mutex::new(None),
        }
    }

    /// Endpoint from `PSYPROBE_ENDPOINT` (unless given), token from `PSYPROBE_TOKEN`.
    pub fn from_env(endpoint: Option<String>) -> Result<Self, BackendError> {
        let endpoint = endpoint
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .ok_or_else(|| {
                BackendError::InvalidRequest(format!("no endpoint given and {ENDPOINT_ENV} unset"))
            })?;
        let mut backend = Self::new(endpoint);
        backend.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(backend)
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Model name reported by the last successful response.
    pub fn model(&self) -> Option<String> {
        self.model.lock().unwrap().clone()
    }

    /// One request/response exchange returning the parsed body.
    pub async fn score_raw(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let mut attempt = 0;
        loop {
            match self.attempt(req).await {
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    async fn attempt(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let mut builder = self
            .client
            .post(format!("{}/v1/score", self.base_url))
            .json(req);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .bytes()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;

        if status == StatusCode::OK {
            let parsed: ScoreResponse = serde_json::from_slice(&body)
                .map_err(|e| BackendError::Protocol(format!("unparseable response body: {e}")))?;
            parsed.validate_for(req)?;
            *self.model.lock().unwrap() = Some(parsed.model.clone());
            return Ok(parsed);
        }

        let message = serde_json::from_slice::<ErrorBody>(&body)
            .map(|b| b.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        if status.is_server_error() {
            Err(BackendError::Unavailable {
                status: status.as_u16(),
                message,
            })
        } else {
            Err(BackendError::Protocol(format!("{status}: {message}")))
        }
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn descriptor(&self) -> BackendDescriptor {
        // The served model's name once a response has reported it.
        BackendDescriptor {
            name: self.model().unwrap_or_else(|| format!("http:{}", self.base_url)),
            deterministic: true,
        }
    }

    async fn score(&self, req: &ScoreRequest) -> Result<Vec<ContinuationScore>, BackendError> {
        req.validate()?;
        Ok(self.score_raw(req).await?.results)
    }
}
