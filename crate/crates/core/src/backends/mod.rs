//! Inference backends.
//!
//! Two wire protocols are supported:
//!
//! * NLI pair scoring: `POST {endpoint}` with `{"premise": .., "hypothesis": ..}`
//!   answered by `{"entailment": p, "neutral": p, "contradiction": p}`.
//! * Generative completion: an OpenAI-compatible chat-completions request with a
//!   single user message; the first choice's message content is returned.
//!
//! [`MockBackend`] answers both from tables for offline runs, and
//! [`CachedBackend`] wraps any backend with a persistent content-addressed cache.

mod cache;
mod http;
mod limit;
mod mock;
mod retry;
mod score;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, CacheStats, CachedBackend, CachedResponse, ResponseCache};
pub use http::{GenerativeBackend, NliBackend, Traced};
pub use limit::{Limiter, TokenBucket};
pub use mock::{MockBackend, MockScoreRow};
pub use retry::RetryPolicy;
pub use score::{EntailmentScore, NORMALIZATION_TOLERANCE, SUM_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Nli,
    Generative,
    Mock,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Nli => "nli",
            BackendKind::Generative => "generative",
            BackendKind::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend answered HTTP {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("malformed response ({reason}): {excerpt}")]
    Malformed { reason: String, excerpt: String },
    #[error("entailment probabilities sum to {sum}, too far from 1")]
    Normalization { sum: f64 },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("backend refused the request: {0}")]
    Refusal(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("backend `{backend}` does not support {operation}")]
    Unsupported {
        backend: String,
        operation: &'static str,
    },
    #[error("environment variable `{0}` holding the backend secret is not set")]
    MissingSecret(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("mock backend has no completion for prompt hash {0}")]
    NoMockCompletion(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed. HTTP statuses defer to `policy`.
    pub fn is_retryable(&self, policy: &RetryPolicy) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => policy.retries_status(*status),
            _ => false,
        }
    }
}

/// Truncates a response body for inclusion in an error.
pub(crate) fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    if body.len() <= MAX {
        return body.to_string();
    }
    let mut end = MAX;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &body[..end])
}

/// Sampling parameters for generative calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams::deterministic(5)
    }
}

impl GenerationParams {
    /// Temperature zero: the most likely continuation every time.
    pub fn deterministic(max_tokens: u32) -> Self {
        GenerationParams {
            temperature: 0.0,
            max_tokens,
        }
    }

    pub fn check(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Precondition(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Precondition("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Classification requires temperature exactly zero.
    pub fn check_for_classification(&self) -> Result<(), BackendError> {
        self.check()?;
        if self.temperature != 0.0 {
            return Err(BackendError::Precondition(format!(
                "classification requires temperature 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One (document, hypothesis) pair to score.
#[derive(Debug, Clone, Copy)]
pub struct PairRequest<'a> {
    pub premise_id: &'a str,
    pub premise: &'a str,
    pub hypothesis_id: &'a str,
    pub hypothesis: &'a str,
}

impl PairRequest<'_> {
    pub fn check(&self) -> Result<(), BackendError> {
        if self.premise.trim().is_empty() {
            return Err(BackendError::Precondition(format!(
                "premise `{}` is empty",
                self.premise_id
            )));
        }
        if self.hypothesis.trim().is_empty() {
            return Err(BackendError::Precondition(format!(
                "hypothesis `{}` is empty",
                self.hypothesis_id
            )));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct NliPayload<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Serialize)]
struct GeneratePayload<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

/// SHA-256 hex digest of a rendered prompt.
pub fn prompt_hash(prompt: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Canonical request text: fixed field order, document text byte-for-byte.
pub fn canonical_score_payload(req: &PairRequest<'_>) -> String {
    serde_json::to_string(&NliPayload {
        premise: req.premise,
        hypothesis: req.hypothesis,
    })
    .expect("payload serializes")
}

pub fn canonical_generate_payload(prompt: &str, params: &GenerationParams) -> String {
    serde_json::to_string(&GeneratePayload {
        prompt,
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    })
    .expect("payload serializes")
}

/// An inference service. Implementations must be shareable across worker threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn kind(&self) -> BackendKind;
    fn model_id(&self) -> &str;

    fn score(&self, req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError>;

    /// Returns the first completion's text verbatim.
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;

    /// Everything the score response depends on, in canonical form.
    fn score_payload(&self, req: &PairRequest<'_>) -> String {
        canonical_score_payload(req)
    }

    fn generate_payload(&self, prompt: &str, params: &GenerationParams) -> String {
        canonical_generate_payload(prompt, params)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn score(&self, req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError> {
        (**self).score(req)
    }
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        (**self).generate(prompt, params)
    }
    fn score_payload(&self, req: &PairRequest<'_>) -> String {
        (**self).score_payload(req)
    }
    fn generate_payload(&self, prompt: &str, params: &GenerationParams) -> String {
        (**self).generate_payload(prompt, params)
    }
}

/// Static description of a backend, as read from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_in_flight() -> usize {
    8
}

impl BackendDescriptor {
    pub fn mock(backend_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        BackendDescriptor {
            backend_id: backend_id.into(),
            kind: BackendKind::Mock,
            endpoint: None,
            model_id: model_id.into(),
            auth_env: None,
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_in_flight(),
            requests_per_second: None,
        }
    }

    pub fn http(kind: BackendKind, backend_id: &str, endpoint: &str, model_id: &str) -> Self {
        BackendDescriptor {
            kind,
            endpoint: Some(endpoint.to_string()),
            ..BackendDescriptor::mock(backend_id, model_id)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn check(&self) -> Result<(), BackendError> {
        if self.backend_id.trim().is_empty() {
            return Err(BackendError::Config("backend_id is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if let Some(rate) = self.requests_per_second {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(BackendError::Config(format!(
                    "requests_per_second must be positive, got {rate}"
                )));
            }
        }
        self.retry.check()?;
        match self.kind {
            BackendKind::Mock => Ok(()),
            BackendKind::Nli | BackendKind::Generative => match &self.endpoint {
                Some(url) if url.starts_with("http://") || url.starts_with("https://") => Ok(()),
                Some(url) => Err(BackendError::Config(format!(
                    "endpoint `{url}` must be an http(s) URL"
                ))),
                None => Err(BackendError::Config(format!(
                    "{} backend `{}` needs an endpoint",
                    self.kind.as_str(),
                    self.backend_id
                ))),
            },
        }
    }

    /// Reads the bearer token from the configured environment variable.
    pub fn resolve_secret(&self) -> Result<Option<String>, BackendError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(BackendError::MissingSecret(var.clone())),
            },
        }
    }
}

/// Counts calls that reach the wrapped backend.
pub struct CallCounter<B> {
    inner: B,
    scores: AtomicU64,
    generations: AtomicU64,
}

impl<B: Backend> CallCounter<B> {
    pub fn new(inner: B) -> Self {
        CallCounter {
            inner,
            scores: AtomicU64::new(0),
            generations: AtomicU64::new(0),
        }
    }

    pub fn score_calls(&self) -> u64 {
        self.scores.load(Ordering::SeqCst)
    }

    pub fn generate_calls(&self) -> u64 {
        self.generations.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> u64 {
        self.score_calls() + self.generate_calls()
    }

    pub fn reset(&self) {
        self.scores.store(0, Ordering::SeqCst);
        self.generations.store(0, Ordering::SeqCst);
    }
}

impl<B: Backend> Backend for CallCounter<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn score(&self, req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError> {
        self.scores.fetch_add(1, Ordering::SeqCst);
        self.inner.score(req)
    }
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        self.generations.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, params)
    }
    fn score_payload(&self, req: &PairRequest<'_>) -> String {
        self.inner.score_payload(req)
    }
    fn generate_payload(&self, prompt: &str, params: &GenerationParams) -> String {
        self.inner.generate_payload(prompt, params)
    }
}

/// Builds a live backend from its descriptor. Mock backends are built from
/// their tables with [`MockBackend`] directly.
pub fn connect(desc: &BackendDescriptor) -> Result<Arc<dyn Backend>, BackendError> {
    desc.check()?;
    match desc.kind {
        BackendKind::Nli => Ok(Arc::new(NliBackend::new(desc.clone())?)),
        BackendKind::Generative => Ok(Arc::new(GenerativeBackend::new(desc.clone())?)),
        BackendKind::Mock => Err(BackendError::Config(
            "mock backends are built from a score table, not connected".into(),
        )),
    }
}
