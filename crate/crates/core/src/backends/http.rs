use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use serde_json::{json, Value};

use super::limit::Limiter;
use super::{
    excerpt, Backend, BackendDescriptor, BackendError, BackendKind, EntailmentScore,
    GenerationParams, PairRequest,
};

/// A backend result together with the number of HTTP attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Traced<T> {
    pub value: T,
    pub attempts: u32,
}

struct Transport {
    desc: BackendDescriptor,
    endpoint: String,
    agent: ureq::Agent,
    secret: Option<String>,
    limiter: Limiter,
    attempts: AtomicU64,
    calls: AtomicU64,
}

impl Transport {
    fn new(desc: BackendDescriptor) -> Result<Self, BackendError> {
        desc.check()?;
        let secret = desc.resolve_secret()?;
        let endpoint = desc
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("missing endpoint".into()))?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(desc.timeout()))
            .http_status_as_error(false)
            .build();
        Ok(Transport {
            limiter: Limiter::new(desc.max_in_flight, desc.requests_per_second),
            agent: config.into(),
            endpoint,
            secret,
            desc,
            attempts: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        })
    }

    fn post_once(&self, body: &str) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let mut request = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(secret) = &self.secret {
            request = request.header("Authorization", format!("Bearer {secret}"));
        }
        let mut response = request
            .send(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status {
                status,
                excerpt: excerpt(&text),
            });
        }
        Ok(text)
    }

    fn post(&self, body: &Value) -> (Result<String, BackendError>, u32) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let body = body.to_string();
        let (result, attempts) = self.desc.retry.run(|_| self.post_once(&body));
        tracing::debug!(backend = %self.desc.backend_id, attempts, ok = result.is_ok(), "backend call");
        (result, attempts)
    }
}

fn malformed(reason: impl Into<String>, body: &str) -> BackendError {
    BackendError::Malformed {
        reason: reason.into(),
        excerpt: excerpt(body),
    }
}

#[derive(Deserialize)]
struct NliResponse {
    entailment: f64,
    neutral: f64,
    contradiction: f64,
}

/// Client for the pair-scoring NLI protocol.
pub struct NliBackend {
    transport: Transport,
}

impl NliBackend {
    pub fn new(desc: BackendDescriptor) -> Result<Self, BackendError> {
        if desc.kind != BackendKind::Nli {
            return Err(BackendError::Config(format!(
                "descriptor kind is {}, expected nli",
                desc.kind.as_str()
            )));
        }
        Ok(NliBackend {
            transport: Transport::new(desc)?,
        })
    }

    pub fn score_traced(&self, req: &PairRequest<'_>) -> Result<Traced<EntailmentScore>, BackendError> {
        req.check()?;
        let body = json!({ "premise": req.premise, "hypothesis": req.hypothesis });
        let (result, attempts) = self.transport.post(&body);
        let text = result?;
        let parsed: NliResponse = serde_json::from_str(&text)
            .map_err(|e| malformed(format!("expected entailment/neutral/contradiction: {e}"), &text))?;
        let score = EntailmentScore::normalized(parsed.entailment, parsed.neutral, parsed.contradiction)
            .map_err(|e| malformed(e.to_string(), &text))?;
        Ok(Traced {
            value: score,
            attempts,
        })
    }

    /// HTTP requests sent so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.transport.attempts.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> u64 {
        self.transport.calls.load(Ordering::SeqCst)
    }
}

impl Backend for NliBackend {
    fn id(&self) -> &str {
        &self.transport.desc.backend_id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Nli
    }

    fn model_id(&self) -> &str {
        &self.transport.desc.model_id
    }

    fn score(&self, req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError> {
        self.score_traced(req).map(|t| t.value)
    }

    fn generate(&self, _prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        Err(BackendError::Unsupported {
            backend: self.id().to_string(),
            operation: "generate",
        })
    }
}

/// Client for OpenAI-compatible chat completions.
pub struct GenerativeBackend {
    transport: Transport,
}

impl GenerativeBackend {
    pub fn new(desc: BackendDescriptor) -> Result<Self, BackendError> {
        if desc.kind != BackendKind::Generative {
            return Err(BackendError::Config(format!(
                "descriptor kind is {}, expected generative",
                desc.kind.as_str()
            )));
        }
        Ok(GenerativeBackend {
            transport: Transport::new(desc)?,
        })
    }

    pub fn generate_traced(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<Traced<String>, BackendError> {
        params.check()?;
        if prompt.is_empty() {
            return Err(BackendError::Precondition("prompt is empty".into()));
        }
        let body = json!({
            "model": self.transport.desc.model_id,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let (result, attempts) = self.transport.post(&body);
        let text = result?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| malformed(e.to_string(), &text))?;
        let message = value
            .get("choices")
            .and_then(Value::as_array)
            .and_then(|c| c.first())
            .and_then(|c| c.get("message"))
            .ok_or_else(|| malformed("missing choices[0].message", &text))?;
        if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
            if !refusal.is_empty() {
                return Err(BackendError::Refusal(excerpt(refusal)));
            }
        }
        let content = match message.get("content") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(_) => return Err(malformed("message content is not a string", &text)),
        };
        if content.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        Ok(Traced {
            value: content,
            attempts,
        })
    }

    pub fn attempts(&self) -> u64 {
        self.transport.attempts.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> u64 {
        self.transport.calls.load(Ordering::SeqCst)
    }
}

impl Backend for GenerativeBackend {
    fn id(&self) -> &str {
        &self.transport.desc.backend_id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Generative
    }

    fn model_id(&self) -> &str {
        &self.transport.desc.model_id
    }

    fn score(&self, _req: &PairRequest<'_>) -> Result<EntailmentScore, BackendError> {
        Err(BackendError::Unsupported {
            backend: self.id().to_string(),
            operation: "score",
        })
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        self.generate_traced(prompt, params).map(|t| t.value)
    }
}
