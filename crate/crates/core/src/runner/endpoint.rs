use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::RunnerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub n_samples: u32,
    pub max_new_tokens: u32,
    pub request_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("length") => Self::Length,
            Some("error") => Self::Error,
            _ => Self::Stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub completion_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub sample_index: u32,
}

/// Anything that can turn a request into `n_samples` completions.
pub trait CompletionBackend: Send + Sync {
    fn describe(&self) -> String;
    fn complete(&self, req: &GenerationRequest) -> Result<Vec<GenerationResult>, RunnerError>;
}

/// Validates the request, calls the backend and checks the sample count.
pub fn complete(
    backend: &dyn CompletionBackend,
    req: &GenerationRequest,
) -> Result<Vec<GenerationResult>, RunnerError> {
    if req.n_samples == 0 {
        return Err(RunnerError::GenerationError("n_samples must be >= 1".into()));
    }
    if !(req.temperature >= 0.0) {
        return Err(RunnerError::GenerationError(format!(
            "invalid temperature {}",
            req.temperature
        )));
    }
    let out = backend.complete(req)?;
    if out.len() != req.n_samples as usize {
        return Err(RunnerError::GenerationError(format!(
            "expected {} completions, got {}",
            req.n_samples,
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Serialize)]
pub(crate) struct WireRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    pub n: u32,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireChoice {
    pub text: String,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireResponse {
    pub choices: Vec<WireChoice>,
}

/// JSON-over-HTTP completion endpoint (`POST /v1/completions`).
pub struct HttpEndpoint {
    base_url: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

enum Attempt {
    Transient(String),
    Fatal(RunnerError),
}

impl HttpEndpoint {
    pub fn new(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, RunnerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RunnerError::GenerationError(format!("http client: {e}")))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            retry,
        })
    }

    fn url(&self) -> String {
        format!("{}/v1/completions", self.base_url)
    }

    fn attempt(&self, req: &GenerationRequest) -> Result<WireResponse, Attempt> {
        let body = WireRequest {
            model: &req.model_id,
            prompt: &req.prompt,
            temperature: req.temperature,
            n: req.n_samples,
            max_tokens: req.max_new_tokens,
            seed: req.request_seed,
        };
        let resp = self
            .client
            .post(self.url())
            .json(&body)
            .send()
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<WireResponse>()
                .map_err(|e| Attempt::Fatal(RunnerError::GenerationError(format!("bad response body: {e}"))));
        }
        let text = resp.text().unwrap_or_default();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Transient(format!("HTTP {status}: {text}")));
        }
        let lower = text.to_lowercase();
        if status.as_u16() == 404 || lower.contains("model not found") || lower.contains("unknown model") {
            return Err(Attempt::Fatal(RunnerError::ModelUnknown(req.model_id.clone())));
        }
        if lower.contains("context") || lower.contains("too long") || lower.contains("maximum") {
            return Err(Attempt::Fatal(RunnerError::ContextOverflow(text)));
        }
        Err(Attempt::Fatal(RunnerError::GenerationError(format!("HTTP {status}: {text}"))))
    }
}

impl CompletionBackend for HttpEndpoint {
    fn describe(&self) -> String {
        self.base_url.clone()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Vec<GenerationResult>, RunnerError> {
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            let started = Instant::now();
            match self.attempt(req) {
                Ok(resp) => {
                    let latency_ms = started.elapsed().as_millis() as u64;
                    return Ok(resp
                        .choices
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| GenerationResult {
                            finish_reason: FinishReason::from_wire(c.finish_reason.as_deref()),
                            completion_text: c.text,
                            latency_ms,
                            sample_index: i as u32,
                        })
                        .collect());
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(reason)) => {
                    tracing::debug!(attempt, %reason, "transient endpoint failure");
                    last = reason;
                    if attempt < self.retry.max_attempts {
                        thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(RunnerError::EndpointUnreachable {
            endpoint: self.base_url.clone(),
            attempts: self.retry.max_attempts,
            reason: last,
        })
    }
}
