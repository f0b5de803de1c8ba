use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;

use super::endpoint::{
    CompletionBackend, FinishReason, GenerationRequest, GenerationResult, WireChoice, WireResponse,
};
use super::RunnerError;
use crate::mutator::fnv1a_64;

/// Deterministic stand-in for a model server.
///
/// Completions are keyed by the FNV-1a hash of the prompt: a canned text
/// when one is registered for that hash, otherwise a synthetic body whose
/// `FUNCTIONAL`/`BROKEN` and `SAFE`/`INSECURE` markers are drawn from the
/// hash. At temperature 0 every sample is identical; above 0 the sample
/// index and request seed enter the hash.
#[derive(Debug, Clone)]
pub struct StubBackend {
    pub functional_rate: f64,
    pub insecure_rate: f64,
    pub known_models: Option<Vec<String>>,
    pub max_prompt_bytes: Option<usize>,
    pub canned: HashMap<u64, String>,
}

impl Default for StubBackend {
    fn default() -> Self {
        Self {
            functional_rate: 0.7,
            insecure_rate: 0.35,
            known_models: None,
            max_prompt_bytes: None,
            canned: HashMap::new(),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(z: u64) -> f64 {
    (z >> 11) as f64 / (1u64 << 53) as f64
}

impl StubBackend {
    pub fn with_canned(mut self, prompt: &str, completion: &str) -> Self {
        self.canned.insert(fnv1a_64(prompt.as_bytes()), completion.to_string());
        self
    }

    pub fn completion_for(&self, prompt: &str, temperature: f64, seed: Option<u64>, sample: u32) -> String {
        let prompt_hash = fnv1a_64(prompt.as_bytes());
        if temperature == 0.0 {
            if let Some(text) = self.canned.get(&prompt_hash) {
                return text.clone();
            }
        }
        let key = if temperature == 0.0 {
            prompt_hash
        } else {
            fnv1a_64(format!("{prompt_hash:016x}|{}|{sample}", seed.unwrap_or(0)).as_bytes())
        };
        let a = splitmix(key);
        let b = splitmix(a);
        let func = if unit(a) < self.functional_rate { "FUNCTIONAL" } else { "BROKEN" };
        let sec = if unit(b) < self.insecure_rate { "INSECURE" } else { "SAFE" };
        format!("/* stub {key:016x} */\n{func}\n{sec}\n")
    }

    fn check(&self, req: &GenerationRequest) -> Result<(), RunnerError> {
        if let Some(models) = &self.known_models {
            if !models.iter().any(|m| m == &req.model_id) {
                return Err(RunnerError::ModelUnknown(req.model_id.clone()));
            }
        }
        if let Some(max) = self.max_prompt_bytes {
            if req.prompt.len() > max {
                return Err(RunnerError::ContextOverflow(format!(
                    "prompt of {} bytes exceeds maximum context of {max}",
                    req.prompt.len()
                )));
            }
        }
        Ok(())
    }
}

impl CompletionBackend for StubBackend {
    fn describe(&self) -> String {
        "stub".into()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<Vec<GenerationResult>, RunnerError> {
        self.check(req)?;
        Ok((0..req.n_samples)
            .map(|i| GenerationResult {
                completion_text: self.completion_for(&req.prompt, req.temperature, req.request_seed, i),
                finish_reason: FinishReason::Stop,
                latency_ms: 0,
                sample_index: i,
            })
            .collect())
    }
}

#[derive(Deserialize)]
struct IncomingRequest {
    model: String,
    prompt: String,
    temperature: f64,
    n: u32,
    max_tokens: u32,
    seed: Option<u64>,
}

/// HTTP server speaking the completion wire contract, backed by a
/// [`StubBackend`]. Stops when dropped.
pub struct StubServer {
    url: String,
    server: Arc<tiny_http::Server>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    requests: Arc<AtomicU32>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port). The first
    /// `transient_failures` requests are answered with HTTP 503.
    pub fn start(backend: StubBackend, addr: &str, transient_failures: u32) -> Result<Self, RunnerError> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| RunnerError::GenerationError(format!("stub bind {addr}: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| RunnerError::GenerationError("stub has no IP address".into()))?;
        let host = addr.rsplit_once(':').map_or("127.0.0.1", |(h, _)| h);
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicU32::new(0));

        let handle = {
            let server = Arc::clone(&server);
            let stop = Arc::clone(&stop);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let req = match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(r)) => r,
                        Ok(None) => continue,
                        Err(_) => break,
                    };
                    let seen = requests.fetch_add(1, Ordering::SeqCst);
                    handle_request(&backend, req, seen < transient_failures);
                }
            })
        };

        Ok(Self {
            url: format!("http://{host}:{port}"),
            server,
            stop,
            handle: Some(handle),
            requests,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_count(&self) -> u32 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Serves until the process is killed.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn respond(req: tiny_http::Request, status: u16, body: String) {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header");
    let resp = tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header);
    let _ = req.respond(resp);
}

fn error_body(msg: &str) -> String {
    serde_json::json!({ "error": { "message": msg } }).to_string()
}

fn handle_request(backend: &StubBackend, mut req: tiny_http::Request, fail: bool) {
    if req.method() != &tiny_http::Method::Post || req.url() != "/v1/completions" {
        return respond(req, 404, error_body("not found"));
    }
    if fail {
        return respond(req, 503, error_body("temporarily unavailable"));
    }
    let mut body = String::new();
    if req.as_reader().read_to_string(&mut body).is_err() {
        return respond(req, 400, error_body("unreadable body"));
    }
    let incoming: IncomingRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => return respond(req, 400, error_body(&format!("bad request: {e}"))),
    };
    let gen = GenerationRequest {
        model_id: incoming.model,
        prompt: incoming.prompt,
        temperature: incoming.temperature,
        n_samples: incoming.n,
        max_new_tokens: incoming.max_tokens,
        request_seed: incoming.seed,
    };
    match backend.complete(&gen) {
        Ok(results) => {
            let resp = WireResponse {
                choices: results
                    .into_iter()
                    .map(|r| WireChoice {
                        text: r.completion_text,
                        finish_reason: Some("stop".into()),
                    })
                    .collect(),
            };
            respond(req, 200, serde_json::to_string(&resp).expect("response serializes"))
        }
        Err(RunnerError::ModelUnknown(m)) => respond(req, 404, error_body(&format!("model not found: {m}"))),
        Err(e) => respond(req, 400, error_body(&e.to_string())),
    }
}
