//! Text-completion backends: the trait, a per-graph replay oracle, and an
//! HTTP client for remote completion endpoints.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CompletionParams;
use crate::codec::encode_layer;
use crate::model::{decompose_layers, CallGraph};

/// Environment variable naming the remote completion endpoint.
pub const BACKEND_URL_ENV: &str = "TRACEGEN_BACKEND_URL";
/// Environment variable carrying the bearer token for the endpoint.
pub const BACKEND_TOKEN_ENV: &str = "TRACEGEN_BACKEND_TOKEN";

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out")]
    Timeout,
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("prompt not usable by this backend: {0}")]
    UnparsablePrompt(String),
}

/// A text-completion backend. Implementations must be deterministic at
/// temperature 0 and, when seeded, reproducible for identical
/// (prompt, params) pairs.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError>;

    /// Whether one instance may serve multiple sessions concurrently. The
    /// replay oracle is bound to a single graph's session; stateless backends
    /// report true.
    fn supports_concurrent_sessions(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Replay oracle
// ---------------------------------------------------------------------------

/// Replays the layers of one real graph: prompted with any of the graph's
/// layer conditions, it returns that layer's exact rendering. Driving the
/// recursive generator with this backend must reproduce the source graph
/// bit-for-bit.
pub struct ReplayBackend {
    layers_by_start_id: HashMap<u64, String>,
}

impl ReplayBackend {
    pub fn from_graph(g: &CallGraph) -> Self {
        let mut layers_by_start_id = HashMap::new();
        for layer in decompose_layers(g) {
            let text = encode_layer(&layer.conditions, &layer.edges, &layer.children, false);
            layers_by_start_id.insert(layer.conditions.start_edge_id, text);
        }
        ReplayBackend { layers_by_start_id }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, BackendError> {
        let start_id = prompt
            .lines()
            .find_map(|line| {
                let (name, value) = line.trim().split_once(':')?;
                if name.trim() == "start_edge_id" {
                    value.trim().parse::<u64>().ok()
                } else {
                    None
                }
            })
            .ok_or_else(|| {
                BackendError::UnparsablePrompt("no start_edge_id line in prompt".into())
            })?;
        self.layers_by_start_id
            .get(&start_id)
            .cloned()
            .ok_or_else(|| {
                BackendError::Unavailable(format!(
                    "no recorded layer starts at edge id {start_id}"
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// Remote completion endpoint configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub url: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auth_token: Option<String>,
    pub timeout_ms: u64,
    /// Transport retries (beyond the first attempt) with exponential backoff.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Cap on concurrent in-flight requests.
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            url: String::new(),
            auth_token: None,
            timeout_ms: 30_000,
            retries: 2,
            backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    top_k: Option<u32>,
    max_tokens: u32,
    seed: u64,
    stop: [&'a str; 2],
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// POSTs prompts to a completion endpoint as JSON
/// `{prompt, temperature, top_k, max_tokens, seed, stop}` and expects
/// `{"text": ...}` back.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    gate: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let gate = Semaphore::new(config.max_in_flight.max(1));
        Ok(HttpBackend { config, client, gate })
    }

    /// Builds a backend from `TRACEGEN_BACKEND_URL` / `TRACEGEN_BACKEND_TOKEN`.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(BACKEND_URL_ENV)
            .map_err(|_| BackendError::Unavailable(format!("{BACKEND_URL_ENV} not set")))?;
        let auth_token = std::env::var(BACKEND_TOKEN_ENV).ok();
        Self::new(HttpBackendConfig {
            url,
            auth_token,
            ..HttpBackendConfig::default()
        })
    }

    fn post_once(&self, body: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(token) = &self.config.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Unavailable(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(BackendError::Unavailable(format!(
                "endpoint returned {}",
                resp.status()
            )));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| BackendError::Unavailable(format!("bad response body: {e}")))?;
        Ok(parsed.text)
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        let body = CompletionRequest {
            prompt,
            temperature: params.temperature,
            top_k: params.top_k,
            max_tokens: params.max_tokens,
            seed: params.seed,
            stop: ["</subgraph>", "</edges>"],
        };
        let _permit = self.gate.acquire();
        let mut last = BackendError::Unavailable("no attempt made".into());
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1).min(16),
                ));
            }
            match self.post_once(&body) {
                Ok(text) if text.trim().is_empty() => return Err(BackendError::EmptyCompletion),
                Ok(text) => return Ok(text),
                Err(e @ (BackendError::Timeout | BackendError::Unavailable(_))) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }

    fn supports_concurrent_sessions(&self) -> bool {
        true
    }
}

/// Minimal counting semaphore for the in-flight cap.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(count: usize) -> Self {
        Semaphore {
            permits: Mutex::new(count),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}
