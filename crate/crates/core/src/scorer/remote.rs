//! HTTP client for the inference sidecar.
//!
//! Wire protocol:
//! - `POST /v1/score` `{"context", "candidates"}` → `{"scores", "token_counts"[, "skipped"]}`
//! - `GET /v1/model` → `{"model_name", "mask_token", "max_masks"}`
//! - `GET /v1/health` → `{"status": "ok"}`

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ScoreError, ScoreRequest, ScoreResponse, Scorer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_name: String,
    pub mask_token: String,
    pub max_masks: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub batch_size: usize,
    pub retry: RetryPolicy,
    /// Bound on concurrent in-flight HTTP requests.
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            batch_size: 256,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            timeout: Duration::from_secs(120),
        }
    }
}

struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Transient(String),
    Fatal(ScoreError),
}

pub struct RemoteScorer {
    base: String,
    client: Client,
    config: RemoteConfig,
    limiter: Limiter,
    info: ModelInfo,
}

impl RemoteScorer {
    /// Checks `/v1/health` and reads `/v1/model`, retrying per the policy.
    pub fn connect(endpoint: &str, config: RemoteConfig) -> Result<Self, ScoreError> {
        if config.batch_size == 0 {
            return Err(ScoreError::InvalidRequest("batch_size must be positive".into()));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ScoreError::Unavailable(e.to_string()))?;
        let mut scorer = RemoteScorer {
            base: endpoint.trim_end_matches('/').to_string(),
            client,
            limiter: Limiter::new(config.max_in_flight),
            config,
            info: ModelInfo {
                model_name: String::new(),
                mask_token: String::new(),
                max_masks: 0,
            },
        };
        #[derive(Deserialize)]
        struct Health {
            status: String,
        }
        let health: Health = scorer.with_retry(|| scorer.get("/v1/health"))?;
        if health.status != "ok" {
            return Err(ScoreError::Unavailable(format!("health status {:?}", health.status)));
        }
        scorer.info = scorer.with_retry(|| scorer.get("/v1/model"))?;
        Ok(scorer)
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn decode<T: DeserializeOwned>(path: &str, status: StatusCode, body: String) -> Result<T, Failure> {
        if status.is_success() {
            return serde_json::from_str(&body)
                .map_err(|e| Failure::Fatal(ScoreError::Protocol(format!("{path}: {e}: {body}"))));
        }
        let msg = format!("{path}: HTTP {status}: {body}");
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Err(Failure::Transient(msg))
        } else {
            Err(Failure::Fatal(ScoreError::Protocol(msg)))
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, Failure> {
        let _permit = self.limiter.acquire();
        let resp = self
            .client
            .get(self.url(path))
            .send()
            .map_err(|e| Failure::Transient(format!("{path}: {e}")))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Failure::Transient(format!("{path}: {e}")))?;
        Self::decode(path, status, body)
    }

    fn post_score(&self, request: &ScoreRequest) -> Result<ScoreResponse, Failure> {
        let _permit = self.limiter.acquire();
        let resp = self
            .client
            .post(self.url("/v1/score"))
            .json(request)
            .send()
            .map_err(|e| Failure::Transient(format!("/v1/score: {e}")))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| Failure::Transient(format!("/v1/score: {e}")))?;
        Self::decode("/v1/score", status, body)
    }

    fn with_retry<T>(&self, mut call: impl FnMut() -> Result<T, Failure>) -> Result<T, ScoreError> {
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    if attempt >= self.config.retry.max_retries {
                        return Err(ScoreError::Unavailable(format!(
                            "{msg} (after {} attempts)",
                            attempt + 1
                        )));
                    }
                    log::debug!("transient scorer failure, retrying: {msg}");
                    thread::sleep(self.config.retry.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

impl Scorer for RemoteScorer {
    /// Sends candidates in batches of at most `batch_size` and merges the responses in order.
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        request.validate()?;
        let mut merged = ScoreResponse {
            scores: Vec::with_capacity(request.candidates.len()),
            token_counts: Vec::with_capacity(request.candidates.len()),
            skipped: Vec::new(),
        };
        for chunk in request.candidates.chunks(self.config.batch_size) {
            let sub = ScoreRequest {
                context: request.context.clone(),
                candidates: chunk.to_vec(),
            };
            let resp = self.with_retry(|| self.post_score(&sub))?;
            resp.validate(chunk.len())?;
            let offset = merged.scores.len();
            merged.skipped.extend(resp.skipped.iter().map(|i| i + offset));
            merged.scores.extend(resp.scores);
            merged.token_counts.extend(resp.token_counts);
        }
        Ok(merged)
    }

    fn model_tag(&self) -> String {
        self.info.model_name.clone()
    }
}
