//! Chat-completions client with bounded concurrency and retry on 429/5xx.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, InferenceRequest};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Endpoint root; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token; empty sends no auth.
    pub auth_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    /// First retry delay; each further retry doubles it.
    pub backoff_base_secs: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            auth_env: "THERMALIGN_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_parallel: 4,
            backoff_base_secs: 1.0,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!("timeout_secs {} must be positive", self.timeout_secs)));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if self.backoff_base_secs < 0.0 {
            return Err(Error::Config("backoff_base_secs must be non-negative".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct ImageUrl<'a> {
    url: &'a str,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: ImageUrl<'a> },
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: Vec<ContentPart<'a>>,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: usize,
}

/// Serialized request body with the PNG inlined as a base64 data URL.
pub fn request_body(model: &str, prompt: &str, png: &[u8], max_tokens: usize) -> Vec<u8> {
    let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png));
    let req = ChatRequest {
        model,
        messages: vec![ChatMessage {
            role: "user",
            content: vec![ContentPart::Text { text: prompt }, ContentPart::ImageUrl { image_url: ImageUrl { url: &url } }],
        }],
        max_tokens,
    };
    serde_json::to_vec(&req).expect("request serializes")
}

/// Text of the first choice, which must be a plain string.
pub fn response_text(body: &str) -> Result<String> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol("response lacks choices[0].message.content string".into()))
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl RemoteBackend {
    /// Resolves the token from the configured environment variable.
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let token = match config.auth_env.as_str() {
            "" => None,
            var => match std::env::var(var) {
                Ok(t) if !t.is_empty() => Some(t),
                _ => {
                    return Err(Error::Config(format!(
                        "remote backend needs an API token: export {var}=<token>, or set auth_env to another variable in the [eval.remote] config section"
                    )))
                }
            },
        };
        Self::with_token(config, token)
    }

    pub fn with_token(config: RemoteConfig, token: Option<String>) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate { free: Mutex::new(config.max_parallel), cv: Condvar::new() };
        Ok(Self { config, token, agent, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base_secs * 2f64.powi(retry as i32);
        let jitter = rand::rng().random_range(0.0..0.25);
        Duration::from_secs_f64(base * (1.0 + jitter))
    }

    fn attempt(&self, body: &[u8]) -> Result<Attempt> {
        let _slot = self.gate.acquire();
        let mut req = self.agent.post(self.config.endpoint()).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Error::Timeout(self.config.timeout_secs)),
            Err(e) => return Err(Error::Backend(format!("request to {} failed: {e}", self.config.endpoint()))),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(Error::Timeout(self.config.timeout_secs)),
            Err(e) => return Err(Error::Protocol(format!("unreadable response body: {e}"))),
        };
        match status {
            200..=299 => Ok(Attempt::Done(response_text(&text)?)),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Error::Backend(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))),
        }
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        self.config.model.clone()
    }

    fn infer(&self, request: &InferenceRequest) -> Result<String> {
        request.validate()?;
        let body = request_body(&self.config.model, &request.prompt, &request.image.png_bytes()?, request.max_new_tokens);
        let mut retry = 0;
        loop {
            match self.attempt(&body)? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Retry(_) if retry < self.config.max_retries => {
                    std::thread::sleep(self.backoff(retry));
                    retry += 1;
                }
                Attempt::Retry(why) => {
                    return Err(Error::Backend(format!("{why} after {} retries", self.config.max_retries)))
                }
            }
        }
    }

    fn max_parallelism(&self) -> usize {
        self.config.max_parallel
    }
}
