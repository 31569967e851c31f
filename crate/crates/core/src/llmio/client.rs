use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{AuditLog, LlmExchange};
use super::{ChatRequest, Completion, Llm, LlmError, Result};

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub max_parallel: usize,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    5
}
fn default_parallelism() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    1000
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_parallel: default_parallelism(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(LlmError::Config("max_parallel must be >= 1".into()));
        }
        if self.base_url.trim().is_empty() || self.model.trim().is_empty() {
            return Err(LlmError::Config("base_url and model are required".into()));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Counting permit pool bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(Value),
    Retry { status: Option<u16>, message: String, timeout: bool },
    Fatal(LlmError),
}

/// Blocking HTTP client shared by the chat and embedding endpoints.
#[derive(Debug, Clone)]
pub(crate) struct WireClient {
    pub(crate) config: EndpointConfig,
    agent: ureq::Agent,
    permits: Arc<Permits>,
}

impl WireClient {
    pub(crate) fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let permits = Arc::new(Permits::new(config.max_parallel));
        Ok(Self { config, agent, permits })
    }

    fn attempt(&self, path: &str, body: &Value) -> Attempt {
        let mut req = self.agent.post(self.config.url(path)).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                match status {
                    200..=299 => match serde_json::from_str(&text) {
                        Ok(v) => Attempt::Done(v),
                        Err(e) => Attempt::Fatal(LlmError::InvalidResponse(format!("{e}: {text}"))),
                    },
                    429 | 500..=599 => Attempt::Retry {
                        status: Some(status),
                        message: text,
                        timeout: false,
                    },
                    _ => Attempt::Fatal(LlmError::Http { status, body: text }),
                }
            }
            Err(ureq::Error::Timeout(_)) => Attempt::Retry {
                status: None,
                message: "timeout".into(),
                timeout: true,
            },
            Err(e) => Attempt::Retry {
                status: None,
                message: e.to_string(),
                timeout: false,
            },
        }
    }

    /// POST with exponential backoff (base, factor 2, up to +50% jitter) on
    /// transport errors, 429 and 5xx. Returns the parsed body and the number
    /// of attempts made.
    pub(crate) fn post(&self, path: &str, body: &Value) -> Result<(Value, u32)> {
        let _permit = self.permits.acquire();
        let max_attempts = self.config.max_retries + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(path, body) {
                Attempt::Done(v) => return Ok((v, attempts)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { status, message, timeout } => {
                    if attempts >= max_attempts {
                        return Err(if timeout {
                            LlmError::Timeout { attempts }
                        } else {
                            LlmError::RetriesExhausted {
                                attempts,
                                last_status: status,
                                message,
                            }
                        });
                    }
                    log::debug!("attempt {attempts} failed ({status:?}): {message}");
                    let base = self.config.backoff_base_ms as f64 * 2f64.powi(attempts as i32 - 1);
                    let jitter = rand::rng().random_range(0.0..0.5);
                    std::thread::sleep(Duration::from_secs_f64(base * (1.0 + jitter) / 1000.0));
                }
            }
        }
    }
}

/// Chat-completions client with retries, a parallelism cap and an optional
/// crash-safe audit log.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    wire: WireClient,
    audit: Option<Arc<AuditLog>>,
}

impl HttpLlm {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        Ok(Self {
            wire: WireClient::new(config)?,
            audit: None,
        })
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.wire.config
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let c = &self.wire.config;
        json!({
            "model": c.model,
            "messages": request.messages,
            "temperature": c.temperature,
            "max_tokens": c.max_tokens,
        })
    }
}

pub(crate) fn first_choice_text(v: &Value) -> Result<String> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| LlmError::InvalidResponse(format!("no choices[0].message.content in {v}")))
}

impl Llm for HttpLlm {
    fn name(&self) -> String {
        format!("{}#{}", self.wire.config.base_url, self.wire.config.model)
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        if request.messages.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let started = Instant::now();
        let outcome = self
            .wire
            .post("chat/completions", &self.request_body(request))
            .and_then(|(v, attempts)| Ok((first_choice_text(&v)?, attempts)));
        let latency = started.elapsed();
        if let Some(audit) = &self.audit {
            let (response, error, attempts) = match &outcome {
                Ok((text, a)) => (Some(text.clone()), None, *a),
                Err(e) => (None, Some(e.to_string()), 0),
            };
            audit.record(&LlmExchange {
                llm: self.name(),
                request: request.messages.clone(),
                response,
                error,
                latency_ms: latency.as_secs_f64() * 1000.0,
                attempts,
            })?;
        }
        let (text, attempts) = outcome?;
        Ok(Completion {
            text,
            attempts,
            latency,
            cached: false,
        })
    }
}
