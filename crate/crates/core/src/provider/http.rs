use std::thread;
use std::time::Duration;

use rand::Rng;
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{
    default_timeout, CompletionRequest, CompletionResponse, ConfigError, Provider, ProviderError,
};
use crate::tokens::Role;

const BODY_EXCERPT_BYTES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    /// Jitter as a fraction of the current delay, added on top.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_delay: Duration::from_secs(1),
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    fn delay_for(&self, attempt: u32) -> Duration {
        let base = self.initial_delay.saturating_mul(1u32 << attempt.min(16));
        let extra = rand::rng().random_range(0.0..=self.jitter.max(0.0));
        base + base.mul_f64(extra)
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub api_key: String,
    pub model: String,
    pub base_url: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            api_key: api_key.into(),
            model: model.into(),
            base_url: None,
            timeout: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }
}

fn build_client(config: &HttpConfig) -> Result<Client, ConfigError> {
    Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| ConfigError::Client(e.to_string()))
}

enum Attempt {
    Done(Value),
    Retry(ProviderError),
    Fail(ProviderError),
}

fn excerpt(body: &str) -> String {
    let mut end = body.len().min(BODY_EXCERPT_BYTES);
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    body[..end].to_string()
}

fn attempt(builder: RequestBuilder, attempts: u32) -> Attempt {
    let resp = match builder.send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Attempt::Retry(ProviderError::Timeout),
        Err(e) => return Attempt::Retry(ProviderError::backend(e.to_string())),
    };
    let status = resp.status();
    let body = resp.text().unwrap_or_default();
    match status {
        s if s.is_success() => match serde_json::from_str(&body) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(ProviderError::BackendError {
                status: s.as_u16(),
                body: format!("invalid JSON body: {e}"),
            }),
        },
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => Attempt::Fail(ProviderError::AuthError),
        StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(ProviderError::RateLimited { attempts }),
        s if s.is_server_error() || s == StatusCode::REQUEST_TIMEOUT => {
            Attempt::Retry(ProviderError::BackendError {
                status: s.as_u16(),
                body: excerpt(&body),
            })
        }
        s => Attempt::Fail(ProviderError::BackendError {
            status: s.as_u16(),
            body: excerpt(&body),
        }),
    }
}

fn send_with_retry(
    retry: &RetryPolicy,
    mut make: impl FnMut() -> RequestBuilder,
) -> Result<Value, ProviderError> {
    let attempts = retry.max_attempts.max(1);
    let mut last = ProviderError::backend("no attempt made");
    for n in 0..attempts {
        match attempt(make(), n + 1) {
            Attempt::Done(v) => return Ok(v),
            Attempt::Fail(e) => return Err(e),
            Attempt::Retry(e) => {
                tracing::warn!(attempt = n + 1, error = %e, "transient provider failure");
                last = e;
                if n + 1 < attempts {
                    thread::sleep(retry.delay_for(n));
                }
            }
        }
    }
    Err(last)
}

fn usage_field(v: &Value, key: &str) -> Option<u64> {
    v.get(key).and_then(Value::as_u64)
}

/// Adapter for the de-facto chat-completions shape. Most local model servers emulate it.
#[derive(Debug)]
pub struct OpenAiCompatProvider {
    client: Client,
    config: HttpConfig,
}

impl OpenAiCompatProvider {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.openai.com/v1";

    pub fn new(config: HttpConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            client: build_client(&config)?,
            config,
        })
    }

    fn body(&self, req: &CompletionRequest) -> Value {
        let messages: Vec<Value> = req
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::Assistant => "assistant",
                    Role::User | Role::Tool => "user",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        body
    }
}

impl Provider for OpenAiCompatProvider {
    fn name(&self) -> &str {
        "openai_compat"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let base = self
            .config
            .base_url
            .as_deref()
            .unwrap_or(Self::DEFAULT_BASE_URL)
            .trim_end_matches('/');
        let url = format!("{base}/chat/completions");
        let body = self.body(req);
        let value = send_with_retry(&self.config.retry, || {
            self.client
                .post(&url)
                .bearer_auth(&self.config.api_key)
                .json(&body)
        })?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::BackendError {
                status: 200,
                body: "response has no choices[0].message.content".into(),
            })?
            .to_string();
        let usage = value.get("usage");
        match usage.and_then(|u| Some((usage_field(u, "prompt_tokens")?, usage_field(u, "completion_tokens")?))) {
            Some((prompt_tokens, completion_tokens)) => Ok(CompletionResponse {
                content,
                prompt_tokens,
                completion_tokens,
                provider_name: self.name().to_string(),
                estimated: false,
            }),
            None => Ok(CompletionResponse::with_estimated_usage(req, content, self.name())),
        }
    }
}

/// Adapter for the Anthropic messages shape.
#[derive(Debug)]
pub struct AnthropicProvider {
    client: Client,
    config: HttpConfig,
}

impl AnthropicProvider {
    pub const DEFAULT_BASE_URL: &'static str = "https://api.anthropic.com";
    const API_VERSION: &'static str = "2023-06-01";

    pub fn new(config: HttpConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            client: build_client(&config)?,
            config,
        })
    }

    fn body(&self, req: &CompletionRequest) -> Value {
        let system: Vec<&str> = req
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect();
        // The messages API wants strictly alternating turns starting with the user.
        let mut turns: Vec<(&str, String)> = Vec::new();
        for m in req.messages.iter().filter(|m| m.role != Role::System) {
            let role = if m.role == Role::Assistant { "assistant" } else { "user" };
            match turns.last_mut() {
                Some((r, text)) if *r == role => {
                    text.push_str("\n\n");
                    text.push_str(&m.content);
                }
                _ => turns.push((role, m.content.clone())),
            }
        }
        if turns.first().map(|(r, _)| *r) != Some("user") {
            turns.insert(0, ("user", "Continue.".to_string()));
        }
        let messages: Vec<Value> = turns
            .into_iter()
            .map(|(role, content)| json!({ "role": role, "content": content }))
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "system": system.join("\n\n"),
            "messages": messages,
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        if !req.stop_sequences.is_empty() {
            body["stop_sequences"] = json!(req.stop_sequences);
        }
        body
    }
}

impl Provider for AnthropicProvider {
    fn name(&self) -> &str {
        "anthropic"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let base = self
            .config
            .base_url
            .as_deref()
            .unwrap_or(Self::DEFAULT_BASE_URL)
            .trim_end_matches('/');
        let url = format!("{base}/v1/messages");
        let body = self.body(req);
        let value = send_with_retry(&self.config.retry, || {
            self.client
                .post(&url)
                .header("x-api-key", &self.config.api_key)
                .header("anthropic-version", Self::API_VERSION)
                .json(&body)
        })?;
        let content = value
            .get("content")
            .and_then(Value::as_array)
            .map(|blocks| {
                blocks
                    .iter()
                    .filter_map(|b| b.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join("")
            })
            .ok_or_else(|| ProviderError::BackendError {
                status: 200,
                body: "response has no content blocks".into(),
            })?;
        let usage = value.get("usage");
        match usage.and_then(|u| Some((usage_field(u, "input_tokens")?, usage_field(u, "output_tokens")?))) {
            Some((prompt_tokens, completion_tokens)) => Ok(CompletionResponse {
                content,
                prompt_tokens,
                completion_tokens,
                provider_name: self.name().to_string(),
                estimated: false,
            }),
            None => Ok(CompletionResponse::with_estimated_usage(req, content, self.name())),
        }
    }
}
