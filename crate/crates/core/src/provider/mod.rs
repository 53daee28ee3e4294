//! Chat-completion providers with token-usage reporting.
//!
//! Three backends share the [`Provider`] trait:
//! - [`ScriptedProvider`] replays a JSONL fixture by call index,
//! - [`OpenAiCompatProvider`] speaks the chat-completions HTTP shape (hosted or local servers),
//! - [`AnthropicProvider`] speaks the messages HTTP shape.

mod http;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{count_tokens, Message, Role};

pub use http::{AnthropicProvider, HttpConfig, OpenAiCompatProvider, RetryPolicy};
pub use scripted::{parse_fixture, ScriptRecord, ScriptedProvider};

pub const DEFAULT_TEMPERATURE: f32 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub max_output_tokens: u32,
    pub temperature: f32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl CompletionRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        Self {
            messages,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.messages.first() {
            None => return Err(ProviderError::InvalidRequest("messages must be nonempty".into())),
            Some(m) if m.role != Role::System => {
                return Err(ProviderError::InvalidRequest(
                    "first message must have role=system".into(),
                ))
            }
            _ => {}
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest("temperature must be in [0, 2]".into()));
        }
        if self.stop_sequences.len() > 4 {
            return Err(ProviderError::InvalidRequest("at most 4 stop sequences".into()));
        }
        Ok(())
    }

    /// The full prompt text, used for substring assertions and estimates.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn prompt_estimate(&self) -> u64 {
        self.messages.iter().map(|m| m.token_estimate).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub provider_name: String,
    /// Usage was filled from the test tokenizer because the backend reported none.
    #[serde(default)]
    pub estimated: bool,
}

impl CompletionResponse {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub(crate) fn with_estimated_usage(
        req: &CompletionRequest,
        content: String,
        provider_name: &str,
    ) -> Self {
        Self {
            prompt_tokens: req.prompt_estimate(),
            completion_tokens: count_tokens(&content),
            content,
            provider_name: provider_name.to_string(),
            estimated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("authentication rejected by backend")]
    AuthError,
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out")]
    Timeout,
    #[error("backend error (status {status}): {body}")]
    BackendError { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script mismatch at call {index}: {reason}")]
    ScriptMismatch { index: usize, reason: String },
}

impl ProviderError {
    pub(crate) fn backend(msg: impl Into<String>) -> Self {
        ProviderError::BackendError {
            status: 0,
            body: msg.into(),
        }
    }
}

/// A chat-completion backend.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;

    /// Usage the next call is known to cost, when the backend can tell in advance.
    fn projected_usage(&self, _req: &CompletionRequest) -> Option<u64> {
        None
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(req)
    }

    fn projected_usage(&self, req: &CompletionRequest) -> Option<u64> {
        (**self).projected_usage(req)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(req)
    }

    fn projected_usage(&self, req: &CompletionRequest) -> Option<u64> {
        (**self).projected_usage(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    OpenaiCompat,
    Anthropic,
}

impl std::str::FromStr for ProviderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(ProviderKind::Scripted),
            "openai_compat" => Ok(ProviderKind::OpenaiCompat),
            "anthropic" => Ok(ProviderKind::Anthropic),
            other => Err(ConfigError::UnknownProvider(other.to_string())),
        }
    }
}

/// Which provider a run uses, as persisted in the run record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSelector {
    pub kind: ProviderKind,
    /// Fixture name or path, scripted provider only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

impl ProviderSelector {
    pub fn scripted(fixture: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Scripted,
            fixture: Some(fixture.into()),
            model: None,
            base_url: None,
        }
    }

    /// Reads `BREACHSEEK_PROVIDER`, `BREACHSEEK_MODEL` and `BREACHSEEK_BASE_URL`.
    pub fn from_env(fixture: Option<String>) -> Result<Self, ConfigError> {
        let kind = match std::env::var("BREACHSEEK_PROVIDER") {
            Ok(v) => v.parse()?,
            Err(_) => ProviderKind::Scripted,
        };
        Ok(Self {
            kind,
            fixture,
            model: std::env::var("BREACHSEEK_MODEL").ok(),
            base_url: std::env::var("BREACHSEEK_BASE_URL").ok(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown provider `{0}` (expected scripted, openai_compat or anthropic)")]
    UnknownProvider(String),
    #[error("scripted provider requires a fixture")]
    MissingFixture,
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("fixture {path}: line {line}: {reason}")]
    BadFixture {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("BREACHSEEK_API_KEY is not set for provider {0:?}")]
    MissingApiKey(ProviderKind),
    #[error("BREACHSEEK_MODEL is not set for provider {0:?}")]
    MissingModel(ProviderKind),
    #[error("failed to build HTTP client: {0}")]
    Client(String),
}

/// Builds a provider from a selector. `api_key` falls back to `BREACHSEEK_API_KEY`.
///
/// `start_index` positions a scripted provider mid-script, used when resuming a
/// persisted run.
pub fn build_provider(
    selector: &ProviderSelector,
    api_key: Option<String>,
    start_index: usize,
) -> Result<Box<dyn Provider>, ConfigError> {
    match selector.kind {
        ProviderKind::Scripted => {
            let fixture = selector.fixture.as_deref().ok_or(ConfigError::MissingFixture)?;
            let records = crate::bundled::load_fixture(fixture)?;
            Ok(Box::new(ScriptedProvider::new(records).starting_at(start_index)))
        }
        kind @ (ProviderKind::OpenaiCompat | ProviderKind::Anthropic) => {
            let key = api_key
                .or_else(|| std::env::var("BREACHSEEK_API_KEY").ok())
                .filter(|k| !k.is_empty())
                .ok_or(ConfigError::MissingApiKey(kind))?;
            let model = selector.model.clone().ok_or(ConfigError::MissingModel(kind))?;
            let mut config = HttpConfig::new(key, model);
            if let Some(url) = &selector.base_url {
                config.base_url = Some(url.clone());
            }
            if kind == ProviderKind::OpenaiCompat {
                Ok(Box::new(OpenAiCompatProvider::new(config)?))
            } else {
                Ok(Box::new(AnthropicProvider::new(config)?))
            }
        }
    }
}

pub(crate) fn default_timeout() -> Duration {
    Duration::from_secs(120)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_requires_leading_system_message() {
        let req = CompletionRequest::new(vec![Message::user("hi")]);
        assert!(matches!(req.validate(), Err(ProviderError::InvalidRequest(_))));
        let req = CompletionRequest::new(vec![]);
        assert!(req.validate().is_err());
        let req = CompletionRequest::new(vec![Message::system("s"), Message::user("u")]);
        assert!(req.validate().is_ok());
    }

    #[test]
    fn request_bounds_checked() {
        let mut req = CompletionRequest::new(vec![Message::system("s")]);
        req.temperature = 2.5;
        assert!(req.validate().is_err());
        req.temperature = 0.0;
        req.stop_sequences = vec!["a".into(); 5];
        assert!(req.validate().is_err());
    }

    #[test]
    fn provider_kind_parses() {
        assert_eq!("anthropic".parse::<ProviderKind>().unwrap(), ProviderKind::Anthropic);
        assert!("gpt".parse::<ProviderKind>().is_err());
    }

    #[test]
    fn remote_provider_without_key_is_config_error() {
        let selector = ProviderSelector {
            kind: ProviderKind::Anthropic,
            fixture: None,
            model: Some("m".into()),
            base_url: None,
        };
        let err = build_provider(&selector, Some(String::new()), 0).err().unwrap();
        assert!(matches!(err, ConfigError::MissingApiKey(ProviderKind::Anthropic)));
    }
}
