//! LLM-backed channel identifier.
//!
//! Talks to any OpenAI-compatible `chat/completions` endpoint. The whole
//! batch goes out as one prompt and the reply must hold exactly one
//! prediction line per description.

use std::env;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ident::{build_prompt, parse_llm_response, ChannelIdentifier, ChannelPrediction, IdentError};

pub const ENV_ENDPOINT: &str = "TAPAUDIT_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "TAPAUDIT_LLM_API_KEY";
pub const ENV_MODEL: &str = "TAPAUDIT_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }

    /// Read `TAPAUDIT_LLM_ENDPOINT`, `TAPAUDIT_LLM_MODEL` and the optional
    /// `TAPAUDIT_LLM_API_KEY`.
    pub fn from_env() -> Result<Self, IdentError> {
        let endpoint = env::var(ENV_ENDPOINT).map_err(|_| IdentError::Remote(format!("{ENV_ENDPOINT} is not set")))?;
        let model = env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4".to_string());
        let mut config = RemoteConfig::new(endpoint, model);
        config.api_key = env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(config)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

pub struct RemoteIdentifier {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteIdentifier {
    pub fn new(config: RemoteConfig) -> Result<Self, IdentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| IdentError::Remote(e.to_string()))?;
        Ok(RemoteIdentifier { config, client })
    }

    /// Send one prompt and return the raw reply text.
    pub fn complete(&self, prompt: &str) -> Result<String, IdentError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(msg)) => return Err(IdentError::Remote(msg)),
                Err(Attempt::Retryable(msg)) if attempt >= self.config.max_retries => {
                    return Err(IdentError::Remote(format!(
                        "giving up after {} attempts: {msg}",
                        attempt + 1
                    )))
                }
                Err(Attempt::Retryable(msg)) => {
                    let wait = self.config.backoff(attempt);
                    log::warn!(
                        "remote identifier attempt {} failed ({msg}); retrying in {wait:?}",
                        attempt + 1
                    );
                    thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn send_once(&self, body: &ChatRequest<'_>) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no choices".into()))
    }
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl ChannelIdentifier for RemoteIdentifier {
    fn identify_batch(&self, descriptions: &[String]) -> Result<Vec<ChannelPrediction>, IdentError> {
        let prompt = build_prompt(descriptions)?;
        let reply = self.complete(&prompt)?;
        let predictions = parse_llm_response(&reply)?;
        if predictions.len() != descriptions.len() {
            return Err(IdentError::Remote(format!(
                "expected {} prediction lines, got {}",
                descriptions.len(),
                predictions.len()
            )));
        }
        Ok(predictions)
    }
}
