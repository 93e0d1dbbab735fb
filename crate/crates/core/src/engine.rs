//! Text generation backends.
//!
//! The mock engine answers `MOCK(<label>): <user message>` and never touches
//! the network. The live engine speaks the OpenAI-compatible
//! `POST {endpoint}/chat/completions` protocol:
//!
//! ```json
//! {"model": "<bound model>", "messages": [
//!     {"role": "system", "content": "<guidance prompt>"},
//!     {"role": "user", "content": "<prompt>"}]}
//! ```
//!
//! and reads `choices[0].message.content` from the reply.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Mock,
    Live,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mock => "mock",
            Self::Live => "live",
        })
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            other => Err(format!("unknown engine kind `{other}` (expected mock or live)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Configuration(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

/// Endpoint and credential for a live OpenAI-compatible service.
#[derive(Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    credential: String,
}

impl fmt::Debug for LiveConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiveConfig")
            .field("endpoint", &self.endpoint)
            .field("credential", &"<redacted>")
            .finish()
    }
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, credential: impl Into<String>) -> Result<Self, EngineError> {
        let credential = credential.into();
        if credential.trim().is_empty() {
            return Err(EngineError::Configuration("live mode requires a non-empty API credential".into()));
        }
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        if endpoint.is_empty() {
            return Err(EngineError::Configuration("live mode requires an endpoint".into()));
        }
        Ok(Self { endpoint, credential })
    }

    pub fn credential(&self) -> &str {
        &self.credential
    }

    pub(crate) fn client(&self) -> Result<reqwest::Client, EngineError> {
        reqwest::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EngineError::Transport(e.to_string()))
    }
}

/// One chat turn: a steering instruction plus the user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    /// Short name that identifies the caller in mock output, e.g. `Young`.
    pub label: String,
    pub model: Option<String>,
    pub system: String,
    pub user: String,
}

#[async_trait]
pub trait GenerationEngine: Send + Sync {
    fn kind(&self) -> EngineKind;
    async fn complete(&self, request: &ChatRequest) -> Result<String, EngineError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MockEngine;

#[async_trait]
impl GenerationEngine for MockEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Mock
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, EngineError> {
        Ok(format!("MOCK({}): {}", request.label, request.user))
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiEngine {
    config: LiveConfig,
    client: reqwest::Client,
}

impl OpenAiEngine {
    pub fn new(config: LiveConfig) -> Result<Self, EngineError> {
        let client = config.client()?;
        Ok(Self { config, client })
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Maps a non-success HTTP status to an engine error.
pub(crate) async fn status_error(resp: reqwest::Response) -> EngineError {
    let status = resp.status();
    let body = resp.text().await.unwrap_or_default();
    let snippet: String = body.chars().take(300).collect();
    if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
        EngineError::Auth(format!("{status}: {snippet}"))
    } else {
        EngineError::Transport(format!("{status}: {snippet}"))
    }
}

#[async_trait]
impl GenerationEngine for OpenAiEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Live
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, EngineError> {
        let model = request.model.as_deref().ok_or_else(|| {
            EngineError::Configuration(format!("no model is bound for `{}`", request.label))
        })?;
        let body = CompletionBody {
            model,
            messages: [
                WireMessage {
                    role: "system",
                    content: &request.system,
                },
                WireMessage {
                    role: "user",
                    content: &request.user,
                },
            ],
        };
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.config.endpoint))
            .bearer_auth(self.config.credential())
            .json(&body)
            .send()
            .await
            .map_err(|e| EngineError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(status_error(resp).await);
        }
        let reply: CompletionReply = resp
            .json()
            .await
            .map_err(|e| EngineError::BadResponse(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| EngineError::BadResponse("reply has no message content".into()))
    }
}
