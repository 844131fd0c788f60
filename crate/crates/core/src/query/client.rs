use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_prompt, parse_response, PromptContext, QueryError};
use crate::relevancy::QuerySpec;

pub const DEFAULT_API_KEY_ENV: &str = "LESPLAT_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub model: String,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First retry delay; doubles on every further retry.
    pub backoff_base_ms: u64,
    /// Offline mode: answer from this fixture file and never touch the network.
    pub stub_fixtures: Option<PathBuf>,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            model: DEFAULT_MODEL.into(),
            timeout_secs: 60,
            retries: 3,
            backoff_base_ms: 1000,
            stub_fixtures: None,
        }
    }
}

impl LlmClientConfig {
    pub fn stub(path: impl Into<PathBuf>) -> Self {
        Self {
            stub_fixtures: Some(path.into()),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), QueryError> {
        if self.timeout_secs == 0 {
            return Err(QueryError::Context("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system: String,
    pub user: String,
    pub model: String,
    pub response: String,
    pub latency_ms: u64,
    pub retries: u32,
}

/// Hex SHA-256 of `system + "\n" + user`; the key of a fixture entry.
pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update(b"\n");
    h.update(user.as_bytes());
    hex::encode(h.finalize().as_slice())
}

/// Recorded replies keyed by [`prompt_hash`]. On disk: `{"<hash>": "<reply>"}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureSet {
    pub responses: BTreeMap<String, String>,
}

impl FixtureSet {
    pub fn load(path: &std::path::Path) -> Result<Self, QueryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QueryError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| QueryError::Fixture(format!("{}: {e}", path.display())))
    }

    pub fn insert(&mut self, system: &str, user: &str, response: impl Into<String>) {
        self.responses.insert(prompt_hash(system, user), response.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixtures serialize")
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

enum Attempt {
    Retryable(QueryError),
    Fatal(QueryError),
}

fn send_once(
    client: &reqwest::blocking::Client,
    cfg: &LlmClientConfig,
    api_key: Option<&str>,
    body: &ChatRequest<'_>,
) -> Result<String, Attempt> {
    let mut req = client.post(&cfg.endpoint).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| {
        Attempt::Retryable(QueryError::Transport {
            status: None,
            message: e.to_string(),
        })
    })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| {
        Attempt::Retryable(QueryError::Transport {
            status: Some(status.as_u16()),
            message: e.to_string(),
        })
    })?;
    if !status.is_success() {
        let err = QueryError::Transport {
            status: Some(status.as_u16()),
            message: text.chars().take(200).collect(),
        };
        return Err(if status.is_server_error() || status.as_u16() == 429 {
            Attempt::Retryable(err)
        } else {
            Attempt::Fatal(err)
        });
    }
    let parsed: ChatResponse =
        serde_json::from_str(&text).map_err(|e| Attempt::Fatal(QueryError::Protocol(format!("invalid JSON body: {e}"))))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| Attempt::Fatal(QueryError::Protocol("response has no message content".into())))
}

/// Builds the prompt for `ctx`, obtains a reply and parses it.
///
/// In stub mode the reply comes from the fixture file and no client is
/// constructed. Otherwise transport failures, 429 and 5xx responses are
/// retried up to `cfg.retries` times with exponential backoff.
pub fn generate_query(cfg: &LlmClientConfig, ctx: &PromptContext) -> Result<(QuerySpec, ChatExchange), QueryError> {
    cfg.validate()?;
    let (system, user) = build_prompt(ctx)?;
    let started = Instant::now();

    if let Some(path) = &cfg.stub_fixtures {
        let fixtures = FixtureSet::load(path)?;
        let hash = prompt_hash(&system, &user);
        let response = fixtures
            .responses
            .get(&hash)
            .cloned()
            .ok_or(QueryError::FixtureMissing(hash))?;
        let spec = parse_response(&response)?;
        let exchange = ChatExchange {
            system,
            user,
            model: cfg.model.clone(),
            response,
            latency_ms: started.elapsed().as_millis() as u64,
            retries: 0,
        };
        return Ok((spec, exchange));
    }

    let api_key = std::env::var(&cfg.api_key_env).ok();
    if api_key.is_none() {
        debug!("{} not set; sending request without authorization", cfg.api_key_env);
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build()
        .map_err(|e| QueryError::Transport {
            status: None,
            message: e.to_string(),
        })?;
    let body = ChatRequest {
        model: &cfg.model,
        messages: [
            ChatMessage {
                role: "system",
                content: &system,
            },
            ChatMessage {
                role: "user",
                content: &user,
            },
        ],
        temperature: 0.0,
    };

    let mut retries = 0;
    let response = loop {
        match send_once(&client, cfg, api_key.as_deref(), &body) {
            Ok(text) => break text,
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Retryable(e)) => {
                if retries >= cfg.retries {
                    return Err(e);
                }
                let delay = cfg.backoff_base_ms.saturating_mul(1 << retries.min(20));
                retries += 1;
                warn!("chat request failed ({e}); retry {retries}/{} in {delay} ms", cfg.retries);
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
    };
    let spec = parse_response(&response)?;
    Ok((
        spec,
        ChatExchange {
            system,
            user,
            model: cfg.model.clone(),
            response,
            latency_ms: started.elapsed().as_millis() as u64,
            retries,
        },
    ))
}
