use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{ClientConfig, PromptPayload};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Rate limited; worth retrying.
    Throttled(String),
    /// Network failure or server error; worth retrying.
    Transport(String),
    Fatal(String),
}

/// Sends one prompt and returns the model's raw text.
pub trait Backend: Send + Sync {
    fn send(&self, payload: &PromptPayload) -> std::result::Result<String, BackendError>;
}

/// Chat-completion endpoint speaking the common JSON message format.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    max_tokens: usize,
}

impl HttpBackend {
    /// Fails when the API key variable is unset, before any request is made.
    pub fn new(config: &ClientConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env_var).map_err(|_| {
            Error::Config(format!(
                "environment variable {} is not set",
                config.api_key_env_var
            ))
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpBackend {
            agent,
            endpoint: config.endpoint_url.clone(),
            api_key,
            max_tokens: config.response_token_estimate,
        })
    }
}

impl Backend for HttpBackend {
    fn send(&self, payload: &PromptPayload) -> std::result::Result<String, BackendError> {
        let body = json!({
            "model": payload.model_name,
            "messages": [{"role": "user", "content": payload.render()}],
            "max_tokens": self.max_tokens,
            "temperature": 0,
        });
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(429)) => {
                return Err(BackendError::Throttled("http 429".into()))
            }
            Err(ureq::Error::StatusCode(c)) if c >= 500 => {
                return Err(BackendError::Transport(format!("http {c}")))
            }
            Err(ureq::Error::StatusCode(c)) => {
                return Err(BackendError::Fatal(format!("http {c}")))
            }
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Fatal(format!("unreadable response: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

#[derive(Debug, Deserialize)]
struct ReplayRecord {
    target: String,
    #[serde(default)]
    response: String,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug, Clone)]
enum Replay {
    Text(String),
    Throttle,
    Transport,
}

/// Serves recorded responses keyed by target sentence.
///
/// Records for the same target are served in file order; the last one is
/// repeated once the others are used up.
#[derive(Debug)]
pub struct ReplayBackend {
    records: Mutex<BTreeMap<String, VecDeque<Replay>>>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw, &path.display().to_string())
    }

    pub fn parse(raw: &str, source_name: &str) -> Result<Self> {
        let mut records: BTreeMap<String, VecDeque<Replay>> = BTreeMap::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
            let entry = match rec.error.as_deref() {
                None => Replay::Text(rec.response),
                Some("throttle") => Replay::Throttle,
                Some("transport") => Replay::Transport,
                Some(other) => {
                    return Err(Error::parse(
                        source_name,
                        i + 1,
                        format!("unknown replay error kind {other:?}"),
                    ));
                }
            };
            records.entry(rec.target).or_default().push_back(entry);
        }
        Ok(ReplayBackend {
            records: Mutex::new(records),
        })
    }
}

impl Backend for ReplayBackend {
    fn send(&self, payload: &PromptPayload) -> std::result::Result<String, BackendError> {
        let mut records = self.records.lock().expect("replay lock");
        let queue = records.get_mut(&payload.target_text).ok_or_else(|| {
            BackendError::Fatal(format!(
                "no recorded response for {:?}",
                payload.target_text
            ))
        })?;
        let entry = if queue.len() > 1 {
            queue.pop_front()
        } else {
            queue.front().cloned()
        };
        match entry {
            Some(Replay::Text(t)) => Ok(t),
            Some(Replay::Throttle) => Err(BackendError::Throttled("recorded throttle".into())),
            Some(Replay::Transport) => {
                Err(BackendError::Transport("recorded transport failure".into()))
            }
            None => Err(BackendError::Fatal("empty replay record".into())),
        }
    }
}
