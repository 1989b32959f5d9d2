//! OpenAI-compatible chat-completions and embeddings client.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, Embedding, LanguageModel, PromptRequest};

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    /// Environment variable that overrides `api_key` when set.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, embedding_model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            embedding_model: embedding_model.into(),
            api_key: None,
            api_key_env: default_key_env(),
            attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    fn resolved_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| self.api_key.clone())
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let api_key = config.resolved_key();
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying transport failures, 429 and 5xx with
    /// exponential backoff.
    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.endpoint(path);
        let attempts = self.config.attempts.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| BackendError::Unavailable(format!("bad response body: {e}")));
                    }
                    let text = resp.text().unwrap_or_default();
                    last_error = format!("{url}: HTTP {status}: {text}");
                    if !(status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()) {
                        break;
                    }
                }
                Err(e) => last_error = format!("{url}: {e}"),
            }
            log::warn!("backend attempt {} of {attempts} failed: {last_error}", attempt + 1);
        }
        Err(BackendError::Unavailable(last_error))
    }
}

impl LanguageModel for HttpBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.rendered_text()}],
            "max_tokens": request.max_tokens(),
            "temperature": request.temperature(),
        });
        let value = self.post("chat/completions", &body)?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .trim()
            .to_string();
        if content.is_empty() {
            return Err(BackendError::EmptyCompletion(request.template_id()));
        }
        Ok(content)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let body = json!({"model": self.config.embedding_model, "input": text});
        let value = self.post("embeddings", &body)?;
        let raw: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|xs| xs.iter().filter_map(Value::as_f64).collect())
            .unwrap_or_default();
        Embedding::from_raw(raw)
            .ok_or_else(|| BackendError::Unavailable("embedding response had no usable vector".into()))
    }
}
