//! Chat-completions client for OpenAI-compatible endpoints.

use std::time::Duration;

use scenemem::agent::{Message, ModelClient, Role};
use scenemem::clients::ClientError;
use serde_json::{json, Value};

/// Credential variable; the only setting read from the environment.
pub const API_KEY_ENV: &str = "SCENEMEM_API_KEY";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

pub struct LiveClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(api_base: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: format!("{}/chat/completions", api_base.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            agent,
        }
    }

    pub fn from_env(api_base: &str, model: &str, timeout: Duration) -> Self {
        Self::new(api_base, model, std::env::var(API_KEY_ENV).ok(), timeout)
    }

    fn request_body(&self, system: &str, history: &[Message]) -> Value {
        let mut messages = vec![json!({ "role": "system", "content": system })];
        messages.extend(history.iter().map(|m| {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            json!({ "role": role, "content": m.content })
        }));
        json!({ "model": self.model, "messages": messages, "temperature": 0 })
    }
}

impl ModelClient for LiveClient {
    fn complete(&self, system: &str, history: &[Message]) -> Result<String, ClientError> {
        let body = self.request_body(system, history).to_string();
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| ClientError(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError(format!("reading response: {e}")))?;
        if !status.is_success() {
            return Err(ClientError(format!("HTTP {status}: {}", text.chars().take(300).collect::<String>())));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ClientError(format!("bad response JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ClientError("response has no choices[0].message.content".into()))
    }
}
