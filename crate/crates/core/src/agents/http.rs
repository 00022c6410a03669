//! Remote chat-completion transports.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::prompt::ChatMessage;
use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `POST /chat/completions` with `choices[0].message.content`.
    #[default]
    OpenaiChat,
    /// `POST /messages` with `content[].text`.
    AnthropicMessages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub url: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub credential_env: String,
    #[serde(default)]
    pub api_style: ApiStyle,
    #[serde(default)]
    pub rate_limit_per_minute: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    300
}

impl HttpEndpoint {
    pub fn limiter_key(&self) -> String {
        format!("{}#{}", self.url, self.model)
    }
}

pub(crate) fn build_agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn request_body(
    endpoint: &HttpEndpoint,
    messages: &[ChatMessage],
    sampling: &Map<String, Value>,
) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(endpoint.model));
    body.insert("messages".into(), serde_json::to_value(messages).expect("messages serialize"));
    if endpoint.api_style == ApiStyle::AnthropicMessages && !sampling.contains_key("max_tokens") {
        body.insert("max_tokens".into(), json!(8192));
    }
    for (k, v) in sampling {
        body.insert(k.clone(), v.clone());
    }
    Value::Object(body)
}

pub(crate) fn extract_text(style: ApiStyle, payload: &Value) -> Option<String> {
    match style {
        ApiStyle::OpenaiChat => payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string),
        ApiStyle::AnthropicMessages => {
            let blocks = payload.get("content")?.as_array()?;
            let text: Vec<&str> = blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect();
            (!text.is_empty()).then(|| text.concat())
        }
    }
}

/// One HTTP round trip. Returns the raw payload and the extracted reply text.
pub(crate) fn call(
    agent: &ureq::Agent,
    endpoint: &HttpEndpoint,
    api_key: &str,
    body: &Value,
) -> Result<(String, String), AgentError> {
    let req = agent.post(&endpoint.url).header("Content-Type", "application/json");
    let req = match endpoint.api_style {
        ApiStyle::OpenaiChat => req.header("Authorization", &format!("Bearer {api_key}")),
        ApiStyle::AnthropicMessages => req
            .header("x-api-key", api_key)
            .header("anthropic-version", "2023-06-01"),
    };
    let mut resp = req
        .send(body.to_string())
        .map_err(|e| AgentError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let raw = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| AgentError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(AgentError::Status { code: status, body: raw });
    }
    let payload: Value =
        serde_json::from_str(&raw).map_err(|e| AgentError::Transport(format!("bad payload: {e}")))?;
    let text = extract_text(endpoint.api_style, &payload)
        .ok_or_else(|| AgentError::Transport("payload has no reply text".into()))?;
    Ok((raw, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoint(style: ApiStyle) -> HttpEndpoint {
        HttpEndpoint {
            url: "http://localhost/v1/chat/completions".into(),
            model: "m".into(),
            credential_env: "KEY".into(),
            api_style: style,
            rate_limit_per_minute: None,
            timeout_secs: 5,
        }
    }

    #[test]
    fn sampling_passes_through() {
        let mut sampling = Map::new();
        sampling.insert("temperature".into(), json!(0.2));
        let body = request_body(&endpoint(ApiStyle::OpenaiChat), &[ChatMessage::user("hi")], &sampling);
        assert_eq!(body["temperature"], json!(0.2));
        assert_eq!(body["messages"][0]["role"], json!("user"));
        assert!(body.get("max_tokens").is_none());
        let body = request_body(&endpoint(ApiStyle::AnthropicMessages), &[], &Map::new());
        assert_eq!(body["max_tokens"], json!(8192));
    }

    #[test]
    fn reply_extraction() {
        let openai = json!({"choices": [{"message": {"content": "hello"}}]});
        assert_eq!(extract_text(ApiStyle::OpenaiChat, &openai).unwrap(), "hello");
        let anthropic = json!({"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]});
        assert_eq!(extract_text(ApiStyle::AnthropicMessages, &anthropic).unwrap(), "ab");
        assert!(extract_text(ApiStyle::OpenaiChat, &anthropic).is_none());
    }
}
