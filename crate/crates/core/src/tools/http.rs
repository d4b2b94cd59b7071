use std::time::Duration;

use serde_json::json;

use super::wire::{wire_decode, wire_encode, WireError};
use super::{ToolBackend, ToolFailure, ToolRequest};
use crate::types::{Adapter, Capability, ToolErrorKind};

const DETECT_INSTRUCTION: &str = "List every object you can detect in the image with its count, \
in the form `detected: label (count), label (count)`.";

/// Remote tool reached over HTTP, either speaking the native wire schema or
/// adapted onto a chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpTool {
    url: String,
    adapter: Adapter,
    model: Option<String>,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpTool {
    pub fn new(url: impl Into<String>, adapter: Adapter, model: Option<String>, api_key: Option<String>) -> Self {
        HttpTool {
            url: url.into(),
            adapter,
            model,
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn body(&self, request: &ToolRequest) -> String {
        match self.adapter {
            Adapter::Native => wire_encode(request),
            Adapter::ChatCompletions => {
                let prompt = match request.task {
                    Capability::Detect => DETECT_INSTRUCTION.to_string(),
                    _ => request.query_text().to_string(),
                };
                json!({
                    "model": self.model.clone().unwrap_or_default(),
                    "temperature": 0,
                    "messages": [{
                        "role": "user",
                        "content": [
                            {"type": "text", "text": prompt},
                            {"type": "image_url", "image_url": {"url": request.image_ref}}
                        ]
                    }]
                })
                .to_string()
            }
        }
    }

    fn decode(&self, bytes: &[u8]) -> Result<String, ToolFailure> {
        match self.adapter {
            Adapter::Native => wire_decode(bytes).map_err(|e| match e {
                WireError::EmptyText => ToolFailure::new(ToolErrorKind::EmptyReply, e.to_string()),
                _ => ToolFailure::new(ToolErrorKind::MalformedReply, e.to_string()),
            }),
            Adapter::ChatCompletions => chat_content(bytes)
                .map_err(|m| ToolFailure::new(ToolErrorKind::MalformedReply, m)),
        }
    }
}

/// `choices[0].message.content` of a chat-completions reply.
pub(crate) fn chat_content(bytes: &[u8]) -> Result<String, String> {
    let v: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let content = &v["choices"][0]["message"]["content"];
    if let Some(s) = content.as_str() {
        return Ok(s.to_string());
    }
    // some servers return content parts
    if let Some(parts) = content.as_array() {
        let text: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        if !text.is_empty() {
            return Ok(text.join(""));
        }
    }
    Err("reply has no choices[0].message.content".into())
}

pub(crate) fn classify(err: &reqwest::Error) -> ToolErrorKind {
    if err.is_timeout() {
        ToolErrorKind::Timeout
    } else if err.is_connect() {
        ToolErrorKind::Connection
    } else if err.is_status() {
        ToolErrorKind::Status
    } else if err.is_decode() || err.is_body() {
        ToolErrorKind::MalformedReply
    } else {
        ToolErrorKind::Connection
    }
}

impl ToolBackend for HttpTool {
    fn call(&self, request: &ToolRequest, timeout: Duration) -> Result<String, ToolFailure> {
        let mut builder = self
            .client
            .post(&self.url)
            .timeout(timeout)
            .header("content-type", "application/json")
            .body(self.body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| ToolFailure::new(classify(&e), format!("{}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ToolFailure::new(ToolErrorKind::Status, format!("{}: HTTP {status}", self.url)));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| ToolFailure::new(classify(&e), format!("{}: {e}", self.url)))?;
        self.decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_content_shapes() {
        let a = br#"{"choices":[{"message":{"content":"a dog"}}]}"#;
        assert_eq!(chat_content(a).unwrap(), "a dog");
        let b = br#"{"choices":[{"message":{"content":[{"type":"text","text":"a "},{"type":"text","text":"dog"}]}}]}"#;
        assert_eq!(chat_content(b).unwrap(), "a dog");
        assert!(chat_content(br#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn chat_body_carries_image_and_prompt() {
        let t = HttpTool::new("http://x", Adapter::ChatCompletions, Some("m".into()), None);
        let body: serde_json::Value =
            serde_json::from_str(&t.body(&ToolRequest::vqa("http://img/1.jpg", "Is there a dog?").unwrap())).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"][0]["text"], "Is there a dog?");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "http://img/1.jpg");
    }
}
