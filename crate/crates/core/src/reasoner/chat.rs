use std::time::Duration;

use serde_json::json;

use super::templates::PromptInstance;
use super::Reasoner;
use crate::error::ReasonerError;
use crate::tools::chat_content;

/// Reasoner backed by a chat-completions endpoint, called at temperature 0.
#[derive(Debug, Clone)]
pub struct ChatReasoner {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl ChatReasoner {
    pub fn new(url: String, model: String, api_key: Option<String>, timeout_ms: u64, retries: u32) -> Self {
        ChatReasoner {
            url,
            model,
            api_key,
            timeout: Duration::from_millis(timeout_ms.max(1)),
            retries,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn attempt(&self, body: &str) -> Result<String, String> {
        let mut req = self
            .client
            .post(&self.url)
            .timeout(self.timeout)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let bytes = resp.bytes().map_err(|e| e.to_string())?;
        chat_content(&bytes)
    }
}

impl Reasoner for ChatReasoner {
    fn complete(&self, prompt: &PromptInstance) -> Result<String, ReasonerError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": prompt.system_prompt},
                {"role": "user", "content": prompt.user_prompt},
            ]
        })
        .to_string();
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(ReasonerError::Backend {
            endpoint: self.url.clone(),
            message: last,
        })
    }

    fn endpoint(&self) -> String {
        self.url.clone()
    }
}
