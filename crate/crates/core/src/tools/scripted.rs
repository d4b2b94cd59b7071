use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ToolBackend, ToolFailure, ToolRequest};
use crate::error::ConfigError;
use crate::types::{Capability, ToolErrorKind};

/// Lowercase, whitespace-collapsed prompt used as a fixture key.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub image: String,
    #[serde(default)]
    pub prompt: String,
    pub response: String,
}

/// Canned responses keyed by `(image_ref, normalized prompt)`. Misses fall
/// through to `default_response`, so lookup is total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedToolSpec {
    pub tool_id: String,
    pub capability: Capability,
    pub fixture: BTreeMap<(String, String), String>,
    pub default_response: String,
}

#[derive(Serialize, Deserialize)]
struct ScriptedToolFile {
    tool_id: String,
    capability: Capability,
    default_response: String,
    entries: Vec<FixtureEntry>,
}

impl ScriptedToolSpec {
    pub fn new(tool_id: impl Into<String>, capability: Capability, default_response: impl Into<String>) -> Self {
        ScriptedToolSpec {
            tool_id: tool_id.into(),
            capability,
            fixture: BTreeMap::new(),
            default_response: default_response.into(),
        }
    }

    pub fn insert(&mut self, image_ref: &str, prompt: &str, response: impl Into<String>) {
        self.fixture
            .insert((image_ref.to_string(), normalize_prompt(prompt)), response.into());
    }

    pub fn lookup(&self, image_ref: &str, prompt: &str) -> &str {
        self.fixture
            .get(&(image_ref.to_string(), normalize_prompt(prompt)))
            .map(String::as_str)
            .unwrap_or(&self.default_response)
    }

    pub fn to_json(&self) -> String {
        let file = ScriptedToolFile {
            tool_id: self.tool_id.clone(),
            capability: self.capability,
            default_response: self.default_response.clone(),
            entries: self
                .fixture
                .iter()
                .map(|((image, prompt), response)| FixtureEntry {
                    image: image.clone(),
                    prompt: prompt.clone(),
                    response: response.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("fixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: ScriptedToolFile = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<fixture>".into(),
            message: e.to_string(),
        })?;
        let mut spec = ScriptedToolSpec::new(file.tool_id, file.capability, file.default_response);
        for e in file.entries {
            spec.insert(&e.image, &e.prompt, e.response);
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ScriptedToolSpec::from_json(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedTool {
    spec: ScriptedToolSpec,
}

impl ScriptedTool {
    pub fn new(spec: ScriptedToolSpec) -> Self {
        ScriptedTool { spec }
    }

    pub fn spec(&self) -> &ScriptedToolSpec {
        &self.spec
    }
}

impl ToolBackend for ScriptedTool {
    fn call(&self, request: &ToolRequest, _timeout: Duration) -> Result<String, ToolFailure> {
        Ok(self.spec.lookup(&request.image_ref, request.query_text()).to_string())
    }
}

/// Fault-injection backend: always fails with one error kind, optionally
/// after sleeping (capped at the timeout, like a real client would be).
#[derive(Debug, Clone)]
pub struct FaultyTool {
    pub kind: ToolErrorKind,
    pub delay: Duration,
}

impl FaultyTool {
    pub fn failing(kind: ToolErrorKind) -> Self {
        FaultyTool {
            kind,
            delay: Duration::ZERO,
        }
    }

    pub fn hanging() -> Self {
        FaultyTool {
            kind: ToolErrorKind::Timeout,
            delay: Duration::from_secs(3600),
        }
    }
}

impl ToolBackend for FaultyTool {
    fn call(&self, _request: &ToolRequest, timeout: Duration) -> Result<String, ToolFailure> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay.min(timeout));
            if self.delay >= timeout {
                return Err(ToolFailure::new(ToolErrorKind::Timeout, format!("no reply within {timeout:?}")));
            }
        }
        Err(ToolFailure::new(self.kind, format!("injected {} failure", self.kind)))
    }
}
