//! Declarative run configuration: one TOML file naming tools, rules,
//! lexicon, reasoner and loop parameters. Relative paths resolve against the
//! file's directory; credentials come only from environment variables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::Engine;
use crate::error::{ConfigError, EngineError};
use crate::fusion::{FallbackWeighting, RuleSet};
use crate::lexicon::Lexicon;
use crate::reasoner::{build_reasoner, Reasoner};
use crate::tools::{
    CorruptionMode, ErrorModelTool, ErrorModelToolSpec, HttpTool, ScriptedTool, ScriptedToolSpec, ToolBackend,
    ToolRegistry,
};
use crate::types::{
    Adapter, Capability, EngineConfig, Endpoint, ReasonerEndpoint, ToolDescriptor, UnclearPolicy,
    DEFAULT_ATTRIBUTE_PROMPT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModelEntry {
    pub flip_probability: f64,
    pub corruption_mode: CorruptionMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub targets: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub swap_pool: Vec<String>,
}

/// One tool, as written in `[[tools]]` or a registry file. Exactly one of
/// `url` and `fixture` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolEntry {
    pub id: String,
    pub capability: Capability,
    #[serde(default)]
    pub trust_rank: u8,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub adapter: Adapter,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Scripted fixture file for offline runs.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub error_model: Option<ErrorModelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default)]
    pub unclear_policy: UnclearPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub plug_in_tool: Option<String>,
    #[serde(default = "default_attribute_prompt")]
    pub attribute_prompt: String,
    #[serde(default)]
    pub fallback_weighting: FallbackWeighting,
    /// `default`, `majority`, or a path to a rule-set file.
    #[serde(default = "default_rules")]
    pub rules: String,
    /// Lexicon file; the bundled one when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Worker threads for benchmark runs; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub reasoner: ReasonerEndpoint,
    #[serde(default)]
    pub initial_query_plan: Option<BTreeMap<Capability, String>>,
    /// Registry file holding a JSON list of tool entries.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub tools: Vec<ToolEntry>,
}

fn default_k() -> u32 {
    3
}
fn default_n() -> u32 {
    5
}
fn default_timeout() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_attribute_prompt() -> String {
    DEFAULT_ATTRIBUTE_PROMPT.to_string()
}
fn default_rules() -> String {
    "default".to_string()
}

/// Everything needed to construct an engine.
pub struct Runtime {
    pub config: EngineConfig,
    pub registry: ToolRegistry,
    pub reasoner: Arc<dyn Reasoner>,
    pub lexicon: Arc<Lexicon>,
    pub workers: usize,
    /// SHA-256 of the config file bytes.
    pub config_checksum: String,
}

impl Runtime {
    pub fn engine(&self) -> Result<Engine, EngineError> {
        Engine::new(
            self.config.clone(),
            self.registry.clone(),
            self.reasoner.clone(),
            self.lexicon.clone(),
        )
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_config(path: &Path) -> Result<Runtime, ConfigError> {
    let text = read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let file: ConfigFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut rt = build_runtime(file, base)?;
    rt.config_checksum = hex_sha256(text.as_bytes());
    Ok(rt)
}

fn build_backend(entry: &ToolEntry, base: &Path, lexicon: &Arc<Lexicon>) -> Result<(Endpoint, Arc<dyn ToolBackend>), ConfigError> {
    match (&entry.url, &entry.fixture) {
        (Some(url), None) => {
            if entry.error_model.is_some() {
                return Err(ConfigError::Invalid(format!(
                    "tool `{}`: error_model applies to fixture tools only",
                    entry.id
                )));
            }
            let key = entry.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
            let endpoint = Endpoint::Http {
                url: url.clone(),
                adapter: entry.adapter,
                model: entry.model.clone(),
                api_key_env: entry.api_key_env.clone(),
            };
            Ok((endpoint, Arc::new(HttpTool::new(url.clone(), entry.adapter, entry.model.clone(), key))))
        }
        (None, Some(fixture)) => {
            let mut spec = ScriptedToolSpec::load(&resolve(base, fixture))?;
            spec.tool_id = entry.id.clone();
            spec.capability = entry.capability;
            let endpoint = Endpoint::Scripted {
                source: fixture.display().to_string(),
            };
            let backend: Arc<dyn ToolBackend> = match &entry.error_model {
                None => Arc::new(ScriptedTool::new(spec)),
                Some(em) => {
                    if !(0.0..=1.0).contains(&em.flip_probability) {
                        return Err(ConfigError::Invalid(format!(
                            "tool `{}`: flip_probability {} outside [0, 1]",
                            entry.id, em.flip_probability
                        )));
                    }
                    let mut s = ErrorModelToolSpec::new(spec, em.flip_probability, em.corruption_mode, em.seed);
                    s.targets = em.targets.clone();
                    s.swap_pool = em.swap_pool.clone();
                    Arc::new(ErrorModelTool::new(s, lexicon.clone()))
                }
            };
            Ok((endpoint, backend))
        }
        _ => Err(ConfigError::Invalid(format!(
            "tool `{}` needs exactly one of `url` and `fixture`",
            entry.id
        ))),
    }
}

pub fn build_runtime(file: ConfigFile, base: &Path) -> Result<Runtime, ConfigError> {
    let lexicon = Arc::new(match &file.lexicon {
        Some(p) => Lexicon::load(&resolve(base, p))?,
        None => Lexicon::bundled(),
    });
    let rules = match file.rules.as_str() {
        "default" => RuleSet::default(),
        "majority" => RuleSet::majority(),
        p => RuleSet::load(&resolve(base, Path::new(p)))?,
    };
    let mut entries = file.tools.clone();
    if let Some(reg) = &file.registry {
        let reg_path = resolve(base, reg);
        let listed: Vec<ToolEntry> = serde_json::from_str(&read(&reg_path)?).map_err(|e| ConfigError::Parse {
            path: reg_path.display().to_string(),
            message: e.to_string(),
        })?;
        let reg_base = reg_path.parent().unwrap_or(base).to_path_buf();
        for mut e in listed {
            if let Some(f) = &e.fixture {
                e.fixture = Some(resolve(&reg_base, f));
            }
            entries.push(e);
        }
    }
    if entries.is_empty() {
        return Err(ConfigError::Invalid("no tools configured".into()));
    }
    let mut registry = ToolRegistry::new();
    let mut tools = Vec::new();
    for entry in &entries {
        let (endpoint, backend) = build_backend(entry, base, &lexicon)?;
        let descriptor = ToolDescriptor {
            id: entry.id.clone(),
            capability: entry.capability,
            trust_rank: entry.trust_rank,
            endpoint,
            display_name: entry.display_name.clone().unwrap_or_else(|| entry.id.clone()),
        };
        registry
            .register(descriptor.clone(), backend)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        tools.push(descriptor);
    }
    let mut config = EngineConfig {
        k: file.k,
        n: file.n,
        unclear_policy: file.unclear_policy,
        tools,
        reasoner_endpoint: file.reasoner.clone(),
        timeout_ms: file.timeout_ms,
        retries: file.retries,
        seed: file.seed,
        plug_in_tool: file.plug_in_tool.clone(),
        attribute_prompt: file.attribute_prompt.clone(),
        fallback_weighting: file.fallback_weighting,
        rules,
        ..EngineConfig::default()
    };
    if let Some(plan) = &file.initial_query_plan {
        config.initial_query_plan = plan.clone();
    }
    let reasoner = build_reasoner(&file.reasoner, lexicon.clone(), file.timeout_ms, file.retries);
    Ok(Runtime {
        config,
        registry,
        reasoner,
        lexicon,
        workers: file.workers,
        config_checksum: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_needs_one_endpoint() {
        let file: ConfigFile = toml::from_str(
            r#"
            [[tools]]
            id = "cap"
            capability = "caption"
            "#,
        )
        .unwrap();
        assert!(matches!(build_runtime(file, Path::new(".")), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn http_tools_and_defaults() {
        let file: ConfigFile = toml::from_str(
            r#"
            k = 2
            [reasoner]
            kind = "chat_completions"
            url = "http://127.0.0.1:9/v1/chat/completions"
            model = "m"
            [[tools]]
            id = "cap"
            capability = "caption"
            url = "http://127.0.0.1:9/caption"
            adapter = "chat_completions"
            "#,
        )
        .unwrap();
        let rt = build_runtime(file, Path::new(".")).unwrap();
        assert_eq!(rt.config.k, 2);
        assert_eq!(rt.config.n, 5);
        assert_eq!(rt.reasoner.endpoint(), "http://127.0.0.1:9/v1/chat/completions");
        assert!(rt.engine().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("kk = 3").is_err());
    }
}
