use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("answer {0:?} is not one of Yes, No, Unclear")]
pub struct ParseVerdictError(pub String);

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("empty trace record")]
    Empty,
    #[error("trace record does not parse: {0}")]
    Parse(String),
    #[error("trace field `{field}` is invalid: {message}")]
    Validation { field: &'static str, message: String },
}

impl TraceError {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        TraceError::Validation {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool `{0}` is not registered")]
    UnknownTool(String),
    #[error("tool id `{0}` registered twice")]
    DuplicateTool(String),
    #[error("no backend bound for tool `{0}`")]
    MissingBackend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("a VQA request needs a prompt")]
    MissingPrompt,
    #[error("a detect request takes no prompt")]
    UnexpectedPrompt,
}

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("reasoner backend {endpoint} failed: {message}")]
    Backend { endpoint: String, message: String },
    #[error("reasoner reply is not in the required format: {raw:?}")]
    Format { raw: String },
    #[error("cannot extract a target object from question {0:?}")]
    Unextractable(String),
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("invalid reasoner input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template} has unfilled slot `{slot}`")]
    MissingSlot { template: &'static str, slot: String },
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule set has no catch-all rule at the end")]
    MissingCatchAll,
    #[error("rule set is not total: no rule matches {0}")]
    NotTotal(String),
    #[error("rule set is empty")]
    Empty,
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no verdicts to fuse")]
    NoVerdicts,
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("loop step called in phase {0}")]
    InvalidPhase(&'static str),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("pair `{pair_id}` has {count} member(s), expected 2")]
    Pairing { pair_id: String, count: usize },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
}
