//! Shared domain vocabulary: verdicts, tools, claims, queries, responses and traces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ParseVerdictError;
use crate::fusion::{FallbackWeighting, RuleSet};

/// Tri-valued answer produced by per-response reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
    Unclear,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Yes, Verdict::No, Verdict::Unclear];

    pub fn is_decisive(self) -> bool {
        !matches!(self, Verdict::Unclear)
    }

    /// Parse the value part of a `Possible Answer:` line.
    ///
    /// Case-insensitive, tolerates surrounding quotes and a trailing period.
    /// Anything outside the three-valued lattice is an error.
    pub fn parse_answer(raw: &str) -> Result<Verdict, ParseVerdictError> {
        let cleaned = raw
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '`')
            .trim_end_matches('.')
            .trim();
        match cleaned.to_ascii_lowercase().as_str() {
            "yes" => Ok(Verdict::Yes),
            "no" => Ok(Verdict::No),
            "unclear" => Ok(Verdict::Unclear),
            _ => Err(ParseVerdictError(raw.trim().to_string())),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "Yes",
            Verdict::No => "No",
            Verdict::Unclear => "Unclear",
        })
    }
}

impl FromStr for Verdict {
    type Err = ParseVerdictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verdict::parse_answer(s)
    }
}

/// Binary benchmark answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        })
    }
}

impl FromStr for Answer {
    type Err = ParseVerdictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            _ => Err(ParseVerdictError(s.to_string())),
        }
    }
}

/// How an `Unclear` final verdict is turned into a benchmark answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnclearPolicy {
    #[default]
    MapToNo,
    MapToYes,
}

impl UnclearPolicy {
    pub fn binarize(self, verdict: Verdict) -> Answer {
        match (verdict, self) {
            (Verdict::Yes, _) => Answer::Yes,
            (Verdict::No, _) => Answer::No,
            (Verdict::Unclear, UnclearPolicy::MapToNo) => Answer::No,
            (Verdict::Unclear, UnclearPolicy::MapToYes) => Answer::Yes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Caption,
    Detect,
    Vqa,
}

impl Capability {
    pub const ALL: [Capability; 3] = [Capability::Detect, Capability::Caption, Capability::Vqa];

    /// Whether the tool can answer a free-text question (evidential queries).
    pub fn accepts_prompt(self) -> bool {
        !matches!(self, Capability::Detect)
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Caption => "caption",
            Capability::Detect => "detect",
            Capability::Vqa => "vqa",
        })
    }
}

/// Per-backend mapping from the tool request schema onto the remote API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    /// `{task, image, prompt}` in, `{text}` out.
    #[default]
    Native,
    /// OpenAI-style `/chat/completions` with an image part.
    ChatCompletions,
}

/// Connection config for a tool. Opaque to everything except the adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    /// In-process fixture; `source` names where the fixture came from.
    Scripted { source: String },
    Http {
        url: String,
        #[serde(default)]
        adapter: Adapter,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
}

impl Endpoint {
    pub fn describe(&self) -> String {
        match self {
            Endpoint::Scripted { source } => format!("scripted:{source}"),
            Endpoint::Http { url, .. } => url.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub id: String,
    pub capability: Capability,
    /// Lower is more trusted for existence questions.
    pub trust_rank: u8,
    pub endpoint: Endpoint,
    pub display_name: String,
}

/// A single-attribute claim about an object, in original and anonymized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeClaim {
    pub original: String,
    pub modified: String,
}

pub const OBJECT_PLACEHOLDER: &str = "the object";
pub const CLAIM_WORD_LIMIT: usize = 15;

impl AttributeClaim {
    /// Parse one `original&modified` line. Returns `None` when the line does
    /// not have exactly one separator, either side is empty, or the modified
    /// side does not mention "the object".
    pub fn parse_line(line: &str) -> Option<AttributeClaim> {
        let line = line.trim();
        let mut parts = line.split('&');
        let original = parts.next()?.trim();
        let modified = parts.next()?.trim();
        if parts.next().is_some() || original.is_empty() || modified.is_empty() {
            return None;
        }
        if !modified.to_lowercase().contains(OBJECT_PLACEHOLDER) {
            return None;
        }
        Some(AttributeClaim {
            original: original.to_string(),
            modified: modified.to_string(),
        })
    }

    pub fn to_line(&self) -> String {
        format!("{}&{}", self.original, self.modified)
    }

    /// Claims are expected to stay under the word limit; longer ones are kept but flagged.
    pub fn is_over_length(&self) -> bool {
        self.original.split_whitespace().count() >= CLAIM_WORD_LIMIT
    }
}

pub const QUERY_PREFIX: &str = "What are all the objects that ";
pub const QUERY_SUFFIX: &str = " in the image?";

/// Attribute-derived cross-check question dispatched to every prompt-capable tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidentialQuery {
    pub text: String,
    pub target_object: String,
    pub source_claim: AttributeClaim,
    pub iteration: u32,
}

impl EvidentialQuery {
    pub fn render(attribute: &str) -> String {
        format!("{QUERY_PREFIX}{}{QUERY_SUFFIX}", attribute.trim())
    }

    /// Returns the attribute slot if `text` matches the query template exactly.
    pub fn attribute_slot(text: &str) -> Option<&str> {
        let slot = text.strip_prefix(QUERY_PREFIX)?.strip_suffix(QUERY_SUFFIX)?;
        let trimmed = slot.trim();
        if trimmed.is_empty() || trimmed.len() != slot.len() || slot.contains('\n') {
            return None;
        }
        Some(slot)
    }

    pub fn matches_template(text: &str) -> bool {
        Self::attribute_slot(text).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    Timeout,
    Connection,
    MalformedReply,
    Status,
    EmptyReply,
    Backend,
}

impl fmt::Display for ToolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolErrorKind::Timeout => "timeout",
            ToolErrorKind::Connection => "connection",
            ToolErrorKind::MalformedReply => "malformed_reply",
            ToolErrorKind::Status => "status",
            ToolErrorKind::EmptyReply => "empty_reply",
            ToolErrorKind::Backend => "backend",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub message: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub tool_id: String,
    pub query_text: String,
    pub raw_text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
}

impl ToolResponse {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerResponseVerdict {
    pub tool_id: String,
    pub query_text: String,
    pub verdict: Verdict,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub queries: Vec<EvidentialQuery>,
    pub responses: Vec<ToolResponse>,
    pub verdicts: Vec<PerResponseVerdict>,
    pub fused: Verdict,
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceStatus {
    ConsistentEarly,
    ConsistentInLoop,
    ExhaustedFallback,
}

impl fmt::Display for TraceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceStatus::ConsistentEarly => "ConsistentEarly",
            TraceStatus::ConsistentInLoop => "ConsistentInLoop",
            TraceStatus::ExhaustedFallback => "ExhaustedFallback",
        })
    }
}

pub const TRACE_VERSION: &str = "trace_v1";

/// Complete audit record of one existence-verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionTrace {
    pub version: String,
    pub sample_id: String,
    pub user_query: String,
    pub target_object: String,
    pub initial_evidence: Vec<ToolResponse>,
    pub initial_verdicts: Vec<PerResponseVerdict>,
    pub iterations: Vec<IterationRecord>,
    #[serde(rename = "final")]
    pub final_verdict: Verdict,
    pub final_binary: Answer,
    pub status: TraceStatus,
    pub config_snapshot: EngineConfig,
    pub rng_seed: Option<u64>,
}

impl SessionTrace {
    /// All verdicts across bootstrap and every iteration, in recorded order.
    pub fn history(&self) -> impl Iterator<Item = &PerResponseVerdict> {
        self.initial_verdicts
            .iter()
            .chain(self.iterations.iter().flat_map(|it| it.verdicts.iter()))
    }

    pub fn response_count(&self) -> usize {
        self.initial_evidence.len() + self.iterations.iter().map(|it| it.responses.len()).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReasonerEndpoint {
    /// Deterministic rule-following reasoner backed by the lexicon.
    #[default]
    Scripted,
    ChatCompletions {
        url: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
}

impl ReasonerEndpoint {
    pub fn describe(&self) -> String {
        match self {
            ReasonerEndpoint::Scripted => "scripted".to_string(),
            ReasonerEndpoint::ChatCompletions { url, .. } => url.clone(),
        }
    }
}

pub const DEFAULT_CAPTION_PROMPT: &str = "Describe this image in detail.";
pub const DEFAULT_ATTRIBUTE_PROMPT: &str =
    "Describe the {object} in the image, including its color, count, and location.";

/// Everything that determines engine behaviour for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Maximum number of evidential-query iterations.
    pub k: u32,
    /// Cap on evidential queries per iteration.
    pub n: u32,
    pub unclear_policy: UnclearPolicy,
    pub tools: Vec<ToolDescriptor>,
    pub reasoner_endpoint: ReasonerEndpoint,
    /// Bootstrap prompt per capability. An empty string means "no prompt"
    /// (full-frame detection); a missing capability is not queried.
    pub initial_query_plan: BTreeMap<Capability, String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub seed: Option<u64>,
    /// Tool whose attribute descriptions seed evidential queries. Defaults
    /// to the first caption tool.
    pub plug_in_tool: Option<String>,
    pub attribute_prompt: String,
    pub fallback_weighting: FallbackWeighting,
    pub rules: RuleSet,
    /// Checksums of templates and lexicon in effect.
    pub fingerprints: BTreeMap<String, String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let mut plan = BTreeMap::new();
        plan.insert(Capability::Caption, DEFAULT_CAPTION_PROMPT.to_string());
        plan.insert(Capability::Detect, String::new());
        EngineConfig {
            k: 3,
            n: 5,
            unclear_policy: UnclearPolicy::MapToNo,
            tools: Vec::new(),
            reasoner_endpoint: ReasonerEndpoint::Scripted,
            initial_query_plan: plan,
            timeout_ms: 30_000,
            retries: 2,
            seed: None,
            plug_in_tool: None,
            attribute_prompt: DEFAULT_ATTRIBUTE_PROMPT.to_string(),
            fallback_weighting: FallbackWeighting::Unweighted,
            rules: RuleSet::default(),
            fingerprints: BTreeMap::new(),
        }
    }
}

impl EngineConfig {
    pub fn tool(&self, id: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.id == id)
    }

    pub fn plug_in(&self) -> Option<&ToolDescriptor> {
        match &self.plug_in_tool {
            Some(id) => self.tool(id),
            None => self.tools.iter().find(|t| t.capability == Capability::Caption),
        }
    }

    pub fn capability_of(&self, tool_id: &str) -> Option<Capability> {
        self.tool(tool_id).map(|t| t.capability)
    }

    pub fn trust_of(&self, tool_id: &str) -> Option<u8> {
        self.tool(tool_id).map(|t| t.trust_rank)
    }

    pub fn attribute_prompt_for(&self, object: &str) -> String {
        self.attribute_prompt.replace("{object}", object)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_parsing_is_strict() {
        assert_eq!(Verdict::parse_answer("Yes").unwrap(), Verdict::Yes);
        assert_eq!(Verdict::parse_answer(" no. ").unwrap(), Verdict::No);
        assert_eq!(Verdict::parse_answer("\"Unclear\"").unwrap(), Verdict::Unclear);
        assert!(Verdict::parse_answer("Maybe").is_err());
        assert!(Verdict::parse_answer("").is_err());
        assert!(Verdict::parse_answer("Yes, definitely").is_err());
    }

    #[test]
    fn claim_line_parsing() {
        let c = AttributeClaim::parse_line("The person is tall&The object is tall").unwrap();
        assert_eq!(c.original, "The person is tall");
        assert_eq!(c.modified, "The object is tall");
        assert_eq!(c.to_line(), "The person is tall&The object is tall");
        assert!(AttributeClaim::parse_line("The person is tall").is_none());
        assert!(AttributeClaim::parse_line("a&b&c").is_none());
        assert!(AttributeClaim::parse_line("The person is tall&The man is tall").is_none());
        assert!(AttributeClaim::parse_line("&the object is tall").is_none());
    }

    #[test]
    fn over_length_claims_are_flagged() {
        let long = "the person is standing on the very long road near a big red house with a garden";
        let c = AttributeClaim {
            original: long.into(),
            modified: long.replace("the person", "the object"),
        };
        assert!(c.is_over_length());
    }

    #[test]
    fn query_template_shape() {
        let q = EvidentialQuery::render("are wearing a brown shirt");
        assert_eq!(q, "What are all the objects that are wearing a brown shirt in the image?");
        assert_eq!(EvidentialQuery::attribute_slot(&q), Some("are wearing a brown shirt"));
        assert!(!EvidentialQuery::matches_template("What objects are wearing a brown shirt?"));
        assert!(!EvidentialQuery::matches_template("What are all the objects that  in the image?"));
    }

    #[test]
    fn unclear_policy_binarizes() {
        assert_eq!(UnclearPolicy::MapToNo.binarize(Verdict::Unclear), Answer::No);
        assert_eq!(UnclearPolicy::MapToYes.binarize(Verdict::Unclear), Answer::Yes);
        assert_eq!(UnclearPolicy::MapToYes.binarize(Verdict::No), Answer::No);
    }
}
