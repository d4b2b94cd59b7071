//! Uniform invocation layer over vision tools.
//!
//! Every backend (HTTP service, chat-completions endpoint, in-process
//! fixture) implements [`ToolBackend`]. [`invoke`] adds retries, timing and
//! error capture; failures come back as error-bearing [`ToolResponse`]s and
//! never escape as `Err` once the tool id has resolved.

mod error_model;
mod http;
mod scripted;
pub mod wire;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

pub use error_model::{CorruptionMode, ErrorModelTool, ErrorModelToolSpec};
pub use http::HttpTool;
pub(crate) use http::chat_content;
pub use scripted::{normalize_prompt, FaultyTool, FixtureEntry, ScriptedTool, ScriptedToolSpec};

use crate::error::{RegistryError, RequestError};
use crate::exec::Execution;
use crate::types::{Capability, EvidentialQuery, ToolDescriptor, ToolError, ToolErrorKind, ToolResponse};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRequest {
    pub image_ref: String,
    pub task: Capability,
    pub prompt: Option<String>,
}

impl ToolRequest {
    pub fn new(image_ref: impl Into<String>, task: Capability, prompt: Option<String>) -> Result<Self, RequestError> {
        let prompt = prompt.filter(|p| !p.is_empty());
        match (task, &prompt) {
            (Capability::Vqa, None) => return Err(RequestError::MissingPrompt),
            (Capability::Detect, Some(_)) => return Err(RequestError::UnexpectedPrompt),
            _ => {}
        }
        Ok(ToolRequest {
            image_ref: image_ref.into(),
            task,
            prompt,
        })
    }

    pub fn caption(image_ref: impl Into<String>, prompt: impl Into<String>) -> Self {
        ToolRequest::new(image_ref, Capability::Caption, Some(prompt.into())).expect("caption request")
    }

    pub fn detect(image_ref: impl Into<String>) -> Self {
        ToolRequest::new(image_ref, Capability::Detect, None).expect("detect request")
    }

    pub fn vqa(image_ref: impl Into<String>, prompt: impl Into<String>) -> Result<Self, RequestError> {
        ToolRequest::new(image_ref, Capability::Vqa, Some(prompt.into()))
    }

    /// Text recorded as `query_text` in responses; empty for detection.
    pub fn query_text(&self) -> &str {
        self.prompt.as_deref().unwrap_or("")
    }

    /// Request a tool of `capability` gets for a free-text question, if it takes one.
    pub fn for_question(capability: Capability, image_ref: &str, question: &str) -> Option<ToolRequest> {
        match capability {
            Capability::Detect => None,
            Capability::Caption => Some(ToolRequest::caption(image_ref, question)),
            Capability::Vqa => ToolRequest::vqa(image_ref, question).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolFailure {
    pub kind: ToolErrorKind,
    pub message: String,
}

impl ToolFailure {
    pub fn new(kind: ToolErrorKind, message: impl Into<String>) -> Self {
        ToolFailure {
            kind,
            message: message.into(),
        }
    }
}

/// One physical or simulated vision backend.
///
/// Implementations must be stateless per request and honour `timeout`.
pub trait ToolBackend: Send + Sync {
    fn call(&self, request: &ToolRequest, timeout: Duration) -> Result<String, ToolFailure>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            timeout_ms: 30_000,
            retries: 2,
        }
    }
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    descriptors: Vec<ToolDescriptor>,
    backends: HashMap<String, Arc<dyn ToolBackend>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("descriptors", &self.descriptors)
            .finish_non_exhaustive()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: ToolDescriptor, backend: Arc<dyn ToolBackend>) -> Result<(), RegistryError> {
        if self.backends.contains_key(&descriptor.id) {
            return Err(RegistryError::DuplicateTool(descriptor.id));
        }
        self.backends.insert(descriptor.id.clone(), backend);
        self.descriptors.push(descriptor);
        Ok(())
    }

    pub fn with(mut self, descriptor: ToolDescriptor, backend: Arc<dyn ToolBackend>) -> Result<Self, RegistryError> {
        self.register(descriptor, backend)?;
        Ok(self)
    }

    pub fn descriptors(&self) -> &[ToolDescriptor] {
        &self.descriptors
    }

    pub fn descriptor(&self, id: &str) -> Option<&ToolDescriptor> {
        self.descriptors.iter().find(|d| d.id == id)
    }

    pub fn backend(&self, id: &str) -> Result<&Arc<dyn ToolBackend>, RegistryError> {
        self.backends
            .get(id)
            .ok_or_else(|| RegistryError::UnknownTool(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Replace one backend, keeping its descriptor.
    pub fn rebind(&mut self, id: &str, backend: Arc<dyn ToolBackend>) -> Result<(), RegistryError> {
        match self.backends.get_mut(id) {
            Some(slot) => {
                *slot = backend;
                Ok(())
            }
            None => Err(RegistryError::UnknownTool(id.to_string())),
        }
    }
}

/// Call one tool with retries. Registry errors surface before any backend
/// activity; everything after that is captured in the response.
pub fn invoke(
    registry: &ToolRegistry,
    tool_id: &str,
    request: &ToolRequest,
    budget: Budget,
) -> Result<ToolResponse, RegistryError> {
    let backend = registry.backend(tool_id)?;
    Ok(invoke_backend(backend.as_ref(), tool_id, request, budget))
}

pub fn invoke_backend(backend: &dyn ToolBackend, tool_id: &str, request: &ToolRequest, budget: Budget) -> ToolResponse {
    let timeout = Duration::from_millis(budget.timeout_ms.max(1));
    let started = Instant::now();
    let mut attempts = 0;
    let mut last = ToolFailure::new(ToolErrorKind::Backend, "not attempted");
    while attempts <= budget.retries {
        attempts += 1;
        let call_started = Instant::now();
        let outcome = backend.call(request, timeout);
        let late = call_started.elapsed() > timeout;
        match outcome {
            Ok(_) if late => {
                last = ToolFailure::new(ToolErrorKind::Timeout, format!("reply after {timeout:?}"));
            }
            Ok(text) if text.trim().is_empty() => {
                last = ToolFailure::new(ToolErrorKind::EmptyReply, "backend returned empty text");
            }
            Ok(text) => {
                return ToolResponse {
                    tool_id: tool_id.to_string(),
                    query_text: request.query_text().to_string(),
                    raw_text: text.trim().to_string(),
                    latency_ms: started.elapsed().as_millis() as u64,
                    error: None,
                };
            }
            Err(failure) => last = failure,
        }
    }
    log::debug!("tool {tool_id} failed after {attempts} attempt(s): {}", last.message);
    ToolResponse {
        tool_id: tool_id.to_string(),
        query_text: request.query_text().to_string(),
        raw_text: String::new(),
        latency_ms: started.elapsed().as_millis() as u64,
        error: Some(ToolError {
            kind: last.kind,
            message: last.message,
            attempts,
        }),
    }
}

/// Send every query to every prompt-capable tool. Detectors take no
/// prompt and are skipped. Output is sorted by `(tool_id, query_text)`, so it
/// does not depend on input order or completion order.
pub fn fan_out(
    registry: &ToolRegistry,
    tools: &[ToolDescriptor],
    queries: &[EvidentialQuery],
    image_ref: &str,
    budget: Budget,
    exec: Execution,
) -> Vec<ToolResponse> {
    let mut pairs: Vec<(&ToolDescriptor, &str)> = Vec::new();
    for tool in tools.iter().filter(|t| t.capability.accepts_prompt()) {
        for q in queries {
            if !pairs.iter().any(|(t, text)| t.id == tool.id && *text == q.text) {
                pairs.push((tool, q.text.as_str()));
            }
        }
    }
    let mut out = exec.map(&pairs, |(tool, text)| {
        let request = ToolRequest::for_question(tool.capability, image_ref, text).expect("prompt-capable tool");
        match registry.backend(&tool.id) {
            Ok(backend) => invoke_backend(backend.as_ref(), &tool.id, &request, budget),
            Err(e) => ToolResponse {
                tool_id: tool.id.clone(),
                query_text: text.to_string(),
                raw_text: String::new(),
                latency_ms: 0,
                error: Some(ToolError {
                    kind: ToolErrorKind::Backend,
                    message: e.to_string(),
                    attempts: 0,
                }),
            },
        }
    });
    out.sort_by(|a, b| (&a.tool_id, &a.query_text).cmp(&(&b.tool_id, &b.query_text)));
    out
}

/// Detector output in the prose form the reasoner consumes.
pub fn format_detections(detections: &[(String, u32)]) -> String {
    if detections.is_empty() {
        return "no objects detected".to_string();
    }
    let items: Vec<String> = detections.iter().map(|(label, n)| format!("{label} ({n})")).collect();
    format!("detected: {}", items.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AttributeClaim, Endpoint};

    fn desc(id: &str, cap: Capability) -> ToolDescriptor {
        ToolDescriptor {
            id: id.into(),
            capability: cap,
            trust_rank: 1,
            endpoint: Endpoint::Scripted { source: "test".into() },
            display_name: id.into(),
        }
    }

    fn query(text: &str) -> EvidentialQuery {
        EvidentialQuery {
            text: EvidentialQuery::render(text),
            target_object: "person".into(),
            source_claim: AttributeClaim {
                original: "x".into(),
                modified: "the object x".into(),
            },
            iteration: 1,
        }
    }

    fn scripted(id: &str, cap: Capability, default: &str) -> Arc<dyn ToolBackend> {
        Arc::new(ScriptedTool::new(ScriptedToolSpec::new(id, cap, default)))
    }

    #[test]
    fn request_invariants() {
        assert_eq!(ToolRequest::new("i", Capability::Vqa, None), Err(RequestError::MissingPrompt));
        assert_eq!(
            ToolRequest::new("i", Capability::Detect, Some("p".into())),
            Err(RequestError::UnexpectedPrompt)
        );
        assert!(ToolRequest::new("i", Capability::Caption, None).is_ok());
        assert_eq!(ToolRequest::detect("i").query_text(), "");
    }

    #[test]
    fn scripted_detector_fixture() {
        let mut spec = ScriptedToolSpec::new("det", Capability::Detect, "no objects detected");
        spec.insert("img_001", "", "no person is detected");
        let reg = ToolRegistry::new()
            .with(desc("det", Capability::Detect), Arc::new(ScriptedTool::new(spec)))
            .unwrap();
        let r = invoke(&reg, "det", &ToolRequest::detect("img_001"), Budget::default()).unwrap();
        assert_eq!(r.raw_text, "no person is detected");
        assert!(r.error.is_none());
    }

    #[test]
    fn unregistered_tool_is_registry_error() {
        let reg = ToolRegistry::new();
        let err = invoke(&reg, "ghost", &ToolRequest::detect("i"), Budget::default()).unwrap_err();
        assert_eq!(err, RegistryError::UnknownTool("ghost".into()));
    }

    #[test]
    fn retries_are_counted() {
        let reg = ToolRegistry::new()
            .with(
                desc("slow", Capability::Caption),
                Arc::new(FaultyTool::failing(ToolErrorKind::Timeout)),
            )
            .unwrap();
        let budget = Budget {
            timeout_ms: 10,
            retries: 2,
        };
        let r = invoke(&reg, "slow", &ToolRequest::caption("i", "p"), budget).unwrap();
        let err = r.error.unwrap();
        assert_eq!(err.kind, ToolErrorKind::Timeout);
        assert_eq!(err.attempts, 3);
        assert!(r.raw_text.is_empty());
    }

    #[test]
    fn empty_reply_is_an_error() {
        let reg = ToolRegistry::new()
            .with(desc("e", Capability::Caption), scripted("e", Capability::Caption, "   "))
            .unwrap();
        let budget = Budget {
            timeout_ms: 100,
            retries: 0,
        };
        let r = invoke(&reg, "e", &ToolRequest::caption("i", "p"), budget).unwrap();
        assert_eq!(r.error.unwrap().kind, ToolErrorKind::EmptyReply);
    }

    fn three_tools(failing: bool) -> (ToolRegistry, Vec<ToolDescriptor>) {
        let descs = vec![
            desc("a", Capability::Caption),
            desc("b", Capability::Vqa),
            desc("c", Capability::Vqa),
        ];
        let mut reg = ToolRegistry::new();
        reg.register(descs[0].clone(), scripted("a", Capability::Caption, "a says")).unwrap();
        reg.register(descs[1].clone(), scripted("b", Capability::Vqa, "b says")).unwrap();
        let c: Arc<dyn ToolBackend> = if failing {
            Arc::new(FaultyTool::failing(ToolErrorKind::Connection))
        } else {
            scripted("c", Capability::Vqa, "c says")
        };
        reg.register(descs[2].clone(), c).unwrap();
        (reg, descs)
    }

    #[test]
    fn fan_out_cardinality() {
        let (reg, descs) = three_tools(false);
        let qs = [query("are red"), query("are tall")];
        let out = fan_out(&reg, &descs, &qs, "img", Budget::default(), Execution::Parallel);
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|r| r.is_ok()));
        assert!(fan_out(&reg, &descs, &[], "img", Budget::default(), Execution::Parallel).is_empty());
    }

    #[test]
    fn fan_out_keeps_errors_as_data() {
        let (reg, descs) = three_tools(true);
        let qs = [query("are red"), query("are tall")];
        let budget = Budget {
            timeout_ms: 50,
            retries: 1,
        };
        let out = fan_out(&reg, &descs, &qs, "img", budget, Execution::Sequential);
        assert_eq!(out.len(), 6);
        assert_eq!(out.iter().filter(|r| r.error.is_some()).count(), 2);
        assert!(out.iter().filter(|r| r.error.is_some()).all(|r| r.tool_id == "c"));
    }

    #[test]
    fn fan_out_skips_detectors() {
        let descs = vec![desc("d", Capability::Detect), desc("v", Capability::Vqa)];
        let reg = ToolRegistry::new()
            .with(descs[0].clone(), scripted("d", Capability::Detect, "detected: dog (1)"))
            .unwrap()
            .with(descs[1].clone(), scripted("v", Capability::Vqa, "v"))
            .unwrap();
        let out = fan_out(&reg, &descs, &[query("are red")], "img", Budget::default(), Execution::Parallel);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tool_id, "v");
    }

    #[test]
    fn detections_render_as_prose() {
        assert_eq!(
            format_detections(&[("person".into(), 2), ("frisbee".into(), 1)]),
            "detected: person (2), frisbee (1)"
        );
        assert_eq!(format_detections(&[]), "no objects detected");
    }
}
