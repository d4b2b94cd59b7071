//! The evidence loop: bootstrap, per-response reasoning, critique, and
//! attribute-guided re-querying, bounded by `k` iterations.
//!
//! [`Engine::step`] runs one phase at a time so callers (and tests) can
//! observe intermediate states. [`Engine::run_existence_query`] drives the
//! state machine to completion. [`replay`] re-derives every decision of a
//! recorded trace.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{ConfigError, EngineError, TraceError};
use crate::exec::Execution;
use crate::fusion::{fallback_from_history, fuse_explained, is_consistent, FusionOutcome};
use crate::lexicon::Lexicon;
use crate::reasoner::{
    self, extract_attributes, extract_candidate_objects, generate_evidential_queries, per_response_reason,
    CandidateSource, Reasoner,
};
use crate::text::{article, sentence_spans};
use crate::tools::{fan_out, invoke_backend, Budget, ToolRegistry, ToolRequest};
use crate::trace::{serialize_trace, strip_latency, validate};
use crate::types::{
    Answer, Capability, EngineConfig, EvidentialQuery, IterationRecord, PerResponseVerdict, ReasonerEndpoint,
    SessionTrace, ToolDescriptor, ToolResponse, TraceStatus, Verdict, DEFAULT_CAPTION_PROMPT, TRACE_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Reasoned,
    Critiqued,
    Acting,
    Final,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "Init",
            Phase::Reasoned => "Reasoned",
            Phase::Critiqued => "Critiqued",
            Phase::Acting => "Acting",
            Phase::Final => "Final",
        }
    }
}

/// One run in progress. `trace` holds provisional final fields until the
/// phase reaches `Final`.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub phase: Phase,
    pub image_ref: String,
    pub trace: SessionTrace,
    pub pending_queries: Vec<EvidentialQuery>,
    pub pending_responses: Vec<ToolResponse>,
    /// Fusion result of the most recent critique.
    pub last_fusion: Option<FusionOutcome>,
    pub last_consistent: bool,
    pub acting_count: u32,
    used_claims: BTreeSet<String>,
}

impl LoopState {
    /// Verdicts of the evidence pool currently under critique.
    pub fn current_pool(&self) -> &[PerResponseVerdict] {
        match self.trace.iterations.last() {
            Some(it) => &it.verdicts,
            None => &self.trace.initial_verdicts,
        }
    }
}

/// Result of the captioning workflow.
#[derive(Debug, Clone)]
pub struct CaptionOutcome {
    pub captions: Vec<String>,
    pub candidates: Vec<String>,
    pub verified: Vec<String>,
    pub refuted: Vec<String>,
    /// Plug-in caption with sentences about refuted objects removed.
    pub caption: String,
    pub traces: Vec<SessionTrace>,
}

impl CaptionOutcome {
    pub fn grounded_text(&self) -> String {
        if self.verified.is_empty() {
            return self.caption.clone();
        }
        format!("{}\nVerified objects: {}", self.caption, self.verified.join(", "))
    }
}

pub struct Engine {
    config: EngineConfig,
    registry: ToolRegistry,
    reasoner: Arc<dyn Reasoner>,
    lexicon: Arc<Lexicon>,
    exec: Execution,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("registry", &self.registry)
            .field("reasoner", &self.reasoner.endpoint())
            .finish_non_exhaustive()
    }
}

fn invalid(msg: impl Into<String>) -> EngineError {
    EngineError::Config(ConfigError::Invalid(msg.into()))
}

impl Engine {
    pub fn new(
        mut config: EngineConfig,
        registry: ToolRegistry,
        reasoner: Arc<dyn Reasoner>,
        lexicon: Arc<Lexicon>,
    ) -> Result<Self, EngineError> {
        if config.k < 1 {
            return Err(invalid("k must be at least 1"));
        }
        if config.n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        if config.tools.is_empty() {
            return Err(invalid("no tools configured"));
        }
        let mut ids = BTreeSet::new();
        for t in &config.tools {
            if !ids.insert(t.id.as_str()) {
                return Err(EngineError::Registry(crate::error::RegistryError::DuplicateTool(t.id.clone())));
            }
            registry.backend(&t.id)?;
        }
        match config.plug_in() {
            None => return Err(invalid("no caption-capable tool to describe object attributes")),
            Some(p) if !p.capability.accepts_prompt() => {
                return Err(invalid(format!("plug-in tool `{}` cannot take a prompt", p.id)))
            }
            Some(_) => {}
        }
        config
            .rules
            .validate()
            .map_err(|e| invalid(format!("rule set `{}`: {e}", config.rules.name)))?;
        config.fingerprints.extend(reasoner::templates::checksums());
        config.fingerprints.insert("lexicon".into(), lexicon.checksum().to_string());
        Ok(Engine {
            config,
            registry,
            reasoner,
            lexicon,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn lexicon(&self) -> &Arc<Lexicon> {
        &self.lexicon
    }

    pub fn reasoner(&self) -> &dyn Reasoner {
        self.reasoner.as_ref()
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    fn budget(&self) -> Budget {
        Budget {
            timeout_ms: self.config.timeout_ms,
            retries: self.config.retries,
        }
    }

    fn call(&self, tool: &ToolDescriptor, request: &ToolRequest) -> ToolResponse {
        let backend = self.registry.backend(&tool.id).expect("checked in Engine::new");
        invoke_backend(backend.as_ref(), &tool.id, request, self.budget())
    }

    /// Bootstrap request for `tool`, or `None` if the plan skips its capability.
    fn bootstrap_request(&self, tool: &ToolDescriptor, image_ref: &str, question: &str) -> Option<ToolRequest> {
        let prompt = self.config.initial_query_plan.get(&tool.capability)?;
        let prompt = prompt.replace("{question}", question);
        match tool.capability {
            Capability::Detect => Some(ToolRequest::detect(image_ref)),
            Capability::Caption if prompt.is_empty() => Some(ToolRequest::caption(image_ref, DEFAULT_CAPTION_PROMPT)),
            cap => ToolRequest::for_question(cap, image_ref, &prompt),
        }
    }

    fn reason_all(&self, responses: &[ToolResponse], question: &str) -> Result<Vec<PerResponseVerdict>, EngineError> {
        let ok: Vec<&ToolResponse> = responses.iter().filter(|r| r.is_ok()).collect();
        let results = self.exec.map(&ok, |r| {
            per_response_reason(self.reasoner.as_ref(), &r.raw_text, question, &r.tool_id).map(|mut v| {
                v.query_text = r.query_text.clone();
                v
            })
        });
        let mut out = Vec::with_capacity(results.len());
        for r in results {
            out.push(r?);
        }
        Ok(out)
    }

    /// Fresh state for one question. Fails if no target object can be found.
    pub fn start(&self, sample_id: &str, image_ref: &str, question: &str) -> Result<LoopState, EngineError> {
        let target = reasoner::extract_target_object(question, Some(self.reasoner.as_ref()))?;
        Ok(LoopState {
            phase: Phase::Init,
            image_ref: image_ref.to_string(),
            trace: SessionTrace {
                version: TRACE_VERSION.to_string(),
                sample_id: sample_id.to_string(),
                user_query: question.to_string(),
                target_object: target,
                initial_evidence: Vec::new(),
                initial_verdicts: Vec::new(),
                iterations: Vec::new(),
                final_verdict: Verdict::Unclear,
                final_binary: self.config.unclear_policy.binarize(Verdict::Unclear),
                status: TraceStatus::ConsistentEarly,
                config_snapshot: self.config.clone(),
                rng_seed: self.config.seed,
            },
            pending_queries: Vec::new(),
            pending_responses: Vec::new(),
            last_fusion: None,
            last_consistent: false,
            acting_count: 0,
            used_claims: BTreeSet::new(),
        })
    }

    /// Run exactly one phase transition.
    pub fn step(&self, mut state: LoopState) -> Result<LoopState, EngineError> {
        match state.phase {
            Phase::Init => {
                let question = state.trace.user_query.clone();
                let plan: Vec<(&ToolDescriptor, ToolRequest)> = self
                    .config
                    .tools
                    .iter()
                    .filter_map(|t| self.bootstrap_request(t, &state.image_ref, &question).map(|r| (t, r)))
                    .collect();
                let responses = self.exec.map(&plan, |(tool, req)| self.call(tool, req));
                state.trace.initial_verdicts = self.reason_all(&responses, &question)?;
                state.trace.initial_evidence = responses;
                state.phase = Phase::Reasoned;
            }
            Phase::Reasoned => {
                let pool = state.current_pool().to_vec();
                let (fusion, consistent) = critique(&pool, &self.config)?;
                if let Some(it) = state.trace.iterations.last_mut() {
                    it.fused = fusion.verdict;
                    it.consistent = consistent;
                }
                state.last_fusion = Some(fusion);
                state.last_consistent = consistent;
                state.phase = Phase::Critiqued;
            }
            Phase::Critiqued => {
                let fused = state.last_fusion.as_ref().map(|f| f.verdict).unwrap_or(Verdict::Unclear);
                let done = state.trace.iterations.len() as u32;
                if state.last_consistent {
                    let status = if done == 0 {
                        TraceStatus::ConsistentEarly
                    } else {
                        TraceStatus::ConsistentInLoop
                    };
                    self.finish(&mut state, fused, status);
                } else if done >= self.config.k {
                    let verdict = fallback_from_history(&state.trace);
                    self.finish(&mut state, verdict, TraceStatus::ExhaustedFallback);
                } else {
                    self.act(&mut state)?;
                }
            }
            Phase::Acting => {
                let question = state.trace.user_query.clone();
                let responses = std::mem::take(&mut state.pending_responses);
                let verdicts = self.reason_all(&responses, &question)?;
                let it = state.trace.iterations.last_mut().ok_or(EngineError::InvalidPhase("Acting"))?;
                it.responses = responses;
                it.verdicts = verdicts;
                state.pending_queries.clear();
                state.phase = Phase::Reasoned;
            }
            Phase::Final => return Err(EngineError::InvalidPhase("Final")),
        }
        Ok(state)
    }

    fn finish(&self, state: &mut LoopState, verdict: Verdict, status: TraceStatus) {
        state.trace.final_verdict = verdict;
        state.trace.final_binary = self.config.unclear_policy.binarize(verdict);
        state.trace.status = status;
        state.phase = Phase::Final;
    }

    /// Describe the target with the plug-in tool, turn new attribute claims
    /// into evidential queries and send them to every prompt-capable tool.
    fn act(&self, state: &mut LoopState) -> Result<(), EngineError> {
        let index = state.trace.iterations.len() as u32 + 1;
        let target = state.trace.target_object.clone();
        let plug_in = self.config.plug_in().expect("checked in Engine::new").clone();
        let request = ToolRequest::for_question(
            plug_in.capability,
            &state.image_ref,
            &self.config.attribute_prompt_for(&target),
        )
        .expect("plug-in takes prompts");
        let description = self.call(&plug_in, &request);
        let claims = if description.is_ok() {
            extract_attributes(self.reasoner.as_ref(), &description.raw_text, &target)?
        } else {
            Vec::new()
        };
        // queries already sent in an earlier iteration would return the same evidence
        let fresh: Vec<_> = claims
            .into_iter()
            .filter(|c| !state.used_claims.contains(&c.modified.to_lowercase()))
            .collect();
        let n = self.config.n as usize;
        for c in fresh.iter().take(n) {
            state.used_claims.insert(c.modified.to_lowercase());
        }
        let queries = generate_evidential_queries(self.reasoner.as_ref(), &fresh, n, &target, index)?;
        let responses = fan_out(
            &self.registry,
            &self.config.tools,
            &queries,
            &state.image_ref,
            self.budget(),
            self.exec,
        );
        state.trace.iterations.push(IterationRecord {
            index,
            queries: queries.clone(),
            responses: Vec::new(),
            verdicts: Vec::new(),
            fused: Verdict::Unclear,
            consistent: false,
        });
        state.pending_queries = queries;
        state.pending_responses = responses;
        state.acting_count += 1;
        state.phase = Phase::Acting;
        Ok(())
    }

    /// Drive one question to a final answer.
    pub fn run_existence_query(
        &self,
        sample_id: &str,
        image_ref: &str,
        question: &str,
    ) -> Result<(Answer, SessionTrace), EngineError> {
        let mut state = self.start(sample_id, image_ref, question)?;
        while state.phase != Phase::Final {
            state = self.step(state)?;
        }
        Ok((state.trace.final_binary, state.trace))
    }

    /// Answer from one tool alone: its bootstrap response (or the question
    /// itself for tools the plan skips), reasoned and binarized.
    pub fn single_tool_answer(&self, tool_id: &str, image_ref: &str, question: &str) -> Result<Answer, EngineError> {
        let tool = self
            .config
            .tool(tool_id)
            .ok_or_else(|| crate::error::RegistryError::UnknownTool(tool_id.to_string()))?;
        let request = self
            .bootstrap_request(tool, image_ref, question)
            .or_else(|| ToolRequest::for_question(tool.capability, image_ref, question))
            .unwrap_or_else(|| ToolRequest::detect(image_ref));
        let response = self.call(tool, &request);
        let verdict = if response.is_ok() {
            per_response_reason(self.reasoner.as_ref(), &response.raw_text, question, tool_id)?.verdict
        } else {
            Verdict::Unclear
        };
        Ok(self.config.unclear_policy.binarize(verdict))
    }

    /// Caption an image from three caption tools, verify every object they
    /// agree on, and drop plug-in caption sentences about refuted objects.
    pub fn run_caption(&self, image_ref: &str) -> Result<CaptionOutcome, EngineError> {
        let plug_in = self.config.plug_in().expect("checked in Engine::new");
        let mut captioners: Vec<&ToolDescriptor> = vec![plug_in];
        captioners.extend(
            self.config
                .tools
                .iter()
                .filter(|t| t.capability == Capability::Caption && t.id != plug_in.id),
        );
        if plug_in.capability != Capability::Caption || captioners.len() < 3 {
            return Err(invalid(format!(
                "captioning needs 3 caption tools including the plug-in, found {}",
                captioners.iter().filter(|t| t.capability == Capability::Caption).count()
            )));
        }
        captioners.truncate(3);
        let prompt = self
            .config
            .initial_query_plan
            .get(&Capability::Caption)
            .filter(|p| !p.is_empty() && !p.contains("{question}"))
            .cloned()
            .unwrap_or_else(|| DEFAULT_CAPTION_PROMPT.to_string());
        let request = ToolRequest::caption(image_ref, prompt);
        let captions: Vec<String> = self
            .exec
            .map(&captioners, |t| self.call(t, &request))
            .into_iter()
            .map(|r| r.raw_text)
            .collect();
        let source = match self.config.reasoner_endpoint {
            ReasonerEndpoint::Scripted => CandidateSource::Lexicon,
            _ => CandidateSource::Reasoner(self.reasoner.as_ref()),
        };
        let candidates = extract_candidate_objects(&captions, &self.lexicon, source)?;
        let runs = self.exec.map(&candidates, |object| {
            let question = format!("Is there {} {object} in the image?", article(object));
            self.run_existence_query(&format!("{image_ref}#{object}"), image_ref, &question)
        });
        let mut traces = Vec::with_capacity(runs.len());
        for r in runs {
            traces.push(r?.1);
        }
        let (mut verified, mut refuted) = (Vec::new(), Vec::new());
        for (object, trace) in candidates.iter().zip(&traces) {
            match trace.final_binary {
                Answer::Yes => verified.push(object.clone()),
                Answer::No => refuted.push(object.clone()),
            }
        }
        let caption = if refuted.is_empty() {
            captions[0].clone()
        } else {
            sentence_spans(&captions[0])
                .into_iter()
                .filter(|s| !refuted.iter().any(|o| self.lexicon.mentions_object(s, o)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        Ok(CaptionOutcome {
            captions,
            candidates,
            verified,
            refuted,
            caption,
            traces,
        })
    }
}

/// Fusion and agreement for one evidence pool. A pool counts as consistent
/// only when it is unanimous, decisive, and the rules fuse it to that value.
pub fn critique(pool: &[PerResponseVerdict], config: &EngineConfig) -> Result<(FusionOutcome, bool), EngineError> {
    if pool.is_empty() {
        let outcome = FusionOutcome {
            verdict: Verdict::Unclear,
            slots: Default::default(),
            rule: None,
        };
        return Ok((outcome, false));
    }
    let fusion = fuse_explained(pool, &config.tools, &config.rules)?;
    let consistent = is_consistent(pool) && fusion.verdict == pool[0].verdict;
    Ok((fusion, consistent))
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    /// Human-readable audit, one line per decision.
    pub audit: Vec<String>,
    pub recorded_final: Verdict,
    pub rederived_final: Verdict,
    pub recorded_status: TraceStatus,
    pub rederived_status: TraceStatus,
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn describe_pool(pool: &[PerResponseVerdict]) -> String {
    pool.iter()
        .map(|v| format!("{}={}", v.tool_id, v.verdict))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Re-derive every decision in `trace` from its recorded evidence.
///
/// With a `reasoner`, verdicts are recomputed from recorded responses too;
/// without one, recorded verdicts are trusted and only the decision logic is
/// re-run. The re-derived trace must serialize to the same bytes as the
/// recorded one, latency aside.
pub fn replay(trace: &SessionTrace, reasoner: Option<&dyn Reasoner>) -> Result<ReplayReport, TraceError> {
    validate(trace)?;
    let cfg = &trace.config_snapshot;
    let mut audit = Vec::new();
    let mut mismatches = Vec::new();
    let mut rebuilt = trace.clone();

    let rederive = |stage: &str,
                        responses: &[ToolResponse],
                        recorded: &[PerResponseVerdict],
                        mismatches: &mut Vec<String>|
     -> Vec<PerResponseVerdict> {
        let ok = responses.iter().filter(|r| r.is_ok()).count();
        if ok != recorded.len() {
            mismatches.push(format!(
                "{stage}: {ok} usable response(s) but {} verdict(s) recorded",
                recorded.len()
            ));
        }
        let Some(r) = reasoner else {
            return recorded.to_vec();
        };
        let mut out = Vec::new();
        for resp in responses.iter().filter(|r| r.is_ok()) {
            match per_response_reason(r, &resp.raw_text, &trace.user_query, &resp.tool_id) {
                Ok(mut v) => {
                    v.query_text = resp.query_text.clone();
                    out.push(v);
                }
                Err(e) => mismatches.push(format!("{stage}: cannot re-reason {}: {e}", resp.tool_id)),
            }
        }
        out
    };

    audit.push(format!(
        "question {:?} -> target object {:?}",
        trace.user_query, trace.target_object
    ));
    for r in &trace.initial_evidence {
        match &r.error {
            None => audit.push(format!("observe  {} <- {:?}", r.tool_id, r.raw_text)),
            Some(e) => audit.push(format!("observe  {} failed: {} ({})", r.tool_id, e.kind, e.message)),
        }
    }
    rebuilt.initial_verdicts = rederive("initial_evidence", &trace.initial_evidence, &trace.initial_verdicts, &mut mismatches);
    for v in &rebuilt.initial_verdicts {
        audit.push(format!("reason   {} => {} ({})", v.tool_id, v.verdict, v.reasoning));
    }

    let mut status = None;
    let mut final_verdict = Verdict::Unclear;
    let mut pool = rebuilt.initial_verdicts.clone();
    let mut done = 0usize;
    loop {
        let (fusion, consistent) = match critique(&pool, cfg) {
            Ok(x) => x,
            Err(e) => {
                mismatches.push(format!("fusion failed: {e}"));
                break;
            }
        };
        let rule = fusion
            .rule
            .map(|i| format!("rule #{}", i + 1))
            .unwrap_or_else(|| cfg.rules.name.clone());
        audit.push(format!(
            "critique [{}] fused {} via {rule}, consistent={consistent}",
            describe_pool(&pool),
            fusion.verdict
        ));
        if done > 0 {
            let it = &mut rebuilt.iterations[done - 1];
            it.fused = fusion.verdict;
            it.consistent = consistent;
        }
        if consistent {
            status = Some(if done == 0 {
                TraceStatus::ConsistentEarly
            } else {
                TraceStatus::ConsistentInLoop
            });
            final_verdict = fusion.verdict;
            break;
        }
        if done as u32 >= cfg.k {
            rebuilt.final_verdict = Verdict::Unclear;
            final_verdict = fallback_from_history(&rebuilt);
            audit.push(format!("fallback majority over history => {final_verdict}"));
            status = Some(TraceStatus::ExhaustedFallback);
            break;
        }
        let Some(recorded) = trace.iterations.get(done) else {
            mismatches.push(format!(
                "trace stops after {done} iteration(s) although the evidence pool was inconsistent"
            ));
            break;
        };
        done += 1;
        audit.push(format!("act      iteration {done}: {} evidential quer(ies)", recorded.queries.len()));
        for q in &recorded.queries {
            audit.push(format!("act      {:?} (from {:?})", q.text, q.source_claim.original));
        }
        let stage = format!("iteration {done}");
        let verdicts = rederive(&stage, &recorded.responses, &recorded.verdicts, &mut mismatches);
        for v in &verdicts {
            audit.push(format!("reason   {} on {:?} => {}", v.tool_id, v.query_text, v.verdict));
        }
        rebuilt.iterations[done - 1].verdicts = verdicts.clone();
        pool = verdicts;
    }
    if done < trace.iterations.len() {
        mismatches.push(format!(
            "trace records {} iteration(s) but the loop ends after {done}",
            trace.iterations.len()
        ));
        rebuilt.iterations.truncate(done);
    }
    let rederived_status = status.unwrap_or(trace.status);
    rebuilt.final_verdict = final_verdict;
    rebuilt.final_binary = cfg.unclear_policy.binarize(final_verdict);
    rebuilt.status = rederived_status;
    audit.push(format!(
        "final    {} -> {} ({})",
        final_verdict, rebuilt.final_binary, rederived_status
    ));
    if final_verdict != trace.final_verdict {
        mismatches.push(format!("final: recorded {}, re-derived {final_verdict}", trace.final_verdict));
    }
    if rederived_status != trace.status {
        mismatches.push(format!("status: recorded {}, re-derived {rederived_status}", trace.status));
    }
    if rebuilt.final_binary != trace.final_binary {
        mismatches.push(format!(
            "final_binary: recorded {}, re-derived {}",
            trace.final_binary, rebuilt.final_binary
        ));
    }
    let a = serialize_trace(&strip_latency(trace));
    let b = serialize_trace(&strip_latency(&rebuilt));
    if a != b && mismatches.is_empty() {
        mismatches.push(describe_first_difference(trace, &rebuilt));
    }
    Ok(ReplayReport {
        audit,
        recorded_final: trace.final_verdict,
        rederived_final: final_verdict,
        recorded_status: trace.status,
        rederived_status,
        mismatches,
    })
}

fn describe_first_difference(a: &SessionTrace, b: &SessionTrace) -> String {
    if a.initial_verdicts != b.initial_verdicts {
        return "initial_verdicts differ from re-derived verdicts".into();
    }
    for (x, y) in a.iterations.iter().zip(&b.iterations) {
        if x.verdicts != y.verdicts {
            return format!("iteration {}: verdicts differ from re-derived verdicts", x.index);
        }
        if x.fused != y.fused || x.consistent != y.consistent {
            return format!(
                "iteration {}: recorded fused={} consistent={}, re-derived fused={} consistent={}",
                x.index, x.fused, x.consistent, y.fused, y.consistent
            );
        }
    }
    "re-serialized trace differs".into()
}
