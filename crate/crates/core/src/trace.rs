//! Line-delimited trace records: one JSON object per run, `trace_v1` first.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use crate::error::TraceError;
use crate::types::{
    EvidentialQuery, PerResponseVerdict, SessionTrace, ToolResponse, TraceStatus, TRACE_VERSION,
};

/// Canonical single-line record. Field order follows the struct declaration
/// and maps are ordered, so equal traces give equal bytes.
pub fn serialize_trace(trace: &SessionTrace) -> String {
    serde_json::to_string(trace).expect("trace serialization is infallible")
}

pub fn parse_trace(record: &str) -> Result<SessionTrace, TraceError> {
    let record = record.trim();
    if record.is_empty() {
        return Err(TraceError::Empty);
    }
    let trace: SessionTrace =
        serde_json::from_str(record).map_err(|e| TraceError::Parse(e.to_string()))?;
    validate(&trace)?;
    Ok(trace)
}

pub fn write_trace<W: Write>(out: &mut W, trace: &SessionTrace) -> std::io::Result<()> {
    out.write_all(serialize_trace(trace).as_bytes())?;
    out.write_all(b"\n")
}

/// Parse every non-blank line; errors carry the 1-based line number.
pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<SessionTrace>, (usize, TraceError)> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, TraceError::Parse(e.to_string())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_trace(&line).map_err(|e| (i + 1, e))?);
    }
    Ok(out)
}

/// Copy with every latency zeroed, for byte comparison of reruns.
pub fn strip_latency(trace: &SessionTrace) -> SessionTrace {
    let mut t = trace.clone();
    for r in &mut t.initial_evidence {
        r.latency_ms = 0;
    }
    for it in &mut t.iterations {
        for r in &mut it.responses {
            r.latency_ms = 0;
        }
    }
    t
}

fn check_stage(
    stage: &'static str,
    responses: &[ToolResponse],
    verdicts: &[PerResponseVerdict],
    trace: &SessionTrace,
) -> Result<(), TraceError> {
    let cfg = &trace.config_snapshot;
    let mut keys = BTreeSet::new();
    for r in responses {
        if cfg.tool(&r.tool_id).is_none() {
            return Err(TraceError::invalid(stage, format!("unregistered tool `{}`", r.tool_id)));
        }
        if !keys.insert((r.tool_id.as_str(), r.query_text.as_str())) {
            return Err(TraceError::invalid(
                stage,
                format!("duplicate response for ({}, {:?})", r.tool_id, r.query_text),
            ));
        }
        match (&r.error, r.raw_text.is_empty()) {
            (None, true) => {
                return Err(TraceError::invalid(stage, format!("empty response from `{}`", r.tool_id)))
            }
            (Some(_), false) => {
                return Err(TraceError::invalid(
                    stage,
                    format!("errored response from `{}` carries text", r.tool_id),
                ))
            }
            _ => {}
        }
    }
    let mut seen = BTreeSet::new();
    for v in verdicts {
        let key = (v.tool_id.as_str(), v.query_text.as_str());
        let backed = responses
            .iter()
            .any(|r| r.is_ok() && r.tool_id == v.tool_id && r.query_text == v.query_text);
        if !backed {
            return Err(TraceError::invalid(
                stage,
                format!("verdict for ({}, {:?}) has no logged response", v.tool_id, v.query_text),
            ));
        }
        if !seen.insert(key) {
            return Err(TraceError::invalid(stage, format!("duplicate verdict for {key:?}")));
        }
        if v.reasoning.trim().is_empty() {
            return Err(TraceError::invalid(stage, "verdict without reasoning"));
        }
    }
    Ok(())
}

/// Checks every structural invariant of a trace.
pub fn validate(trace: &SessionTrace) -> Result<(), TraceError> {
    if trace.version != TRACE_VERSION {
        return Err(TraceError::invalid(
            "version",
            format!("expected {TRACE_VERSION}, found {:?}", trace.version),
        ));
    }
    let cfg = &trace.config_snapshot;
    if cfg.k < 1 {
        return Err(TraceError::invalid("config_snapshot", "k must be at least 1"));
    }
    if cfg.n < 1 {
        return Err(TraceError::invalid("config_snapshot", "n must be at least 1"));
    }
    if cfg.tools.is_empty() {
        return Err(TraceError::invalid("config_snapshot", "no tools registered"));
    }
    let mut ids = BTreeSet::new();
    for t in &cfg.tools {
        if !ids.insert(t.id.as_str()) {
            return Err(TraceError::invalid("config_snapshot", format!("duplicate tool id `{}`", t.id)));
        }
    }
    let k = cfg.k as usize;
    let iters = trace.iterations.len();
    if iters > k {
        return Err(TraceError::invalid(
            "iterations",
            format!("{iters} iterations exceed K = {k}"),
        ));
    }
    match trace.status {
        TraceStatus::ConsistentEarly if iters != 0 => {
            return Err(TraceError::invalid(
                "status",
                format!("ConsistentEarly with {iters} iteration(s)"),
            ))
        }
        TraceStatus::ConsistentInLoop | TraceStatus::ExhaustedFallback if iters == 0 => {
            return Err(TraceError::invalid("status", format!("{} with no iterations", trace.status)))
        }
        TraceStatus::ExhaustedFallback if iters != k => {
            return Err(TraceError::invalid(
                "status",
                format!("ExhaustedFallback after {iters} of {k} iterations"),
            ))
        }
        _ => {}
    }
    if trace.final_binary != cfg.unclear_policy.binarize(trace.final_verdict) {
        return Err(TraceError::invalid(
            "final_binary",
            format!(
                "{} does not follow from final {} under {:?}",
                trace.final_binary, trace.final_verdict, cfg.unclear_policy
            ),
        ));
    }
    if trace.initial_evidence.len() > cfg.tools.len() {
        return Err(TraceError::invalid("initial_evidence", "more responses than tools"));
    }
    check_stage("initial_evidence", &trace.initial_evidence, &trace.initial_verdicts, trace)?;
    for (i, it) in trace.iterations.iter().enumerate() {
        if it.index as usize != i + 1 {
            return Err(TraceError::invalid(
                "iterations",
                format!("record {} has index {}", i + 1, it.index),
            ));
        }
        if it.queries.len() > cfg.n as usize {
            return Err(TraceError::invalid(
                "iterations",
                format!("iteration {} has {} queries, N = {}", it.index, it.queries.len(), cfg.n),
            ));
        }
        if it.responses.len() > it.queries.len() * cfg.tools.len() {
            return Err(TraceError::invalid(
                "iterations",
                format!("iteration {} has more responses than queries x tools", it.index),
            ));
        }
        if let Some(q) = it
            .queries
            .iter()
            .find(|q| !EvidentialQuery::matches_template(&q.text) || q.iteration != it.index)
        {
            return Err(TraceError::invalid(
                "iterations",
                format!("iteration {} has malformed query {:?}", it.index, q.text),
            ));
        }
        if it.consistent && !it.fused.is_decisive() {
            return Err(TraceError::invalid(
                "iterations",
                format!("iteration {} is consistent but fused Unclear", it.index),
            ));
        }
        check_stage("iterations", &it.responses, &it.verdicts, trace)?;
    }
    Ok(())
}
