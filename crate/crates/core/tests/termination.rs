mod common;

use std::time::{Duration, Instant};

use common::*;
use crosscheck_core::reasoner::ScriptedReasoner;
use crosscheck_core::trace::{parse_trace, serialize_trace, strip_latency, validate};
use crosscheck_core::replay;
use proptest::prelude::*;

#[test]
fn fuzzed_runs_halt_within_bounds() {
    let started = Instant::now();
    let mut statuses = std::collections::BTreeMap::new();
    for seed in 0..10_000u64 {
        let (engine, question) = chaos_engine(seed);
        let cfg = engine.config();
        let (m, n, k) = (cfg.tools.len(), cfg.n as usize, cfg.k as usize);
        let t0 = Instant::now();
        let (_, trace) = engine
            .run_existence_query(&format!("fuzz-{seed}"), CHAOS_IMAGE, &question)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(t0.elapsed() < Duration::from_secs(5), "seed {seed} took {:?}", t0.elapsed());
        assert!(trace.iterations.len() <= k, "seed {seed}");
        assert!(trace.response_count() <= m + m * n * k, "seed {seed}: {} responses", trace.response_count());
        validate(&trace).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        *statuses.entry(trace.status.to_string()).or_insert(0u32) += 1;
    }
    // the fuzz must reach every exit path, not only the early one
    assert_eq!(statuses.len(), 3, "{statuses:?}");
    assert!(started.elapsed() < Duration::from_secs(120));
}

#[test]
fn randomized_runs_replay_identically() {
    let lex = lexicon();
    let reasoner = ScriptedReasoner::new(lex);
    for seed in 0..500u64 {
        let (engine, question) = chaos_engine(1_000_000 + seed);
        let (_, trace) = engine.run_existence_query(&format!("r{seed}"), CHAOS_IMAGE, &question).unwrap();
        let line = serialize_trace(&trace);
        let parsed = parse_trace(&line).unwrap();
        assert_eq!(serialize_trace(&parsed), line);
        let report = replay(&parsed, Some(&reasoner)).unwrap();
        assert!(report.matches(), "seed {seed}: {:?}", report.mismatches);
        // a second run of the same configuration agrees modulo latency
        let (_, again) = engine.run_existence_query(&format!("r{seed}"), CHAOS_IMAGE, &question).unwrap();
        assert_eq!(serialize_trace(&strip_latency(&again)), serialize_trace(&strip_latency(&trace)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn traces_round_trip(seed in 0u64..1_000_000, sample in "\\PC{0,24}", note in "\\PC{0,40}", latency in 0u64..u64::MAX) {
        let (engine, question) = chaos_engine(seed);
        let (_, mut trace) = engine.run_existence_query(&sample, CHAOS_IMAGE, &question).unwrap();
        trace.user_query = format!("{question} {note}");
        if let Some(r) = trace.initial_evidence.first_mut() {
            r.latency_ms = latency;
        }
        let line = serialize_trace(&trace);
        prop_assert!(!line.contains('\n'));
        let back = parse_trace(&line).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(serialize_trace(&back), line);
    }
}
