use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crosscheck_core::trace::{parse_trace, serialize_trace};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crosscheck"))
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel)
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

#[test]
fn ask_prints_answer_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("out/trace.jsonl");
    let (code, out, err) = run(bin()
        .args(["ask", "img_001", "Is there a person in the image?", "--config"])
        .arg(data("frisbee/config.toml"))
        .arg("--trace-out")
        .arg(&trace));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().next(), Some("yes"));
    assert!(out.contains(&trace.display().to_string()));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/trace.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["version"], "manifest_v1");
    assert_eq!(manifest["command"], "ask");
    assert!(manifest["checksums"]["template:per_response_reasoning"].is_string());
    assert!(manifest["checksums"]["config"].is_string());
}

#[test]
fn ask_overrides_reach_the_engine() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let (code, _, err) = run(bin()
        .args(["ask", "img_001", "Is there a person in the image?", "--k", "1", "--n", "2", "--config"])
        .arg(data("frisbee/config.toml"))
        .arg("--trace-out")
        .arg(&trace));
    assert_eq!(code, 0, "{err}");
    let t = parse_trace(std::fs::read_to_string(&trace).unwrap().trim()).unwrap();
    assert_eq!((t.config_snapshot.k, t.config_snapshot.n), (1, 2));
}

#[test]
fn usage_errors_exit_one() {
    let (code, _, err) = run(bin().args(["ask", "img", "Is there a dog in the image?", "--config", "/no/such.toml"]));
    assert_eq!(code, 1);
    assert!(err.contains("not found"));
    assert_eq!(run(bin().args(["ask"])).0, 1);
    assert_eq!(run(bin().args(["frobnicate"])).0, 1);
    let (code, _, err) = run(bin().args(["bench", "--task", "coco", "--dataset", "x", "--out", "y"]));
    assert_eq!(code, 1);
    assert!(err.contains("unknown task"));
    assert_eq!(run(bin().arg("--help")).0, 0);
}

#[test]
fn reasoner_outage_exits_two_naming_the_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(bin()
        .args(["ask", "img_001", "Is there a person in the image?", "--config"])
        .arg(data("frisbee/reasoner_down.toml"))
        .arg("--trace-out")
        .arg(dir.path().join("t.jsonl")));
    assert_eq!(code, 2);
    assert!(err.contains("http://127.0.0.1:9/v1/chat/completions"), "{err}");
}

#[test]
fn replay_accepts_clean_and_flags_tampered_traces() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let (code, _, _) = run(bin()
        .args(["ask", "img_001", "Is there a person in the image?", "--config"])
        .arg(data("frisbee/config.toml"))
        .arg("--trace-out")
        .arg(&trace));
    assert_eq!(code, 0);
    let (code, out, _) = run(bin().arg("replay").arg(&trace));
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("via rule #5"), "audit names the rule fired:\n{out}");
    let (code, _, _) = run(bin().arg("replay").arg(&trace).arg("--config").arg(data("frisbee/config.toml")));
    assert_eq!(code, 0);

    let original = parse_trace(std::fs::read_to_string(&trace).unwrap().trim()).unwrap();
    let mut edited = original.clone();
    edited.final_verdict = crosscheck_core::Verdict::No;
    edited.final_binary = crosscheck_core::Answer::No;
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, serialize_trace(&edited) + "\n").unwrap();
    let (code, out, _) = run(bin().arg("replay").arg(&tampered));
    assert_eq!(code, 3);
    assert!(out.contains("MISMATCH") && out.contains("recorded  No") && out.contains("rederived Yes"), "{out}");

    let mut too_long = original.clone();
    too_long.config_snapshot.k = 0;
    let invalid = dir.path().join("invalid.jsonl");
    std::fs::write(&invalid, serialize_trace(&too_long) + "\n").unwrap();
    let (code, _, err) = run(bin().arg("replay").arg(&invalid));
    assert_eq!(code, 2);
    assert!(err.contains("invalid"), "{err}");
}

#[test]
fn caption_drops_refuted_sentences() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("cap.jsonl");
    let (code, out, err) = run(bin().args(["caption", "park_01", "--config"]).arg(data("park/config.toml")).arg("--trace-out").arg(&trace));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().next(), Some("A dog catches a frisbee."));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cap.caption.json")).unwrap()).unwrap();
    assert_eq!(summary["refuted"], serde_json::json!(["person"]));
    assert_eq!(summary["candidates"], serde_json::json!(["dog", "frisbee", "person", "bench"]));
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 4);
}

#[test]
fn generative_bench_scores_grounded_captions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("amber");
    let (code, stdout, err) = run(bin()
        .args(["bench", "--task", "amber", "--dataset"])
        .arg(data("park/amber.jsonl"))
        .arg("--config")
        .arg(data("park/config.toml"))
        .arg("--out")
        .arg(&out));
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("hal"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["chair"], 0.0);
    // the raw plug-in caption mentions the absent person
    let answers = dir.path().join("raw.jsonl");
    std::fs::write(&answers, r#"{"sample_id": "park_01", "caption": "A dog catches a frisbee. A person watches from the bench."}"#).unwrap();
    let (code, _, _) = run(bin()
        .args(["bench", "--task", "amber", "--dataset"])
        .arg(data("park/amber.jsonl"))
        .arg("--answers")
        .arg(&answers)
        .arg("--out")
        .arg(dir.path().join("raw")));
    assert_eq!(code, 0);
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("raw/report.json")).unwrap()).unwrap();
    assert_eq!(raw["metrics"]["hal"], 1.0);
    assert_eq!(raw["metrics"]["chair"], 0.25);
}

#[test]
fn bench_is_repeatable_and_answers_rescore_identically() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    let (code, _, err) = run(bin().args(["gen-suite", "--scenes", "10", "--seed", "4", "--corrupt-tool", "0", "--flip", "0.5", "--out"]).arg(&suite));
    assert_eq!(code, 0, "{err}");
    let bench = |out: &Path, workers: &str| {
        run(bin()
            .args(["bench", "--task", "pope", "--workers", workers, "--dataset"])
            .arg(suite.join("dataset.jsonl"))
            .arg("--config")
            .arg(suite.join("config.toml"))
            .arg("--out")
            .arg(out))
    };
    assert_eq!(bench(&dir.path().join("a"), "1").0, 0);
    assert_eq!(bench(&dir.path().join("b"), "4").0, 0);
    let read = |p: PathBuf| std::fs::read_to_string(p).unwrap();
    assert_eq!(read(dir.path().join("a/report.json")), read(dir.path().join("b/report.json")));
    assert_eq!(read(dir.path().join("a/answers.jsonl")), read(dir.path().join("b/answers.jsonl")));
    let strip = |p: PathBuf| -> Vec<String> {
        read(p)
            .lines()
            .map(|l| serialize_trace(&crosscheck_core::trace::strip_latency(&parse_trace(l).unwrap())))
            .collect()
    };
    assert_eq!(strip(dir.path().join("a/traces.jsonl")), strip(dir.path().join("b/traces.jsonl")));

    let (code, _, _) = run(bin()
        .args(["bench", "--task", "pope", "--dataset"])
        .arg(suite.join("dataset.jsonl"))
        .arg("--answers")
        .arg(dir.path().join("a/answers.jsonl"))
        .arg("--out")
        .arg(dir.path().join("c")));
    assert_eq!(code, 0);
    assert_eq!(read(dir.path().join("a/report.json")), read(dir.path().join("c/report.json")));
    assert!(dir.path().join("c/manifest.json").is_file());
}

#[test]
fn sweep_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "--ms", "1,3", "--ns", "2", "--ks", "1,2", "--flips", "0,1", "--seeds", "1", "--scenes", "5", "--out"];
    let (code, out, err) = run(bin().args(args).arg(dir.path().join("a")));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("8 rows"));
    let (code, _, _) = run(bin().args(args).arg(dir.path().join("b")).arg("--sequential"));
    assert_eq!(code, 0);
    let a = std::fs::read(dir.path().join("a/sweep.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/sweep.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 9);
    assert!(dir.path().join("a/manifest.json").is_file());
    assert_eq!(run(bin().args(["sweep", "--ms", "9", "--out"]).arg(dir.path().join("c"))).0, 1);
}
