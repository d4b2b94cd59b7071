use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde_json::json;

use crosscheck_core::bench::{
    load_dataset, parse_answers, score_existence, score_generative, score_mme, Dataset, MetricReport, Task,
};
use crosscheck_core::config::{hex_sha256, load_config, Runtime};
use crosscheck_core::engine::CaptionOutcome;
use crosscheck_core::lexicon::Lexicon;
use crosscheck_core::sim::{export_suite, generate_suite, sweep as run_sweep, write_csv, Corruption, SweepSpec, ROSTER};
use crosscheck_core::tools::CorruptionMode;
use crosscheck_core::trace::{read_traces, write_trace};
use crosscheck_core::types::SessionTrace;
use crosscheck_core::{replay as replay_trace, Answer, Engine, Execution};

use crate::manifest::{manifest_beside, RunManifest};
use crate::pool::{default_workers, map_bounded};
use crate::{
    AskArgs, BenchArgs, CaptionArgs, CmdResult, Failure, FailureExt, GenSuiteArgs, Overrides, ReplayArgs, SweepArgs,
};

fn runtime(config: &Path, overrides: &Overrides) -> Result<Runtime, Failure> {
    if !config.is_file() {
        return Err(Failure::Usage(anyhow!("config file {} not found", config.display())));
    }
    let mut rt = load_config(config).usage()?;
    if let Some(k) = overrides.k {
        rt.config.k = k;
    }
    if let Some(n) = overrides.n {
        rt.config.n = n;
    }
    Ok(rt)
}

fn engine(rt: &Runtime) -> Result<Engine, Failure> {
    rt.engine().context("invalid engine configuration").usage()
}

fn checksums(rt: &Runtime, engine: &Engine) -> BTreeMap<String, String> {
    let mut out = engine.config().fingerprints.clone();
    out.insert("config".into(), rt.config_checksum.clone());
    out
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display())).runtime()
        }
        _ => Ok(()),
    }
}

fn write_traces<'a>(path: &Path, traces: impl IntoIterator<Item = &'a SessionTrace>) -> Result<(), Failure> {
    create_parent(path)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display())).runtime()?;
    let mut out = BufWriter::new(file);
    for t in traces {
        write_trace(&mut out, t).runtime()?;
    }
    out.flush().runtime()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).runtime()
}

pub fn ask(args: AskArgs) -> CmdResult {
    let rt = runtime(&args.config, &args.overrides)?;
    let engine = engine(&rt)?;
    let mut manifest = RunManifest::new("ask", &args.trace_out);
    let (answer, trace) = engine
        .run_existence_query(&args.sample_id, &args.image, &args.question)
        .runtime()?;
    write_traces(&args.trace_out, [&trace])?;
    manifest.config = Some(args.config.clone());
    manifest.seed = engine.config().seed;
    manifest.checksums = checksums(&rt, &engine);
    manifest.outputs.push(args.trace_out.clone());
    manifest.write(&manifest_beside(&args.trace_out)).runtime()?;
    println!("{answer}");
    println!("status: {} after {} iteration(s)", trace.status, trace.iterations.len());
    println!("trace: {}", args.trace_out.display());
    Ok(())
}

fn caption_json(image: &str, out: &CaptionOutcome) -> serde_json::Value {
    json!({
        "image": image,
        "caption": out.caption,
        "captions": out.captions,
        "candidates": out.candidates,
        "verified": out.verified,
        "refuted": out.refuted,
    })
}

pub fn caption(args: CaptionArgs) -> CmdResult {
    let rt = runtime(&args.config, &args.overrides)?;
    let engine = engine(&rt)?;
    let mut manifest = RunManifest::new("caption", &args.trace_out);
    let out = engine.run_caption(&args.image).runtime()?;
    write_traces(&args.trace_out, &out.traces)?;
    let summary = args.trace_out.with_extension("caption.json");
    write_text(&summary, &(serde_json::to_string_pretty(&caption_json(&args.image, &out)).runtime()? + "\n"))?;
    manifest.config = Some(args.config.clone());
    manifest.seed = engine.config().seed;
    manifest.checksums = checksums(&rt, &engine);
    manifest.outputs = vec![args.trace_out.clone(), summary];
    manifest.write(&manifest_beside(&args.trace_out)).runtime()?;
    println!("{}", out.caption);
    if !out.refuted.is_empty() {
        println!("removed: {}", out.refuted.join(", "));
    }
    println!("trace: {}", args.trace_out.display());
    Ok(())
}

fn parse_existence_answers(raw: BTreeMap<String, String>) -> Result<BTreeMap<String, Answer>, Failure> {
    raw.into_iter()
        .map(|(id, a)| {
            a.parse::<Answer>()
                .map(|ans| (id.clone(), ans))
                .map_err(|_| Failure::Usage(anyhow!("answer for `{id}` is {a:?}, expected yes or no")))
        })
        .collect()
}

fn score(task: Task, dataset: &Dataset, answers: &BTreeMap<String, String>, lexicon: &Lexicon) -> Result<MetricReport, Failure> {
    Ok(match (task, dataset) {
        (Task::Pope, Dataset::Existence(s)) => score_existence(s, &parse_existence_answers(answers.clone())?),
        (Task::Mme, Dataset::Existence(s)) => score_mme(s, &parse_existence_answers(answers.clone())?),
        (Task::Amber, Dataset::Generative(s)) => score_generative(s, answers, lexicon),
        _ => return Err(Failure::Usage(anyhow!("dataset does not fit task {task:?}"))),
    })
}

struct SampleRun {
    id: String,
    answer: Option<String>,
    traces: Vec<SessionTrace>,
    error: Option<String>,
}

fn run_engine(engine: &Engine, dataset: &Dataset, workers: usize) -> Vec<SampleRun> {
    match dataset {
        Dataset::Existence(samples) => map_bounded(samples, workers, |s| {
            match engine.run_existence_query(&s.sample_id, &s.image_ref, &s.question) {
                Ok((a, t)) => SampleRun { id: s.sample_id.clone(), answer: Some(a.to_string()), traces: vec![t], error: None },
                Err(e) => SampleRun { id: s.sample_id.clone(), answer: None, traces: vec![], error: Some(e.to_string()) },
            }
        }),
        Dataset::Generative(samples) => map_bounded(samples, workers, |s| match engine.run_caption(&s.image_ref) {
            Ok(out) => SampleRun { id: s.sample_id.clone(), answer: Some(out.caption), traces: out.traces, error: None },
            Err(e) => SampleRun { id: s.sample_id.clone(), answer: None, traces: vec![], error: Some(e.to_string()) },
        }),
    }
}

pub fn bench(args: BenchArgs) -> CmdResult {
    let task: Task = args.task.parse().map_err(|e: String| Failure::Usage(anyhow!(e)))?;
    let rt = match &args.config {
        Some(c) => Some(runtime(c, &args.overrides)?),
        None if args.answers.is_some() => None,
        None => return Err(Failure::Usage(anyhow!("--config is required unless --answers is given"))),
    };
    let lexicon = rt.as_ref().map(|r| r.lexicon.clone()).unwrap_or_else(|| Arc::new(Lexicon::bundled()));
    let dataset = load_dataset(&args.dataset, task.dataset_format(), &lexicon).usage()?;
    let dataset_bytes = std::fs::read(&args.dataset).usage()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).runtime()?;
    let mut manifest = RunManifest::new("bench", &args.out);
    manifest.dataset = Some(args.dataset.clone());
    manifest.config = args.config.clone();

    let answers = match &args.answers {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()?;
            manifest.checksums.insert("answers".into(), hex_sha256(text.as_bytes()));
            parse_answers(&text).usage()?
        }
        None => {
            let rt = rt.as_ref().expect("config checked above");
            let engine = engine(rt)?.with_execution(Execution::Sequential);
            let workers = default_workers(args.workers.unwrap_or(rt.workers));
            log::info!("running {task:?} with {workers} worker(s)");
            let mut runs = run_engine(&engine, &dataset, workers);
            runs.sort_by(|a, b| a.id.cmp(&b.id));
            let failed: Vec<&SampleRun> = runs.iter().filter(|r| r.error.is_some()).collect();
            for r in &failed {
                log::warn!("sample {} failed: {}", r.id, r.error.as_deref().unwrap_or(""));
            }
            if !runs.is_empty() && failed.len() == runs.len() {
                return Err(Failure::Runtime(anyhow!(
                    "every sample failed; first error: {}",
                    failed[0].error.as_deref().unwrap_or("")
                )));
            }
            let traces = args.out.join("traces.jsonl");
            write_traces(&traces, runs.iter().flat_map(|r| r.traces.iter()))?;
            let key = if task == Task::Amber { "caption" } else { "answer" };
            let mut lines = String::new();
            let mut answers = BTreeMap::new();
            for r in &runs {
                if let Some(a) = &r.answer {
                    lines.push_str(&json!({"sample_id": r.id, key: a}).to_string());
                    lines.push('\n');
                    answers.insert(r.id.clone(), a.clone());
                }
            }
            let answers_path = args.out.join("answers.jsonl");
            write_text(&answers_path, &lines)?;
            manifest.outputs.extend([traces, answers_path]);
            manifest.seed = engine.config().seed;
            manifest.checksums.extend(checksums(rt, &engine));
            answers
        }
    };

    let mut report = score(task, &dataset, &answers, &lexicon)?;
    report.fingerprint.insert("dataset".into(), hex_sha256(&dataset_bytes));
    report.fingerprint.insert("lexicon".into(), lexicon.checksum().to_string());
    let report_json = args.out.join("report.json");
    let report_txt = args.out.join("report.txt");
    write_text(&report_json, &(serde_json::to_string_pretty(&report).runtime()? + "\n"))?;
    let table = report.table();
    write_text(&report_txt, &table)?;
    manifest.outputs.extend([report_json, report_txt]);
    manifest.checksums.insert("dataset".into(), hex_sha256(&dataset_bytes));
    manifest.write(&args.out.join("manifest.json")).runtime()?;
    print!("{table}");
    Ok(())
}

fn corruption_mode(name: &str) -> Result<CorruptionMode, Failure> {
    match name {
        "assert-absent" => Ok(CorruptionMode::AssertAbsentObject),
        "deny-present" => Ok(CorruptionMode::DenyPresentObject),
        "swap" => Ok(CorruptionMode::RandomObjectSwap),
        other => Err(Failure::Usage(anyhow!(
            "unknown corruption mode `{other}` (expected assert-absent, deny-present or swap)"
        ))),
    }
}

pub fn sweep(args: SweepArgs) -> CmdResult {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).usage()?;
            serde_json::from_str::<SweepSpec>(&text).with_context(|| format!("parsing {}", p.display())).usage()?
        }
        None => SweepSpec::default(),
    };
    if let Some(v) = args.ms {
        spec.ms = v;
    }
    if let Some(v) = args.ns {
        spec.ns = v;
    }
    if let Some(v) = args.ks {
        spec.ks = v;
    }
    if let Some(v) = args.flips {
        spec.flips = v;
    }
    if let Some(v) = args.seeds {
        spec.seeds = v;
    }
    if let Some(v) = args.scenes {
        spec.n_scenes = v;
    }
    if let Some(v) = args.per_scene {
        spec.q_per_scene = v;
    }
    if let Some(v) = args.corrupt_tool {
        spec.corrupted_tool = v;
    }
    if let Some(m) = &args.mode {
        spec.corruption_mode = corruption_mode(m)?;
    }
    let grid_ok = [spec.ms.len(), spec.ns.len(), spec.ks.len(), spec.flips.len(), spec.seeds.len()]
        .iter()
        .all(|&l| l > 0);
    if !grid_ok || spec.n_scenes == 0 {
        return Err(Failure::Usage(anyhow!("sweep grid is empty")));
    }
    if spec.ms.iter().any(|&m| m == 0 || m > ROSTER.len()) {
        return Err(Failure::Usage(anyhow!("each M must lie in 1..={}", ROSTER.len())));
    }
    if spec.ns.contains(&0) || spec.ks.contains(&0) {
        return Err(Failure::Usage(anyhow!("N and K must be at least 1")));
    }
    if spec.flips.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Failure::Usage(anyhow!("flip probabilities must lie in [0, 1]")));
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display())).runtime()?;
    let mut manifest = RunManifest::new("sweep", &args.out);
    manifest.config = args.spec.clone();
    manifest.seed = spec.seeds.first().copied();
    let lexicon = Arc::new(Lexicon::bundled());
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let rows = run_sweep(&spec, &lexicon, exec);
    let csv_path = args.out.join("sweep.csv");
    let mut bytes = Vec::new();
    write_csv(&rows, &mut bytes).runtime()?;
    write_text(&csv_path, std::str::from_utf8(&bytes).runtime()?)?;
    let spec_path = args.out.join("sweep_spec.json");
    write_text(&spec_path, &(serde_json::to_string_pretty(&spec).runtime()? + "\n"))?;
    manifest.checksums.insert("lexicon".into(), lexicon.checksum().to_string());
    manifest.checksums.insert("sweep_csv".into(), hex_sha256(&bytes));
    manifest.outputs = vec![csv_path.clone(), spec_path];
    manifest.write(&args.out.join("manifest.json")).runtime()?;

    println!("{:>3} {:>3} {:>6} {:>10} {:>10}", "m", "k", "flip", "accuracy", "baseline");
    let mut groups: BTreeMap<(usize, u32, u64), (f64, f64, usize)> = BTreeMap::new();
    for r in &rows {
        let g = groups.entry((r.m, r.k, r.flip.to_bits())).or_default();
        g.0 += r.accuracy;
        g.1 += r.baseline_accuracy;
        g.2 += 1;
    }
    for ((m, k, flip), (acc, base, n)) in groups {
        let n = n as f64;
        println!("{m:>3} {k:>3} {:>6.2} {:>10.4} {:>10.4}", f64::from_bits(flip), acc / n, base / n);
    }
    println!("{} rows written to {}", rows.len(), csv_path.display());
    Ok(())
}

pub fn replay(args: ReplayArgs) -> CmdResult {
    let file = File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display())).usage()?;
    let traces = read_traces(BufReader::new(file))
        .map_err(|(line, e)| Failure::Runtime(anyhow!("{} line {line}: {e}", args.trace.display())))?;
    let rt = match &args.config {
        Some(c) => Some(runtime(c, &Overrides { k: None, n: None })?),
        None => None,
    };
    let reasoner = rt.as_ref().map(|r| r.reasoner.clone());
    let mut mismatched = 0;
    for trace in &traces {
        let report = replay_trace(trace, reasoner.as_deref())
            .with_context(|| format!("trace `{}` is invalid", trace.sample_id))
            .runtime()?;
        if !args.quiet {
            println!("== {} ({})", trace.sample_id, trace.user_query);
            for line in &report.audit {
                println!("  {line}");
            }
        }
        if report.matches() {
            if !args.quiet {
                println!("  OK: {} / {}", report.rederived_final, report.rederived_status);
            }
        } else {
            mismatched += 1;
            println!("== MISMATCH {}", trace.sample_id);
            println!("  recorded  {} / {}", report.recorded_final, report.recorded_status);
            println!("  rederived {} / {}", report.rederived_final, report.rederived_status);
            for m in &report.mismatches {
                println!("  - {m}");
            }
        }
    }
    println!("{} trace(s) replayed, {} mismatch(es)", traces.len(), mismatched);
    if mismatched > 0 {
        Err(Failure::Mismatch(mismatched))
    } else {
        Ok(())
    }
}

pub fn gen_suite(args: GenSuiteArgs) -> CmdResult {
    if args.m == 0 || args.m > ROSTER.len() {
        return Err(Failure::Usage(anyhow!("--m must lie in 1..={}", ROSTER.len())));
    }
    if args.scenes == 0 || args.per_scene == 0 || args.n == 0 || args.k == 0 {
        return Err(Failure::Usage(anyhow!("--scenes, --per-scene, --n and --k must be at least 1")));
    }
    let corruption = match args.corrupt_tool {
        Some(tool) if tool >= args.m => {
            return Err(Failure::Usage(anyhow!("--corrupt-tool {tool} is outside the {} configured tools", args.m)))
        }
        Some(_) if !(0.0..=1.0).contains(&args.flip) => {
            return Err(Failure::Usage(anyhow!("--flip must lie in [0, 1]")))
        }
        Some(tool) => Some(Corruption {
            tool,
            mode: corruption_mode(&args.mode)?,
            flip_probability: args.flip,
            seed: args.seed,
        }),
        None => None,
    };
    let lexicon = Lexicon::bundled();
    let suite = generate_suite(args.scenes, args.per_scene, args.seed, &lexicon);
    let mut manifest = RunManifest::new("gen-suite", &args.out);
    let outputs: Vec<PathBuf> = export_suite(&suite, &args.out, args.m, args.n, args.k, corruption.as_ref()).runtime()?;
    manifest.seed = Some(args.seed);
    manifest.dataset = Some(args.out.join("dataset.jsonl"));
    manifest.config = Some(args.out.join("config.toml"));
    manifest.checksums.insert("lexicon".into(), lexicon.checksum().to_string());
    manifest.outputs = outputs;
    manifest.write(&args.out.join("manifest.json")).runtime()?;
    println!(
        "{} questions over {} scenes written to {}",
        suite.samples.len(),
        suite.scenes.len(),
        args.out.display()
    );
    Ok(())
}
