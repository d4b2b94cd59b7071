//! `crosscheck`: ask existence questions, caption images, run benchmarks and
//! sweeps, and audit recorded traces.
//!
//! Exit codes: 0 success, 1 usage error, 2 engine or runtime error,
//! 3 replay mismatch.

mod commands;
mod manifest;
mod pool;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "crosscheck", version, about = "Cross-tool verification of object-existence claims")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one existence question about one image.
    Ask(AskArgs),
    /// Caption an image and drop sentences about objects that fail verification.
    Caption(CaptionArgs),
    /// Run or score a benchmark dataset.
    Bench(BenchArgs),
    /// Sweep ensemble size, query budget, iteration cap and corruption rate on synthetic suites.
    Sweep(SweepArgs),
    /// Re-derive every decision in recorded traces and compare.
    Replay(ReplayArgs),
    /// Write a synthetic suite: dataset, tool fixtures and a config.
    GenSuite(GenSuiteArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Maximum loop iterations (overrides the config).
    #[arg(long)]
    k: Option<u32>,
    /// Evidential queries per iteration (overrides the config).
    #[arg(long)]
    n: Option<u32>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// Image reference passed to every tool.
    image: String,
    question: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "trace.jsonl")]
    trace_out: PathBuf,
    #[arg(long, default_value = "ask")]
    sample_id: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    image: String,
    #[arg(long)]
    config: PathBuf,
    /// Traces of every per-object verification.
    #[arg(long, default_value = "caption-trace.jsonl")]
    trace_out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// pope, mme or amber.
    #[arg(long)]
    task: String,
    #[arg(long)]
    dataset: PathBuf,
    /// Needed unless `--answers` is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Score this answers file instead of running the engine.
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Worker threads; defaults to the config value, then one per core.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON grid file; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    flips: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    per_scene: Option<usize>,
    /// Roster index of the corrupted tool.
    #[arg(long)]
    corrupt_tool: Option<usize>,
    /// assert-absent, deny-present or swap.
    #[arg(long)]
    mode: Option<String>,
    /// Run cells one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trace file, one trace per line.
    trace: PathBuf,
    /// Re-run per-response reasoning with this config's reasoner as well.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print only mismatches and the summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
pub struct GenSuiteArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    #[arg(long, default_value_t = 4)]
    per_scene: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of roster tools in the generated config (1 to 5).
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    n: u32,
    #[arg(long, default_value_t = 3)]
    k: u32,
    /// Roster index of a tool to corrupt.
    #[arg(long)]
    corrupt_tool: Option<usize>,
    #[arg(long, default_value = "assert-absent")]
    mode: String,
    #[arg(long, default_value_t = 1.0)]
    flip: f64,
}

/// How a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Mismatch(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Mismatch(_) => 3,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

pub trait FailureExt<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailureExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Ask(a) => commands::ask(a),
        Command::Caption(a) => commands::caption(a),
        Command::Bench(a) => commands::bench(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Replay(a) => commands::replay(a),
        Command::GenSuite(a) => commands::gen_suite(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(e) => eprintln!("usage error: {e:#}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Mismatch(n) => eprintln!("replay mismatch in {n} trace(s)"),
            }
            ExitCode::from(f.code())
        }
    }
}
