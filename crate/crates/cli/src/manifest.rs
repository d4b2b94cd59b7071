use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

pub const MANIFEST_VERSION: &str = "manifest_v1";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub command: String,
    pub config: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    /// Config file, template and lexicon checksums.
    pub checksums: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, output: &Path) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            config: None,
            dataset: None,
            output: output.to_path_buf(),
            seed: None,
            started: now(),
            finished: String::new(),
            checksums: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, path: &Path) -> anyhow::Result<()> {
        self.finished = now();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `out/trace.jsonl` gets `out/trace.manifest.json`.
pub fn manifest_beside(file: &Path) -> PathBuf {
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    file.with_file_name(format!("{stem}.manifest.json"))
}
