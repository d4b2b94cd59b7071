//! Stochastic corruption of scripted tool output.
//!
//! The flip decision for a request is a pure function of
//! `(seed, tool_id, image_ref, prompt)`, so results do not depend on call
//! order and parallel fan-out stays reproducible.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scripted::{normalize_prompt, ScriptedToolSpec};
use super::{ToolBackend, ToolFailure, ToolRequest};
use crate::lexicon::Lexicon;
use crate::sim::{COLORS, LOCATIONS};
use crate::text::split_sentences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptionMode {
    /// Claim the target object is present.
    AssertAbsentObject,
    /// Remove mentions of the target object and deny it.
    DenyPresentObject,
    /// Replace one mentioned object with another one.
    RandomObjectSwap,
}

#[derive(Debug, Clone)]
pub struct ErrorModelToolSpec {
    pub inner: ScriptedToolSpec,
    pub flip_probability: f64,
    pub corruption_mode: CorruptionMode,
    pub seed: u64,
    /// Objects to corrupt per image when the prompt names none.
    pub targets: BTreeMap<String, Vec<String>>,
    /// Replacement objects for `RandomObjectSwap`.
    pub swap_pool: Vec<String>,
}

impl ErrorModelToolSpec {
    pub fn new(inner: ScriptedToolSpec, flip_probability: f64, corruption_mode: CorruptionMode, seed: u64) -> Self {
        assert!(
            (0.0..=1.0).contains(&flip_probability),
            "flip probability {flip_probability} outside [0, 1]"
        );
        ErrorModelToolSpec {
            inner,
            flip_probability,
            corruption_mode,
            seed,
            targets: BTreeMap::new(),
            swap_pool: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErrorModelTool {
    spec: ErrorModelToolSpec,
    lexicon: Arc<Lexicon>,
}

impl ErrorModelTool {
    pub fn new(spec: ErrorModelToolSpec, lexicon: Arc<Lexicon>) -> Self {
        ErrorModelTool { spec, lexicon }
    }

    pub fn spec(&self) -> &ErrorModelToolSpec {
        &self.spec
    }

    fn rng_for(&self, request: &ToolRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.spec.seed.to_le_bytes());
        for part in [
            self.spec.inner.tool_id.as_str(),
            request.image_ref.as_str(),
            &normalize_prompt(request.query_text()),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Whether this request's response gets corrupted.
    pub fn corrupts(&self, request: &ToolRequest) -> bool {
        let p = self.spec.flip_probability;
        if p <= 0.0 {
            return false;
        }
        self.rng_for(request).random_bool(p)
    }

    pub fn respond(&self, request: &ToolRequest) -> String {
        let clean = self.spec.inner.lookup(&request.image_ref, request.query_text());
        if self.spec.flip_probability <= 0.0 {
            return clean.to_string();
        }
        let mut rng = self.rng_for(request);
        if !rng.random_bool(self.spec.flip_probability) {
            return clean.to_string();
        }
        let named = self.lexicon.mentioned_objects(request.query_text());
        let targets = if named.is_empty() {
            self.spec.targets.get(&request.image_ref).cloned().unwrap_or_default()
        } else {
            named
        };
        match self.spec.corruption_mode {
            CorruptionMode::AssertAbsentObject => self.assert_objects(clean, &targets, &mut rng),
            CorruptionMode::DenyPresentObject => self.deny_objects(clean, &targets),
            CorruptionMode::RandomObjectSwap => self.swap_object(clean, &mut rng),
        }
    }

    fn drop_mentions(&self, text: &str, object: &str) -> Vec<String> {
        split_sentences(text)
            .into_iter()
            .filter(|s| !self.lexicon.mentions_object(s, object))
            .map(str::to_string)
            .collect()
    }

    fn assert_objects(&self, text: &str, targets: &[String], rng: &mut ChaCha8Rng) -> String {
        if let Some(mut items) = parse_detections(text) {
            for t in targets {
                if !items.iter().any(|(label, _)| self.lexicon.normalize_name(label) == *t) {
                    items.push((t.clone(), 1));
                }
            }
            return super::format_detections(&items);
        }
        let mut out = text.to_string();
        for t in targets {
            let kept = self.drop_mentions(&out, t);
            let color = COLORS[rng.random_range(0..COLORS.len())];
            let location = LOCATIONS[rng.random_range(0..LOCATIONS.len())];
            let mut s = join_sentences(&kept);
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&format!("The {t} is {color}. The {t} is {location}."));
            out = s;
        }
        out
    }

    fn deny_objects(&self, text: &str, targets: &[String]) -> String {
        if let Some(mut items) = parse_detections(text) {
            items.retain(|(label, _)| !targets.contains(&self.lexicon.normalize_name(label)));
            return super::format_detections(&items);
        }
        let mut out = text.to_string();
        for t in targets {
            let kept = self.drop_mentions(&out, t);
            let mut s = join_sentences(&kept);
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&format!("There is no {t} in the image."));
            out = s;
        }
        out
    }

    fn swap_object(&self, text: &str, rng: &mut ChaCha8Rng) -> String {
        let mentions = self.lexicon.mentions(text);
        if mentions.is_empty() {
            return text.to_string();
        }
        let victim = mentions[rng.random_range(0..mentions.len())].canonical.clone();
        let mentioned = self.lexicon.mentioned_objects(text);
        let pool: Vec<&String> = self.spec.swap_pool.iter().filter(|o| !mentioned.contains(o)).collect();
        if pool.is_empty() {
            return text.to_string();
        }
        let replacement = pool[rng.random_range(0..pool.len())];
        let mut out = String::with_capacity(text.len());
        let mut cursor = 0;
        for m in mentions.iter().filter(|m| m.canonical == victim) {
            out.push_str(&text[cursor..m.start]);
            out.push_str(replacement);
            cursor = m.end;
        }
        out.push_str(&text[cursor..]);
        out
    }
}

fn join_sentences(sentences: &[String]) -> String {
    sentences.iter().map(|s| format!("{s}.")).collect::<Vec<_>>().join(" ")
}

/// Parse `detected: a (1), b (2)` / `no objects detected`.
fn parse_detections(text: &str) -> Option<Vec<(String, u32)>> {
    let text = text.trim();
    if text == "no objects detected" {
        return Some(Vec::new());
    }
    let list = text.strip_prefix("detected:")?;
    list.split(',')
        .map(|item| {
            let item = item.trim();
            let (label, count) = item.rsplit_once(" (")?;
            let count = count.strip_suffix(')')?.parse().ok()?;
            Some((label.trim().to_string(), count))
        })
        .collect()
}

impl ToolBackend for ErrorModelTool {
    fn call(&self, request: &ToolRequest, _timeout: Duration) -> Result<String, ToolFailure> {
        Ok(self.respond(request))
    }
}
