//! Synthetic scenes, truthful scripted tools derived from them, and seeded
//! parameter sweeps over ensemble size, query budget and iteration cap.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::ExistenceSample;
use crate::config::{ConfigFile, ErrorModelEntry, ToolEntry};
use crate::engine::Engine;
use crate::error::ConfigError;
use crate::exec::Execution;
use crate::lexicon::Lexicon;
use crate::reasoner::ScriptedReasoner;
use crate::text::{article, capitalize};
use crate::tools::{
    format_detections, CorruptionMode, ErrorModelTool, ErrorModelToolSpec, ScriptedTool, ScriptedToolSpec,
    ToolBackend, ToolFailure, ToolRegistry, ToolRequest,
};
use crate::types::{
    Answer, Capability, EngineConfig, Endpoint, EvidentialQuery, ToolDescriptor, ToolErrorKind, DEFAULT_ATTRIBUTE_PROMPT,
    DEFAULT_CAPTION_PROMPT,
};

pub const COLORS: [&str; 10] = [
    "red", "blue", "green", "yellow", "black", "white", "brown", "gray", "purple", "pink",
];

pub const LOCATIONS: [&str; 7] = [
    "on the left side",
    "on the right side",
    "in the center",
    "in the foreground",
    "in the background",
    "near the top edge",
    "near the bottom edge",
];

/// Simulated tools in roster order. A sweep cell with ensemble size `m`
/// uses the first `m`; the first one is the plug-in model.
pub const ROSTER: [(&str, Capability, u8); 5] = [
    ("lvlm", Capability::Caption, 2),
    ("detector", Capability::Detect, 0),
    ("vqa-a", Capability::Vqa, 1),
    ("vqa-b", Capability::Vqa, 1),
    ("caption-b", Capability::Caption, 2),
];

const NO_ANSWER: &str = "I cannot answer that from this image.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub color: String,
    pub count: u32,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub image_ref: String,
    pub present: Vec<SceneObject>,
    pub distractors: Vec<String>,
}

impl SyntheticScene {
    pub fn is_present(&self, name: &str) -> bool {
        self.present.iter().any(|o| o.name == name)
    }

    fn noun(&self, o: &SceneObject, lexicon: &Lexicon) -> String {
        if o.count > 1 {
            lexicon.pluralize_phrase(&o.name)
        } else {
            o.name.clone()
        }
    }

    pub fn caption(&self, lexicon: &Lexicon, reverse: bool) -> String {
        let mut sentences: Vec<String> = self
            .present
            .iter()
            .map(|o| {
                if o.count > 1 {
                    format!(
                        "There are {} {} {} {}.",
                        number_word(o.count),
                        o.color,
                        self.noun(o, lexicon),
                        o.location
                    )
                } else {
                    format!("{} {} {} is {}.", capitalize(article(&o.color)), o.color, o.name, o.location)
                }
            })
            .collect();
        if reverse {
            sentences.reverse();
        }
        sentences.join(" ")
    }

    pub fn describe(&self, name: &str, lexicon: &Lexicon) -> String {
        match self.present.iter().find(|o| o.name == name) {
            Some(o) => {
                let (noun, be) = if o.count > 1 {
                    (self.noun(o, lexicon), "are")
                } else {
                    (o.name.clone(), "is")
                };
                format!("The {noun} {be} {}. The {noun} {be} {}.", o.color, o.location)
            }
            None => format!("There is no {name} in the image."),
        }
    }

    fn list_answer(&self, attribute: &str, matches: Vec<&str>) -> String {
        if matches.is_empty() {
            format!("There are no objects that {attribute} in the image.")
        } else {
            format!("The objects that {attribute} are: {}.", matches.join(", "))
        }
    }

    pub fn detections(&self) -> String {
        let items: Vec<(String, u32)> = self.present.iter().map(|o| (o.name.clone(), o.count)).collect();
        format_detections(&items)
    }
}

fn number_word(n: u32) -> String {
    match n {
        2 => "two".into(),
        3 => "three".into(),
        4 => "four".into(),
        n => n.to_string(),
    }
}

pub fn existence_question(object: &str) -> String {
    format!("Is there {} {object} in the image?", article(object))
}

/// Scenes, balanced questions, and truthful fixtures for every roster tool.
#[derive(Debug, Clone)]
pub struct Suite {
    pub seed: u64,
    pub scenes: Vec<SyntheticScene>,
    pub samples: Vec<ExistenceSample>,
    /// One fixture per roster tool, in roster order.
    pub fixtures: Vec<ScriptedToolSpec>,
}

impl Suite {
    pub fn scene(&self, image_ref: &str) -> Option<&SyntheticScene> {
        self.scenes.iter().find(|s| s.image_ref == image_ref)
    }
}

pub fn generate_suite(n_scenes: usize, q_per_scene: usize, seed: u64, lexicon: &Lexicon) -> Suite {
    assert!(n_scenes >= 1, "a suite needs at least one scene");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = lexicon.classes().to_vec();
    let mut scenes = Vec::with_capacity(n_scenes);
    let mut samples = Vec::new();
    for i in 0..n_scenes {
        let yes = q_per_scene / 2 + (q_per_scene % 2 == 1 && i % 2 == 0) as usize;
        let no = q_per_scene - yes;
        let n_present = yes.max(2) + rng.random_range(0..2);
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng);
        let present_names: Vec<String> = shuffled[..n_present].to_vec();
        let present: Vec<SceneObject> = present_names
            .iter()
            .map(|name| SceneObject {
                name: name.clone(),
                color: COLORS.choose(&mut rng).unwrap().to_string(),
                count: if rng.random_bool(0.3) { rng.random_range(2..=3) } else { 1 },
                location: LOCATIONS.choose(&mut rng).unwrap().to_string(),
            })
            .collect();
        // absent objects must not be suggested by what is present
        let distractors: Vec<String> = shuffled[n_present..]
            .iter()
            .filter(|d| !lexicon.implies(&present_names, d))
            .take(no + rng.random_range(0..2))
            .cloned()
            .collect();
        let scene = SyntheticScene {
            scene_id: format!("scene-{i:04}"),
            image_ref: format!("sim://scene-{i:04}"),
            present,
            distractors,
        };
        let mut asked: Vec<(String, Answer)> = Vec::new();
        asked.extend(scene.present.iter().take(yes).map(|o| (o.name.clone(), Answer::Yes)));
        asked.extend(scene.distractors.iter().take(no).map(|d| (d.clone(), Answer::No)));
        asked.shuffle(&mut rng);
        for (j, (object, gold)) in asked.into_iter().enumerate() {
            samples.push(ExistenceSample {
                sample_id: format!("{}-q{j}", scene.scene_id),
                image_ref: scene.image_ref.clone(),
                question: existence_question(&object),
                gold,
                pair_id: None,
            });
        }
        scenes.push(scene);
    }
    let fixtures = ROSTER
        .iter()
        .map(|(id, cap, _)| truthful_fixture(id, *cap, &scenes, lexicon))
        .collect();
    Suite {
        seed,
        scenes,
        samples,
        fixtures,
    }
}

fn truthful_fixture(tool_id: &str, capability: Capability, scenes: &[SyntheticScene], lexicon: &Lexicon) -> ScriptedToolSpec {
    if capability == Capability::Detect {
        let mut spec = ScriptedToolSpec::new(tool_id, capability, "no objects detected");
        for s in scenes {
            spec.insert(&s.image_ref, "", s.detections());
        }
        return spec;
    }
    let mut spec = ScriptedToolSpec::new(tool_id, capability, NO_ANSWER);
    for (k, s) in scenes.iter().enumerate() {
        let img = s.image_ref.as_str();
        // the second captioner words its caption differently
        spec.insert(img, DEFAULT_CAPTION_PROMPT, s.caption(lexicon, tool_id != ROSTER[0].0 && k % 2 == 0));
        let objects = s.present.iter().map(|o| o.name.clone()).chain(s.distractors.iter().cloned());
        for name in objects {
            spec.insert(img, &DEFAULT_ATTRIBUTE_PROMPT.replace("{object}", &name), s.describe(&name, lexicon));
            let answer = if s.is_present(&name) {
                format!("Yes, there is {} {name} in the image.", article(&name))
            } else {
                format!("No, there is no {name} in the image.")
            };
            spec.insert(img, &existence_question(&name), answer);
        }
        for c in COLORS {
            let attribute = format!("are {c}");
            let hits = s.present.iter().filter(|o| o.color == c).map(|o| o.name.as_str()).collect();
            spec.insert(img, &EvidentialQuery::render(&attribute), s.list_answer(&attribute, hits));
        }
        for l in LOCATIONS {
            let attribute = format!("are {l}");
            let hits = s.present.iter().filter(|o| o.location == l).map(|o| o.name.as_str()).collect();
            spec.insert(img, &EvidentialQuery::render(&attribute), s.list_answer(&attribute, hits));
        }
    }
    spec
}

pub fn roster_descriptors(m: usize) -> Vec<ToolDescriptor> {
    ROSTER
        .iter()
        .take(m)
        .map(|(id, cap, rank)| ToolDescriptor {
            id: id.to_string(),
            capability: *cap,
            trust_rank: *rank,
            endpoint: Endpoint::Scripted {
                source: format!("sim:{id}"),
            },
            display_name: format!("simulated {id}"),
        })
        .collect()
}

/// One roster tool replaced by a corrupted copy of itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub tool: usize,
    pub mode: CorruptionMode,
    pub flip_probability: f64,
    pub seed: u64,
}

pub fn corrupted_spec(suite: &Suite, c: &Corruption) -> ErrorModelToolSpec {
    let mut spec = ErrorModelToolSpec::new(suite.fixtures[c.tool].clone(), c.flip_probability, c.mode, c.seed);
    for s in &suite.scenes {
        let targets = match c.mode {
            CorruptionMode::DenyPresentObject => s.present.iter().map(|o| o.name.clone()).collect(),
            _ => s.distractors.clone(),
        };
        spec.targets.insert(s.image_ref.clone(), targets);
    }
    let mut pool: Vec<String> = suite.scenes.iter().flat_map(|s| s.distractors.iter().cloned()).collect();
    pool.sort();
    pool.dedup();
    spec.swap_pool = pool;
    spec
}

pub fn build_registry(
    suite: &Suite,
    m: usize,
    corruption: Option<&Corruption>,
    lexicon: &Arc<Lexicon>,
) -> (Vec<ToolDescriptor>, ToolRegistry) {
    let tools = roster_descriptors(m);
    let mut registry = ToolRegistry::new();
    for (i, d) in tools.iter().enumerate() {
        let backend: Arc<dyn ToolBackend> = match corruption {
            Some(c) if c.tool == i => Arc::new(ErrorModelTool::new(corrupted_spec(suite, c), lexicon.clone())),
            _ => Arc::new(ScriptedTool::new(suite.fixtures[i].clone())),
        };
        registry.register(d.clone(), backend).expect("roster ids are unique");
    }
    (tools, registry)
}

/// Engine config used for simulated runs: VQA tools also answer the user
/// question during the bootstrap.
pub fn sim_config(tools: Vec<ToolDescriptor>, n: u32, k: u32, seed: u64) -> EngineConfig {
    let mut config = EngineConfig {
        k,
        n,
        tools,
        seed: Some(seed),
        timeout_ms: 5_000,
        retries: 0,
        ..EngineConfig::default()
    };
    config.initial_query_plan.insert(Capability::Vqa, "{question}".into());
    config
}

pub fn sim_engine(
    suite: &Suite,
    m: usize,
    n: u32,
    k: u32,
    corruption: Option<&Corruption>,
    lexicon: &Arc<Lexicon>,
) -> Engine {
    let (tools, registry) = build_registry(suite, m, corruption, lexicon);
    let reasoner = Arc::new(ScriptedReasoner::new(lexicon.clone()));
    Engine::new(sim_config(tools, n, k, suite.seed), registry, reasoner, lexicon.clone())
        .expect("simulated config is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub questions: usize,
    pub correct: usize,
    pub errors: usize,
    pub total_iterations: usize,
    pub total_responses: usize,
    pub max_responses: usize,
}

impl SuiteRun {
    pub fn accuracy(&self) -> f64 {
        let answered = self.questions - self.errors;
        if answered == 0 {
            0.0
        } else {
            self.correct as f64 / answered as f64
        }
    }

    pub fn mean_iterations(&self) -> f64 {
        self.total_iterations as f64 / self.questions.max(1) as f64
    }

    pub fn mean_responses(&self) -> f64 {
        self.total_responses as f64 / self.questions.max(1) as f64
    }
}

pub fn run_suite(engine: &Engine, suite: &Suite, exec: Execution) -> SuiteRun {
    let results = exec.map(&suite.samples, |s| {
        engine
            .run_existence_query(&s.sample_id, &s.image_ref, &s.question)
            .map(|(answer, trace)| (answer == s.gold, trace.iterations.len(), trace.response_count()))
    });
    let mut run = SuiteRun {
        questions: suite.samples.len(),
        correct: 0,
        errors: 0,
        total_iterations: 0,
        total_responses: 0,
        max_responses: 0,
    };
    for r in results {
        match r {
            Ok((ok, iters, responses)) => {
                run.correct += ok as usize;
                run.total_iterations += iters;
                run.total_responses += responses;
                run.max_responses = run.max_responses.max(responses);
            }
            Err(e) => {
                log::warn!("simulated sample failed: {e}");
                run.errors += 1;
            }
        }
    }
    run
}

/// Accuracy of one tool answering alone.
pub fn single_tool_accuracy(engine: &Engine, suite: &Suite, tool_id: &str, exec: Execution) -> f64 {
    let correct: usize = exec
        .map(&suite.samples, |s| {
            engine
                .single_tool_answer(tool_id, &s.image_ref, &s.question)
                .map(|a| (a == s.gold) as usize)
                .unwrap_or(0)
        })
        .into_iter()
        .sum();
    correct as f64 / suite.samples.len().max(1) as f64
}

/// Writes `dataset.jsonl`, one fixture per tool under `fixtures/`, and a
/// `config.toml` that rebuilds the same engine as [`sim_engine`].
pub fn export_suite(
    suite: &Suite,
    dir: &Path,
    m: usize,
    n: u32,
    k: u32,
    corruption: Option<&Corruption>,
) -> Result<Vec<PathBuf>, ConfigError> {
    let io = |path: &Path, source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    };
    let fixtures_dir = dir.join("fixtures");
    std::fs::create_dir_all(&fixtures_dir).map_err(|e| io(&fixtures_dir, e))?;
    let mut written = Vec::new();

    let dataset = dir.join("dataset.jsonl");
    let mut lines = String::new();
    for s in &suite.samples {
        lines.push_str(&serde_json::to_string(s).expect("samples serialize"));
        lines.push('\n');
    }
    std::fs::write(&dataset, lines).map_err(|e| io(&dataset, e))?;
    written.push(dataset);

    let config = sim_config(roster_descriptors(m), n, k, suite.seed);
    let mut tools = Vec::new();
    for (i, d) in config.tools.iter().enumerate() {
        let rel = PathBuf::from("fixtures").join(format!("{}.json", d.id));
        let path = dir.join(&rel);
        std::fs::write(&path, suite.fixtures[i].to_json()).map_err(|e| io(&path, e))?;
        written.push(path);
        let error_model = corruption.filter(|c| c.tool == i).map(|c| {
            let spec = corrupted_spec(suite, c);
            ErrorModelEntry {
                flip_probability: spec.flip_probability,
                corruption_mode: spec.corruption_mode,
                seed: spec.seed,
                targets: spec.targets,
                swap_pool: spec.swap_pool,
            }
        });
        tools.push(ToolEntry {
            id: d.id.clone(),
            capability: d.capability,
            trust_rank: d.trust_rank,
            display_name: Some(d.display_name.clone()),
            url: None,
            adapter: Default::default(),
            model: None,
            api_key_env: None,
            fixture: Some(rel),
            error_model,
        });
    }
    let file = ConfigFile {
        k,
        n,
        unclear_policy: config.unclear_policy,
        timeout_ms: config.timeout_ms,
        retries: config.retries,
        seed: config.seed,
        plug_in_tool: None,
        attribute_prompt: config.attribute_prompt.clone(),
        fallback_weighting: config.fallback_weighting,
        rules: "default".into(),
        lexicon: None,
        workers: 0,
        reasoner: config.reasoner_endpoint.clone(),
        initial_query_plan: Some(config.initial_query_plan.clone()),
        registry: None,
        tools,
    };
    let path = dir.join("config.toml");
    let text = toml::to_string(&file).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub const CHAOS_IMAGE: &str = "chaos://img";
const CHAOS_TARGETS: [&str; 5] = ["dog", "person", "cat", "bicycle", "umbrella"];

/// Tool whose reply to each prompt is a fixed pseudo-random pick among
/// affirming, denying, hedged, unrelated, attribute-rich, empty and failing
/// behaviors. Used for fuzzing the loop.
pub struct ChaosTool {
    pub seed: u64,
    pub target: String,
    pub capability: Capability,
}

impl ToolBackend for ChaosTool {
    fn call(&self, request: &ToolRequest, _timeout: Duration) -> Result<String, ToolFailure> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(request.query_text().as_bytes());
        let pick = u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"));
        let t = &self.target;
        if self.capability == Capability::Detect {
            return Ok(match pick % 4 {
                0 => format!("detected: {t} (1)"),
                1 => "no objects detected".into(),
                2 => "detected: car (2)".into(),
                _ => return Err(ToolFailure::new(ToolErrorKind::Backend, "detector down")),
            });
        }
        Ok(match pick % 8 {
            0 => format!("A {t} is clearly visible."),
            1 => format!("There is no {t} here."),
            2 => format!("It might be a {t}, hard to say."),
            3 => "A car parked on a road.".into(),
            4 => format!("The {t} is red. The {t} is on the left side. The {t} has a long tail."),
            5 => format!("The {t} is sitting near a wooden fence."),
            6 => String::new(),
            _ => return Err(ToolFailure::new(ToolErrorKind::Connection, "refused")),
        })
    }
}

/// A seeded random ensemble of one to five chaos tools with random K, N and
/// retry budget, plus the existence question to ask about [`CHAOS_IMAGE`].
pub fn chaos_engine(seed: u64, lexicon: &Arc<Lexicon>) -> (Engine, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = CHAOS_TARGETS[rng.random_range(0..CHAOS_TARGETS.len())].to_string();
    let m = rng.random_range(1..=5usize);
    let mut config = EngineConfig {
        k: rng.random_range(1..=4),
        n: rng.random_range(1..=5),
        retries: rng.random_range(0..=2),
        seed: Some(seed),
        ..EngineConfig::default()
    };
    if rng.random_bool(0.5) {
        config.initial_query_plan.insert(Capability::Vqa, "{question}".into());
    }
    let mut registry = ToolRegistry::new();
    for i in 0..m {
        let capability = if i == 0 {
            Capability::Caption
        } else {
            [Capability::Caption, Capability::Detect, Capability::Vqa][rng.random_range(0..3)]
        };
        let trust_rank = match capability {
            Capability::Detect => 0,
            Capability::Vqa => 1,
            Capability::Caption => 2,
        };
        let d = ToolDescriptor {
            id: format!("t{i}"),
            capability,
            trust_rank,
            endpoint: Endpoint::Scripted { source: "chaos".into() },
            display_name: format!("chaos {i}"),
        };
        let backend = Arc::new(ChaosTool { seed: rng.random(), target: target.clone(), capability });
        registry.register(d.clone(), backend).expect("chaos ids are unique");
        config.tools.push(d);
    }
    let reasoner = Arc::new(ScriptedReasoner::new(lexicon.clone()));
    let engine = Engine::new(config, registry, reasoner, lexicon.clone()).expect("chaos config is valid");
    (engine, format!("Is there a {target} in the image?"))
}

/// Seed-averaged accuracy at one K with one roster tool fully corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub k: u32,
    pub engine_accuracy: f64,
    pub single_tool_accuracy: f64,
}

/// Runs the first `m` roster tools with tool `tool` corrupted at flip 1.0,
/// for every K, averaging over seeds.
pub fn robustness_curve(
    m: usize,
    tool: usize,
    mode: CorruptionMode,
    ks: &[u32],
    seeds: &[u64],
    lexicon: &Arc<Lexicon>,
    exec: Execution,
) -> Vec<RobustnessPoint> {
    let suites: Vec<Suite> = seeds.iter().map(|&s| generate_suite(50, 4, s, lexicon)).collect();
    ks.iter()
        .map(|&k| {
            let (mut engine_sum, mut single_sum) = (0.0, 0.0);
            for suite in &suites {
                let c = Corruption { tool, mode, flip_probability: 1.0, seed: suite.seed };
                let engine = sim_engine(suite, m, 5, k, Some(&c), lexicon).with_execution(Execution::Sequential);
                engine_sum += run_suite(&engine, suite, exec).accuracy();
                single_sum += single_tool_accuracy(&engine, suite, ROSTER[tool].0, exec);
            }
            let n = suites.len().max(1) as f64;
            RobustnessPoint {
                k,
                engine_accuracy: engine_sum / n,
                single_tool_accuracy: single_sum / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub ms: Vec<usize>,
    pub ns: Vec<u32>,
    pub ks: Vec<u32>,
    pub flips: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_scenes: usize,
    pub q_per_scene: usize,
    /// Roster index of the tool that gets corrupted.
    pub corrupted_tool: usize,
    pub corruption_mode: CorruptionMode,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ms: vec![1, 2, 3, 4, 5],
            ns: vec![1, 3, 5],
            ks: vec![1, 2, 3, 4],
            flips: vec![0.0, 0.5, 1.0],
            seeds: vec![1, 2, 3, 4, 5],
            n_scenes: 50,
            q_per_scene: 4,
            corrupted_tool: 0,
            corruption_mode: CorruptionMode::AssertAbsentObject,
        }
    }
}

pub const SWEEP_COLUMNS: [&str; 12] = [
    "m",
    "n",
    "k",
    "flip",
    "seed",
    "questions",
    "accuracy",
    "baseline_accuracy",
    "mean_iterations",
    "mean_responses",
    "max_responses",
    "errors",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub n: u32,
    pub k: u32,
    pub flip: f64,
    pub seed: u64,
    pub questions: usize,
    pub accuracy: f64,
    /// Plug-in model answering alone in the same cell.
    pub baseline_accuracy: f64,
    pub mean_iterations: f64,
    pub mean_responses: f64,
    pub max_responses: usize,
    pub errors: usize,
}

pub fn run_cell(suite: &Suite, m: usize, n: u32, k: u32, flip: f64, spec: &SweepSpec, lexicon: &Arc<Lexicon>) -> SweepRow {
    let corruption = (spec.corrupted_tool < m && flip > 0.0).then_some(Corruption {
        tool: spec.corrupted_tool,
        mode: spec.corruption_mode,
        flip_probability: flip,
        seed: suite.seed,
    });
    let engine = sim_engine(suite, m, n, k, corruption.as_ref(), lexicon).with_execution(Execution::Sequential);
    let run = run_suite(&engine, suite, Execution::Sequential);
    let baseline = single_tool_accuracy(&engine, suite, ROSTER[0].0, Execution::Sequential);
    SweepRow {
        m,
        n,
        k,
        flip,
        seed: suite.seed,
        questions: run.questions,
        accuracy: run.accuracy(),
        baseline_accuracy: baseline,
        mean_iterations: run.mean_iterations(),
        mean_responses: run.mean_responses(),
        max_responses: run.max_responses,
        errors: run.errors,
    }
}

/// Every grid cell for every seed. Cells run under `exec`; rows come back
/// sorted by (m, n, k, flip, seed).
pub fn sweep(spec: &SweepSpec, lexicon: &Arc<Lexicon>, exec: Execution) -> Vec<SweepRow> {
    let suites: BTreeMap<u64, Suite> = spec
        .seeds
        .iter()
        .map(|&s| (s, generate_suite(spec.n_scenes, spec.q_per_scene, s, lexicon)))
        .collect();
    let mut cells = Vec::new();
    for &m in &spec.ms {
        for &n in &spec.ns {
            for &k in &spec.ks {
                for &flip in &spec.flips {
                    for &seed in &spec.seeds {
                        cells.push((m, n, k, flip, seed));
                    }
                }
            }
        }
    }
    let mut rows = exec.map(&cells, |&(m, n, k, flip, seed)| run_cell(&suites[&seed], m, n, k, flip, spec, lexicon));
    rows.sort_by(|a, b| {
        (a.m, a.n, a.k, a.seed)
            .cmp(&(b.m, b.n, b.k, b.seed))
            .then(a.flip.total_cmp(&b.flip))
    });
    rows
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.n.to_string(),
            r.k.to_string(),
            format!("{:.4}", r.flip),
            r.seed.to_string(),
            r.questions.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.baseline_accuracy),
            format!("{:.6}", r.mean_iterations),
            format!("{:.6}", r.mean_responses),
            r.max_responses.to_string(),
            r.errors.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
