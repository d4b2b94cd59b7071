//! Dataset loading and metric computation for existence QA, paired QA and
//! generative captioning evaluations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::DatasetError;
use crate::lexicon::Lexicon;
use crate::types::Answer;

pub const REPORT_VERSION: &str = "report_v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistenceSample {
    pub sample_id: String,
    pub image_ref: String,
    pub question: String,
    pub gold: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerativeSample {
    pub sample_id: String,
    pub image_ref: String,
    pub truth_objects: BTreeSet<String>,
    pub hallucination_targets: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    ExistenceQa,
    PairedQa,
    GenerativeAnn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Existence(Vec<ExistenceSample>),
    Generative(Vec<GenerativeSample>),
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn text_field(
    obj: &serde_json::Map<String, Value>,
    names: &[&str],
    line: usize,
) -> Result<String, DatasetError> {
    match field(obj, names) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(DatasetError::Format {
            line,
            message: format!("field `{}` must be a nonempty string", names[0]),
        }),
        None => Err(DatasetError::Format {
            line,
            message: format!("missing field `{}`", names.join("` / `")),
        }),
    }
}

fn parse_answer(raw: &str, line: usize) -> Result<Answer, DatasetError> {
    raw.parse().map_err(|_| DatasetError::Format {
        line,
        message: format!("label {raw:?} is not yes/no"),
    })
}

fn object_set(
    obj: &serde_json::Map<String, Value>,
    names: &[&str],
    line: usize,
    lexicon: &Lexicon,
) -> Result<BTreeSet<String>, DatasetError> {
    match field(obj, names) {
        None => Ok(BTreeSet::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str().map(|s| lexicon.normalize_name(s)).ok_or(DatasetError::Format {
                    line,
                    message: format!("`{}` must list strings", names[0]),
                })
            })
            .collect(),
        Some(_) => Err(DatasetError::Format {
            line,
            message: format!("`{}` must be a list", names[0]),
        }),
    }
}

/// Parse line-delimited JSON records. Blank lines are skipped; errors name
/// the 1-based line.
///
/// Existence records: `sample_id|question_id|id`, `image|image_ref`,
/// `question|text`, `label|gold|answer`, and `pair_id` for paired data.
/// Generative records: `sample_id|id`, `image|image_ref`,
/// `truth|truth_objects`, `hallucination|hallucination_targets`.
pub fn parse_dataset(text: &str, format: DatasetFormat, lexicon: &Lexicon) -> Result<Dataset, DatasetError> {
    let mut ids = BTreeSet::new();
    let mut existence = Vec::new();
    let mut generative = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Format {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(DatasetError::Format {
                line,
                message: "record is not an object".into(),
            });
        };
        let sample_id = text_field(&obj, &["sample_id", "question_id", "id"], line)?;
        if !ids.insert(sample_id.clone()) {
            return Err(DatasetError::DuplicateId(sample_id));
        }
        let image_ref = text_field(&obj, &["image", "image_ref"], line)?;
        match format {
            DatasetFormat::ExistenceQa | DatasetFormat::PairedQa => {
                let question = text_field(&obj, &["question", "text"], line)?;
                let gold = parse_answer(&text_field(&obj, &["label", "gold", "answer"], line)?, line)?;
                let pair_id = match format {
                    DatasetFormat::PairedQa => Some(text_field(&obj, &["pair_id"], line)?),
                    _ => None,
                };
                existence.push(ExistenceSample {
                    sample_id,
                    image_ref,
                    question,
                    gold,
                    pair_id,
                });
            }
            DatasetFormat::GenerativeAnn => {
                let truth_objects = object_set(&obj, &["truth", "truth_objects"], line, lexicon)?;
                let hallucination_targets = object_set(&obj, &["hallucination", "hallucination_targets"], line, lexicon)?;
                if let Some(both) = truth_objects.intersection(&hallucination_targets).next() {
                    return Err(DatasetError::Format {
                        line,
                        message: format!("`{both}` is both a truth object and a hallucination target"),
                    });
                }
                generative.push(GenerativeSample {
                    sample_id,
                    image_ref,
                    truth_objects,
                    hallucination_targets,
                });
            }
        }
    }
    if format == DatasetFormat::PairedQa {
        check_pairs(&existence)?;
    }
    Ok(match format {
        DatasetFormat::GenerativeAnn => Dataset::Generative(generative),
        _ => Dataset::Existence(existence),
    })
}

fn check_pairs(samples: &[ExistenceSample]) -> Result<(), DatasetError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        if let Some(p) = &s.pair_id {
            *counts.entry(p).or_default() += 1;
        }
    }
    match counts.into_iter().find(|(_, c)| *c != 2) {
        Some((pair_id, count)) => Err(DatasetError::Pairing {
            pair_id: pair_id.to_string(),
            count,
        }),
        None => Ok(()),
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat, lexicon: &Lexicon) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, format, lexicon)
}

/// Answers file: one `{"sample_id": .., "answer": "yes"|"no"}` or
/// `{"sample_id": .., "caption": ..}` record per line.
pub fn parse_answers(text: &str) -> Result<BTreeMap<String, String>, DatasetError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Format {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(DatasetError::Format {
                line,
                message: "record is not an object".into(),
            });
        };
        let id = text_field(&obj, &["sample_id", "question_id", "id"], line)?;
        let answer = match field(&obj, &["answer", "caption"]) {
            Some(Value::String(s)) => s.clone(),
            _ => {
                return Err(DatasetError::Format {
                    line,
                    message: "missing field `answer` / `caption`".into(),
                })
            }
        };
        if out.insert(id.clone(), answer).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pope,
    Mme,
    Amber,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pope" => Ok(Task::Pope),
            "mme" => Ok(Task::Mme),
            "amber" => Ok(Task::Amber),
            other => Err(format!("unknown task `{other}` (expected pope, mme or amber)")),
        }
    }
}

impl Task {
    pub fn dataset_format(self) -> DatasetFormat {
        match self {
            Task::Pope => DatasetFormat::ExistenceQa,
            Task::Mme => DatasetFormat::PairedQa,
            Task::Amber => DatasetFormat::GenerativeAnn,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, gold: Answer, answer: Answer) {
        match (gold, answer) {
            (Answer::Yes, Answer::Yes) => self.tp += 1,
            (Answer::No, Answer::Yes) => self.fp += 1,
            (Answer::No, Answer::No) => self.tn += 1,
            (Answer::Yes, Answer::No) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleRow {
    Existence {
        sample_id: String,
        gold: Answer,
        answer: Option<Answer>,
        correct: bool,
    },
    Generative {
        sample_id: String,
        mentioned: Vec<String>,
        chair: f64,
        hal: f64,
        cog: f64,
        /// Empty or missing caption.
        flagged: bool,
    },
}

/// Metric values are fractions in [0, 1], except MME `total`, which is on
/// the 0 to 200 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Confusion>,
    pub metrics: BTreeMap<String, f64>,
    pub scored: usize,
    pub unanswered: usize,
    pub per_sample: Vec<SampleRow>,
    pub notes: Vec<String>,
    pub fingerprint: BTreeMap<String, String>,
}

impl MetricReport {
    fn new(task: Task) -> Self {
        MetricReport {
            version: REPORT_VERSION.to_string(),
            task,
            counts: None,
            metrics: BTreeMap::new(),
            scored: 0,
            unanswered: 0,
            per_sample: Vec::new(),
            notes: Vec::new(),
            fingerprint: BTreeMap::new(),
        }
    }

    pub fn metric(&self, name: &str) -> f64 {
        self.metrics.get(name).copied().unwrap_or(f64::NAN)
    }

    /// Plain-text table with percentages (MME total as is).
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task      {:?}", self.task);
        let _ = writeln!(out, "scored    {}", self.scored);
        let _ = writeln!(out, "excluded  {}", self.unanswered);
        if let Some(c) = &self.counts {
            let _ = writeln!(out, "TP {}  FP {}  TN {}  FN {}", c.tp, c.fp, c.tn, c.fn_);
        }
        for (name, v) in &self.metrics {
            let shown = if name == "total" { *v } else { v * 100.0 };
            let _ = writeln!(out, "{name:<14}{shown:>8.2}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

fn sorted_by_id<T: Clone>(items: &[T], id: impl Fn(&T) -> &str) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| id(a).cmp(id(b)));
    v
}

/// Accuracy and F1 with "yes" as the positive class. Unanswered samples are
/// excluded and counted.
pub fn score_existence(samples: &[ExistenceSample], answers: &BTreeMap<String, Answer>) -> MetricReport {
    let mut report = MetricReport::new(Task::Pope);
    let mut c = Confusion::default();
    for s in sorted_by_id(samples, |s| &s.sample_id) {
        let answer = answers.get(&s.sample_id).copied();
        match answer {
            Some(a) => c.add(s.gold, a),
            None => report.unanswered += 1,
        }
        report.per_sample.push(SampleRow::Existence {
            correct: answer == Some(s.gold),
            sample_id: s.sample_id,
            gold: s.gold,
            answer,
        });
    }
    report.scored = c.total() as usize;
    report.metrics.insert("accuracy".into(), c.accuracy());
    report.metrics.insert("f1".into(), c.f1());
    report.counts = Some(c);
    if report.unanswered > 0 {
        log::warn!("{} sample(s) unanswered and excluded", report.unanswered);
    }
    report
}

/// Question accuracy, pair accuracy (both members right) and their sum on
/// the 0 to 200 scale. A pair with an unanswered member is excluded.
pub fn score_mme(samples: &[ExistenceSample], answers: &BTreeMap<String, Answer>) -> MetricReport {
    let mut report = score_existence(samples, answers);
    report.task = Task::Mme;
    let mut pairs: BTreeMap<&str, Vec<Option<bool>>> = BTreeMap::new();
    for s in samples {
        let key = s.pair_id.as_deref().unwrap_or(&s.sample_id);
        pairs
            .entry(key)
            .or_default()
            .push(answers.get(&s.sample_id).map(|a| *a == s.gold));
    }
    let (mut scored_pairs, mut both) = (0u64, 0u64);
    for members in pairs.values() {
        if members.iter().any(Option::is_none) {
            continue;
        }
        scored_pairs += 1;
        both += members.iter().all(|m| *m == Some(true)) as u64;
    }
    let acc = report.metric("accuracy");
    let acc_plus = if scored_pairs == 0 { 0.0 } else { both as f64 / scored_pairs as f64 };
    report.metrics.remove("f1");
    report.metrics.insert("accuracy_plus".into(), acc_plus);
    report.metrics.insert("total".into(), 100.0 * acc + 100.0 * acc_plus);
    report
}

/// Per-caption CHAIR, Hal and Cog from lexicon-matched mentions, averaged
/// over samples. Missing captions are excluded; empty ones score zero and
/// are flagged.
pub fn score_generative(
    samples: &[GenerativeSample],
    responses: &BTreeMap<String, String>,
    lexicon: &Lexicon,
) -> MetricReport {
    let mut report = MetricReport::new(Task::Amber);
    report
        .notes
        .push("chair, hal and cog are means of per-caption values".into());
    let (mut chair_sum, mut hal_sum, mut cog_sum) = (0.0, 0.0, 0.0);
    for s in sorted_by_id(samples, |s| &s.sample_id) {
        let Some(caption) = responses.get(&s.sample_id) else {
            report.unanswered += 1;
            continue;
        };
        let mentioned: BTreeSet<String> = lexicon.mentioned_objects(caption).into_iter().collect();
        let (chair, cog) = if mentioned.is_empty() {
            (0.0, 0.0)
        } else {
            let n = mentioned.len() as f64;
            (
                mentioned.difference(&s.truth_objects).count() as f64 / n,
                mentioned.intersection(&s.hallucination_targets).count() as f64 / n,
            )
        };
        let hal = if chair > 0.0 { 1.0 } else { 0.0 };
        chair_sum += chair;
        hal_sum += hal;
        cog_sum += cog;
        report.scored += 1;
        report.per_sample.push(SampleRow::Generative {
            sample_id: s.sample_id,
            mentioned: mentioned.into_iter().collect(),
            chair,
            hal,
            cog,
            flagged: caption.trim().is_empty(),
        });
    }
    let n = report.scored.max(1) as f64;
    let scale = if report.scored == 0 { 0.0 } else { 1.0 / n };
    report.metrics.insert("chair".into(), chair_sum * scale);
    report.metrics.insert("hal".into(), hal_sum * scale);
    report.metrics.insert("cog".into(), cog_sum * scale);
    report
}
