use std::collections::{BTreeMap, BTreeSet};

use crosscheck_core::bench::{score_existence, score_generative, score_mme, ExistenceSample, GenerativeSample};
use crosscheck_core::fusion::{fuse, RuleSet};
use crosscheck_core::lexicon::Lexicon;
use crosscheck_core::reasoner::{render, TemplateId};
use crosscheck_core::types::{Answer, Capability, Endpoint, PerResponseVerdict, ToolDescriptor, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-12;

// ---- fusion ----

fn tool(id: &str, capability: Capability) -> ToolDescriptor {
    ToolDescriptor {
        id: id.into(),
        capability,
        trust_rank: 0,
        endpoint: Endpoint::Scripted { source: "oracle".into() },
        display_name: id.into(),
    }
}

fn verdict(tool_id: &str, v: Verdict) -> PerResponseVerdict {
    PerResponseVerdict { tool_id: tool_id.into(), query_text: String::new(), verdict: v, reasoning: "r".into() }
}

/// Detector yes wins; detector no with every text tool no gives no;
/// everything else is unclear.
fn table_oracle(det: Verdict, text: &[Verdict]) -> Verdict {
    if det == Verdict::Yes {
        Verdict::Yes
    } else if det == Verdict::No && text.iter().all(|v| *v == Verdict::No) {
        Verdict::No
    } else {
        Verdict::Unclear
    }
}

#[test]
fn fusion_matches_rule_table_on_all_pairs_and_triples() {
    let rules = RuleSet::default();
    let tools = vec![tool("det", Capability::Detect), tool("cap", Capability::Caption), tool("vqa", Capability::Vqa)];
    let mut checked = 0;
    for d in Verdict::ALL {
        for c in Verdict::ALL {
            let pool = [verdict("det", d), verdict("cap", c)];
            assert_eq!(fuse(&pool, &tools, &rules).unwrap(), table_oracle(d, &[c]), "({d}, {c})");
            checked += 1;
            for v in Verdict::ALL {
                let pool = [verdict("det", d), verdict("cap", c), verdict("vqa", v)];
                assert_eq!(fuse(&pool, &tools, &rules).unwrap(), table_oracle(d, &[c, v]), "({d}, {c}, {v})");
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 9 + 27);
}

// ---- metrics ----

fn random_existence(rng: &mut ChaCha8Rng, paired: bool) -> (Vec<ExistenceSample>, BTreeMap<String, Answer>) {
    let n = rng.random_range(1..40usize);
    let mut samples = Vec::new();
    let mut answers = BTreeMap::new();
    for i in 0..n {
        let members = if paired { 2 } else { 1 };
        for j in 0..members {
            let id = format!("s{i}_{j}");
            let gold = if paired { [Answer::Yes, Answer::No][j] } else if rng.random_bool(0.5) { Answer::Yes } else { Answer::No };
            samples.push(ExistenceSample {
                sample_id: id.clone(),
                image_ref: format!("img{i}"),
                question: "Is there a dog in the image?".into(),
                gold,
                pair_id: paired.then(|| format!("p{i}")),
            });
            match rng.random_range(0..10) {
                0 => {}
                1..=5 => {
                    answers.insert(id, gold);
                }
                _ => {
                    answers.insert(id, if rng.random_bool(0.5) { Answer::Yes } else { Answer::No });
                }
            }
        }
    }
    // sample order must not matter
    for i in (1..samples.len()).rev() {
        samples.swap(i, rng.random_range(0..=i));
    }
    (samples, answers)
}

fn oracle_acc_f1(samples: &[ExistenceSample], answers: &BTreeMap<String, Answer>) -> (f64, f64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        match (s.gold, answers.get(&s.sample_id)) {
            (Answer::Yes, Some(Answer::Yes)) => tp += 1.0,
            (Answer::No, Some(Answer::Yes)) => fp += 1.0,
            (Answer::No, Some(Answer::No)) => tn += 1.0,
            (Answer::Yes, Some(Answer::No)) => fn_ += 1.0,
            (_, None) => {}
        }
    }
    let total: f64 = tp + fp + tn + fn_;
    let acc = if total == 0.0 { 0.0 } else { (tp + tn) / total };
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (acc, f1)
}

fn oracle_acc_plus(samples: &[ExistenceSample], answers: &BTreeMap<String, Answer>) -> f64 {
    let pairs: BTreeSet<&str> = samples.iter().map(|s| s.pair_id.as_deref().unwrap()).collect();
    let (mut scored, mut both) = (0.0, 0.0);
    for p in pairs {
        let members: Vec<&ExistenceSample> = samples.iter().filter(|s| s.pair_id.as_deref() == Some(p)).collect();
        if members.iter().all(|s| answers.contains_key(&s.sample_id)) {
            scored += 1.0;
            if members.iter().all(|s| answers[&s.sample_id] == s.gold) {
                both += 1.0;
            }
        }
    }
    if scored == 0.0 { 0.0 } else { both / scored }
}

#[test]
fn existence_metrics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (samples, answers) = random_existence(&mut rng, false);
        let (acc, f1) = oracle_acc_f1(&samples, &answers);
        let r = score_existence(&samples, &answers);
        assert!((r.metric("accuracy") - acc).abs() < EPS);
        assert!((r.metric("f1") - f1).abs() < EPS);
        assert_eq!(r.scored + r.unanswered, samples.len());
    }
}

#[test]
fn mme_metrics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let (samples, answers) = random_existence(&mut rng, true);
        let (acc, _) = oracle_acc_f1(&samples, &answers);
        let acc_plus = oracle_acc_plus(&samples, &answers);
        let r = score_mme(&samples, &answers);
        assert!((r.metric("accuracy") - acc).abs() < EPS);
        assert!((r.metric("accuracy_plus") - acc_plus).abs() < EPS);
        assert!((r.metric("total") - (100.0 * acc + 100.0 * acc_plus)).abs() < 1e-9);
    }
}

/// Words whose lexicon match is exactly themselves.
const WORDS: [&str; 10] = ["dog", "cat", "car", "bench", "person", "frisbee", "chair", "bottle", "cup", "horse"];

#[test]
fn generative_metrics_match_oracle() {
    let lexicon = Lexicon::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let n = rng.random_range(1..20usize);
        let mut samples = Vec::new();
        let mut captions = BTreeMap::new();
        let (mut chair, mut hal, mut cog) = (0.0, 0.0, 0.0);
        let mut scored = 0.0;
        for i in 0..n {
            let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<&str> { WORDS.iter().copied().filter(|_| rng.random_bool(0.3)).collect() };
            let mentioned = pick(&mut rng);
            let truth = pick(&mut rng);
            let targets: BTreeSet<&str> = pick(&mut rng).difference(&truth).copied().collect();
            let id = format!("g{i}");
            samples.push(GenerativeSample {
                sample_id: id.clone(),
                image_ref: format!("img{i}"),
                truth_objects: truth.iter().map(|s| s.to_string()).collect(),
                hallucination_targets: targets.iter().map(|s| s.to_string()).collect(),
            });
            if rng.random_bool(0.1) {
                continue;
            }
            let caption: Vec<String> = mentioned.iter().map(|w| format!("There is a {w}.")).collect();
            captions.insert(id, caption.join(" "));
            scored += 1.0;
            if !mentioned.is_empty() {
                let m = mentioned.len() as f64;
                let c = mentioned.difference(&truth).count() as f64 / m;
                chair += c;
                hal += if c > 0.0 { 1.0 } else { 0.0 };
                cog += mentioned.intersection(&targets).count() as f64 / m;
            }
        }
        let r = score_generative(&samples, &captions, &lexicon);
        // no scored captions means every mean is zero
        let d = if scored == 0.0 { f64::INFINITY } else { scored };
        assert!((r.metric("chair") - chair / d).abs() < EPS);
        assert!((r.metric("hal") - hal / d).abs() < EPS);
        assert!((r.metric("cog") - cog / d).abs() < EPS);
    }
}

#[test]
fn generative_worked_example() {
    let lexicon = Lexicon::bundled();
    let samples = vec![GenerativeSample {
        sample_id: "a".into(),
        image_ref: "img".into(),
        truth_objects: ["dog", "frisbee"].iter().map(|s| s.to_string()).collect(),
        hallucination_targets: ["person"].iter().map(|s| s.to_string()).collect(),
    }];
    let captions = BTreeMap::from([("a".to_string(), "A dog catches a frisbee thrown by a person.".to_string())]);
    let r = score_generative(&samples, &captions, &lexicon);
    assert_eq!(r.metric("chair"), 1.0 / 3.0);
    assert_eq!(r.metric("hal"), 1.0);
    assert_eq!(r.metric("cog"), 1.0 / 3.0);
}

#[test]
fn mme_one_of_two_per_pair() {
    let mut samples = Vec::new();
    let mut answers = BTreeMap::new();
    for p in 0..5 {
        for (j, gold) in [Answer::Yes, Answer::No].into_iter().enumerate() {
            let id = format!("p{p}_{j}");
            samples.push(ExistenceSample {
                sample_id: id.clone(),
                image_ref: format!("img{p}"),
                question: "Is there a dog in the image?".into(),
                gold,
                pair_id: Some(format!("p{p}")),
            });
            answers.insert(id, Answer::Yes);
        }
    }
    let r = score_mme(&samples, &answers);
    let table = r.table();
    assert_eq!(format!("{:.2}", r.metric("accuracy") * 100.0), "50.00");
    assert_eq!(format!("{:.2}", r.metric("accuracy_plus") * 100.0), "0.00");
    assert_eq!(format!("{:.2}", r.metric("total")), "50.00");
    assert!(table.contains("total            50.00"), "{table}");
}

// ---- prompts ----

fn rendered(id: TemplateId, slots: &[(&str, &str)]) -> String {
    let p = render(id, slots).unwrap();
    format!("{}\n-----\n{}", p.system_prompt, p.user_prompt)
}

#[test]
fn prompts_match_golden_files() {
    let cases = [
        (
            "attribute_extraction",
            rendered(
                TemplateId::AttributeExtraction,
                &[
                    ("examples", "[Text]:\nA black cat sleeps on the sofa.\n[Entity]:\ncat\n[Response]:\nA black cat sleeps on the sofa&The object sleeps on the sofa"),
                    ("sent", "The person is wearing a brown shirt. The person is in the center."),
                    ("entity", "person"),
                ],
            ),
        ),
        (
            "query_rephrase",
            rendered(TemplateId::QueryRephrase, &[("statement", "The object is wearing a brown shirt\nThe object is in the center")]),
        ),
        (
            "per_response_reasoning",
            rendered(
                TemplateId::PerResponseReasoning,
                &[
                    ("information", "It is unclear if the frisbee is thrown by a person."),
                    ("question", "Is there a person in the image?"),
                ],
            ),
        ),
    ];
    for (name, text) in cases {
        let path = format!("{}/tests/golden/{name}.txt", env!("CARGO_MANIFEST_DIR"));
        let golden = std::fs::read(&path).unwrap();
        assert_eq!(text.as_bytes(), golden.as_slice(), "{name} differs from {path}");
    }
}
