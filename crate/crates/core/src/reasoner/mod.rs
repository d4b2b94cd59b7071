//! Text-only reasoning: prompt rendering, backends, and strict parsing of
//! their replies.

mod chat;
mod scripted;
pub mod templates;

use std::sync::{Arc, Mutex};

use regex::Regex;
use std::sync::OnceLock;

pub use chat::ChatReasoner;
pub use scripted::{is_hedged, is_negated, ScriptedReasoner};
pub use templates::{render, PromptInstance, TemplateId, ATTRIBUTE_EXAMPLES};

use crate::error::ReasonerError;
use crate::lexicon::Lexicon;
use crate::types::{AttributeClaim, EvidentialQuery, PerResponseVerdict, ReasonerEndpoint, Verdict};

/// A text completion backend. Must tolerate concurrent calls.
pub trait Reasoner: Send + Sync {
    fn complete(&self, prompt: &PromptInstance) -> Result<String, ReasonerError>;

    /// Human-readable endpoint name used in error messages.
    fn endpoint(&self) -> String;
}

/// Replays canned replies in order, then repeats the last one. For tests.
#[derive(Debug)]
pub struct CannedReasoner {
    replies: Vec<String>,
    next: Mutex<usize>,
}

impl CannedReasoner {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        CannedReasoner {
            replies: replies.into_iter().map(Into::into).collect(),
            next: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.next.lock().unwrap()
    }
}

impl Reasoner for CannedReasoner {
    fn complete(&self, _prompt: &PromptInstance) -> Result<String, ReasonerError> {
        let mut next = self.next.lock().unwrap();
        let reply = self
            .replies
            .get(*next)
            .or(self.replies.last())
            .cloned()
            .unwrap_or_default();
        *next += 1;
        Ok(reply)
    }

    fn endpoint(&self) -> String {
        "canned".into()
    }
}

pub fn build_reasoner(
    endpoint: &ReasonerEndpoint,
    lexicon: Arc<Lexicon>,
    timeout_ms: u64,
    retries: u32,
) -> Arc<dyn Reasoner> {
    match endpoint {
        ReasonerEndpoint::Scripted => Arc::new(ScriptedReasoner::new(lexicon)),
        ReasonerEndpoint::ChatCompletions {
            url,
            model,
            api_key_env,
        } => {
            let key = api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
            Arc::new(ChatReasoner::new(url.clone(), model.clone(), key, timeout_ms, retries))
        }
    }
}

fn pope_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*is there (?:a|an|any) (.+?) in (?:the|this) (?:image|picture|photo)\s*\?\s*$").unwrap()
    })
}

/// `{OBJECT}` slot of an "Is there a {OBJECT} in the image?" question.
pub fn pope_target(question: &str) -> Option<String> {
    pope_regex()
        .captures(question)
        .map(|c| c[1].trim().to_lowercase())
        .filter(|t| !t.is_empty())
}

/// Object whose existence `question` asks about. Template questions are
/// parsed directly; anything else goes to the reasoner when one is given.
pub fn extract_target_object(question: &str, reasoner: Option<&dyn Reasoner>) -> Result<String, ReasonerError> {
    if question.trim().is_empty() {
        return Err(ReasonerError::EmptyInput("question"));
    }
    if let Some(t) = pope_target(question) {
        return Ok(t);
    }
    let Some(reasoner) = reasoner else {
        return Err(ReasonerError::Unextractable(question.to_string()));
    };
    let prompt = render(TemplateId::TargetObjectExtraction, &[("question", question.trim())])?;
    let reply = reasoner.complete(&prompt)?;
    let answer = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let words = answer.split_whitespace().count();
    if answer.is_empty() || answer == "none" || words > 5 {
        return Err(ReasonerError::Unextractable(question.to_string()));
    }
    Ok(answer)
}

/// Parse `original&modified` lines; malformed lines are dropped with a warning.
pub fn parse_claims(reply: &str) -> Vec<AttributeClaim> {
    let mut out = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match AttributeClaim::parse_line(line) {
            Some(claim) => {
                if claim.is_over_length() {
                    log::warn!("attribute claim over the word limit: {:?}", claim.original);
                }
                out.push(claim);
            }
            None => log::warn!("dropping malformed attribute line {line:?}"),
        }
    }
    out
}

pub fn extract_attributes(
    reasoner: &dyn Reasoner,
    description: &str,
    object: &str,
) -> Result<Vec<AttributeClaim>, ReasonerError> {
    if description.trim().is_empty() {
        return Err(ReasonerError::EmptyInput("description"));
    }
    let prompt = render(
        TemplateId::AttributeExtraction,
        &[
            ("examples", ATTRIBUTE_EXAMPLES.trim()),
            ("sent", description.trim()),
            ("entity", object),
        ],
    )?;
    Ok(parse_claims(&reasoner.complete(&prompt)?))
}

/// Rephrase the first `n` claims into evidential queries with one reasoner
/// call. Reply lines map to claims by position; lines that break the query
/// template are skipped along with their claim.
pub fn generate_evidential_queries(
    reasoner: &dyn Reasoner,
    claims: &[AttributeClaim],
    n: usize,
    target_object: &str,
    iteration: u32,
) -> Result<Vec<EvidentialQuery>, ReasonerError> {
    let selected = &claims[..claims.len().min(n)];
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let statement = selected.iter().map(|c| c.modified.as_str()).collect::<Vec<_>>().join("\n");
    let prompt = render(TemplateId::QueryRephrase, &[("statement", &statement)])?;
    let reply = reasoner.complete(&prompt)?;
    let lines: Vec<&str> = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut out: Vec<EvidentialQuery> = Vec::new();
    for (claim, line) in selected.iter().zip(lines) {
        if !EvidentialQuery::matches_template(line) {
            log::warn!("rejecting query off the template: {line:?}");
            continue;
        }
        if out.iter().any(|q| q.text == line) {
            continue;
        }
        out.push(EvidentialQuery {
            text: line.to_string(),
            target_object: target_object.to_string(),
            source_claim: claim.clone(),
            iteration,
        });
    }
    Ok(out)
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let cleaned = line.trim().trim_start_matches(['*', '#', '-', ' ']);
    let head = cleaned.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    Some(cleaned[label.len()..].trim_start_matches(['*', ' ']).trim())
}

/// Parse a `Possible Answer:` / `Reasoning:` reply. Both lines are required.
pub fn parse_reasoning_reply(reply: &str) -> Option<(Verdict, String)> {
    let mut verdict = None;
    let mut reasoning: Option<String> = None;
    for line in reply.lines() {
        if let Some(v) = strip_label(line, "Possible Answer:") {
            if verdict.is_some() {
                return None;
            }
            verdict = Some(Verdict::parse_answer(v).ok()?);
        } else if let Some(r) = strip_label(line, "Reasoning:") {
            reasoning = Some(r.to_string());
        } else if let Some(r) = reasoning.as_mut() {
            if !line.trim().is_empty() {
                r.push(' ');
                r.push_str(line.trim());
            }
        }
    }
    let reasoning = reasoning.filter(|r| !r.trim().is_empty())?;
    Some((verdict?, reasoning))
}

const FORMAT_REMINDER: &str =
    "\nReply with exactly two lines: \"Possible Answer: Yes|No|Unclear\" and \"Reasoning: ...\".\n";

pub fn per_response_reason(
    reasoner: &dyn Reasoner,
    information: &str,
    question: &str,
    tool_id: &str,
) -> Result<PerResponseVerdict, ReasonerError> {
    if information.trim().is_empty() {
        return Err(ReasonerError::EmptyInput("information"));
    }
    if question.trim().is_empty() {
        return Err(ReasonerError::EmptyInput("question"));
    }
    let mut prompt = render(
        TemplateId::PerResponseReasoning,
        &[("information", information), ("question", question)],
    )?;
    let mut reply = reasoner.complete(&prompt)?;
    if parse_reasoning_reply(&reply).is_none() {
        log::debug!("re-asking after unparseable reply {reply:?}");
        prompt.user_prompt.push_str(FORMAT_REMINDER);
        reply = reasoner.complete(&prompt)?;
    }
    let (verdict, reasoning) = parse_reasoning_reply(&reply).ok_or(ReasonerError::Format { raw: reply })?;
    Ok(PerResponseVerdict {
        tool_id: tool_id.to_string(),
        query_text: String::new(),
        verdict,
        reasoning,
    })
}

/// Where candidate objects for the captioning workflow come from.
#[derive(Clone, Copy)]
pub enum CandidateSource<'a> {
    Lexicon,
    Reasoner(&'a dyn Reasoner),
}

/// Objects named in at least two of the three captions, in first-mention
/// order across caption 1, then 2, then 3.
pub fn extract_candidate_objects(
    captions: &[String],
    lexicon: &Lexicon,
    source: CandidateSource<'_>,
) -> Result<Vec<String>, ReasonerError> {
    if captions.len() != 3 {
        return Err(ReasonerError::InvalidInput(format!(
            "expected 3 captions, got {}",
            captions.len()
        )));
    }
    let mut per_caption: Vec<Vec<String>> = Vec::with_capacity(3);
    for caption in captions {
        let objects = match source {
            CandidateSource::Lexicon => lexicon.mentioned_objects(caption),
            CandidateSource::Reasoner(r) => {
                if caption.trim().is_empty() {
                    Vec::new()
                } else {
                    let prompt = render(TemplateId::CandidateObjectExtraction, &[("caption", caption.trim())])?;
                    let mut seen = Vec::new();
                    for line in r.complete(&prompt)?.lines() {
                        let name = line.trim().trim_start_matches(['-', '*', ' ']).trim();
                        if name.is_empty() {
                            continue;
                        }
                        let n = lexicon.normalize_name(name);
                        if !seen.contains(&n) {
                            seen.push(n);
                        }
                    }
                    seen
                }
            }
        };
        per_caption.push(objects);
    }
    let mut out: Vec<String> = Vec::new();
    for objects in &per_caption {
        for o in objects {
            let count = per_caption.iter().filter(|c| c.contains(o)).count();
            if count >= 2 && !out.contains(o) {
                out.push(o.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Arc<Lexicon> {
        Arc::new(Lexicon::bundled())
    }

    #[test]
    fn target_extraction() {
        assert_eq!(extract_target_object("Is there a person in the image?", None).unwrap(), "person");
        assert_eq!(
            extract_target_object("Is there a dining table in the image?", None).unwrap(),
            "dining table"
        );
        assert!(matches!(extract_target_object("", None), Err(ReasonerError::EmptyInput(_))));
        assert!(matches!(
            extract_target_object("What color is the sky?", None),
            Err(ReasonerError::Unextractable(_))
        ));
        let s = ScriptedReasoner::new(lex());
        assert_eq!(extract_target_object("Can you see any dogs here?", Some(&s)).unwrap(), "dogs");
        assert!(extract_target_object("How bright is it?", Some(&s)).is_err());
    }

    #[test]
    fn claims_from_reply() {
        let r = CannedReasoner::new(["The person is tall&The object is tall"]);
        let c = extract_attributes(&r, "The person is tall.", "person").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].original, "The person is tall");
        let r = CannedReasoner::new(["a dog&the object\nb dog&the object x\nbad line\nc dog&the object y"]);
        assert_eq!(extract_attributes(&r, "x", "dog").unwrap().len(), 3);
        assert!(extract_attributes(&r, "  ", "dog").is_err());
    }

    #[test]
    fn scripted_pipeline_produces_template_queries() {
        let s = ScriptedReasoner::new(lex());
        let claims = extract_attributes(&s, "the person is wearing a brown shirt", "person").unwrap();
        assert_eq!(claims[0].modified.to_lowercase(), "the object is wearing a brown shirt");
        let q = generate_evidential_queries(&s, &claims, 5, "person", 1).unwrap();
        assert_eq!(q[0].text, "What are all the objects that are wearing a brown shirt in the image?");
    }

    #[test]
    fn query_cap_and_order() {
        let s = ScriptedReasoner::new(lex());
        let claims: Vec<AttributeClaim> = (0..8)
            .map(|i| AttributeClaim {
                original: format!("the dog has {i} spots"),
                modified: format!("the object has {i} spots"),
            })
            .collect();
        let q = generate_evidential_queries(&s, &claims, 5, "dog", 2).unwrap();
        assert_eq!(q.len(), 5);
        for (i, query) in q.iter().enumerate() {
            assert_eq!(query.source_claim, claims[i]);
            assert_eq!(query.iteration, 2);
        }
        assert!(generate_evidential_queries(&s, &[], 5, "dog", 1).unwrap().is_empty());
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(
            parse_reasoning_reply("Possible Answer: Yes\nReasoning: a person is there."),
            Some((Verdict::Yes, "a person is there.".into()))
        );
        assert_eq!(
            parse_reasoning_reply("**Possible Answer:** unclear\n**Reasoning:** hmm\nmore"),
            Some((Verdict::Unclear, "hmm more".into()))
        );
        assert!(parse_reasoning_reply("Possible Answer: Maybe\nReasoning: x").is_none());
        assert!(parse_reasoning_reply("Possible Answer: Yes").is_none());
        assert!(parse_reasoning_reply("Reasoning: x").is_none());
    }

    #[test]
    fn reask_once_then_format_error() {
        let r = CannedReasoner::new(["Possible Answer: Maybe\nReasoning: x"]);
        let err = per_response_reason(&r, "info", "Is there a dog in the image?", "t").unwrap_err();
        assert!(matches!(err, ReasonerError::Format { ref raw } if raw.contains("Maybe")));
        assert_eq!(r.calls(), 2);
        let r = CannedReasoner::new(["garbage", "Possible Answer: No\nReasoning: none"]);
        let v = per_response_reason(&r, "info", "q", "t").unwrap();
        assert_eq!(v.verdict, Verdict::No);
    }

    #[test]
    fn figure_three_verdicts() {
        let s = ScriptedReasoner::new(lex());
        let q = "Is there a person in the image?";
        assert_eq!(per_response_reason(&s, "no person is detected", q, "d").unwrap().verdict, Verdict::No);
        assert_eq!(
            per_response_reason(&s, "unclear if the frisbee is thrown by a person", q, "c").unwrap().verdict,
            Verdict::Unclear
        );
    }

    #[test]
    fn candidates() {
        let l = lex();
        let caps = |a: &str, b: &str, c: &str| vec![a.to_string(), b.to_string(), c.to_string()];
        let got = extract_candidate_objects(
            &caps("A dog and a frisbee.", "A dog jumps near a person.", "A person throws a frisbee to the dog."),
            &l,
            CandidateSource::Lexicon,
        )
        .unwrap();
        assert_eq!(got, vec!["dog", "frisbee", "person"]);
        let got = extract_candidate_objects(&caps("Two dogs play.", "A dog sleeps.", "A red car."), &l, CandidateSource::Lexicon)
            .unwrap();
        assert_eq!(got, vec!["dog"]);
        let got = extract_candidate_objects(&caps("A dog.", "A car.", "A cat."), &l, CandidateSource::Lexicon).unwrap();
        assert!(got.is_empty());
        let s = ScriptedReasoner::new(l.clone());
        let got = extract_candidate_objects(&caps("Two dogs play.", "A dog sleeps.", "A red car."), &l, CandidateSource::Reasoner(&s))
            .unwrap();
        assert_eq!(got, vec!["dog"]);
        assert!(extract_candidate_objects(&caps("a", "b", "c")[..2], &l, CandidateSource::Lexicon).is_err());
    }
}
