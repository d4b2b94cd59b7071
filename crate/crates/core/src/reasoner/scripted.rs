//! Deterministic reasoner that follows the template instructions literally,
//! using the lexicon for object matching. No model is involved.

use std::sync::Arc;

use super::templates::{PromptInstance, TemplateId};
use super::Reasoner;
use crate::error::ReasonerError;
use crate::lexicon::{tokenize, Lexicon};
use crate::text::{capitalize, split_sentences};
use crate::types::{EvidentialQuery, OBJECT_PLACEHOLDER};

const HEDGES: &[&str] = &[
    "unclear", "uncertain", "possibly", "perhaps", "maybe", "might", "may", "could", "appears", "seems",
    "likely", "probably",
];
const NEGATIONS: &[&str] = &[
    "no", "not", "without", "none", "never", "nor", "nothing", "isn", "aren", "doesn", "don", "wasn",
    "weren", "cannot",
];
const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "one"];

fn has_word(sentence: &str, words: &[&str]) -> bool {
    tokenize(sentence).iter().any(|t| words.contains(&t.word.as_str()))
}

pub fn is_hedged(sentence: &str) -> bool {
    has_word(sentence, HEDGES)
}

pub fn is_negated(sentence: &str) -> bool {
    has_word(sentence, NEGATIONS)
}

#[derive(Debug, Clone)]
pub struct ScriptedReasoner {
    lexicon: Arc<Lexicon>,
}

impl ScriptedReasoner {
    pub fn new(lexicon: Arc<Lexicon>) -> Self {
        ScriptedReasoner { lexicon }
    }

    fn question_target(&self, question: &str) -> Option<String> {
        if let Some(t) = super::pope_target(question) {
            return Some(t);
        }
        self.lexicon
            .mentions(question)
            .first()
            .map(|m| question[m.start..m.end].to_lowercase())
    }

    fn reason(&self, information: &str, question: &str) -> String {
        let Some(target) = self.question_target(question) else {
            return "Possible Answer: Unclear\nReasoning: The question names no object I can match.".into();
        };
        let target = self.lexicon.normalize_name(&target);
        let (mut asserted, mut hedged) = (false, false);
        let mut context = Vec::new();
        for sentence in split_sentences(information) {
            let negated = is_negated(sentence);
            if self.lexicon.mentions_object(sentence, &target) {
                if is_hedged(sentence) {
                    hedged = true;
                } else if !negated {
                    asserted = true;
                }
            } else if !negated {
                context.extend(self.lexicon.mentioned_objects(sentence));
            }
        }
        let (answer, why) = if asserted {
            ("Yes", format!("The information states that the {target} is in the image."))
        } else if hedged {
            ("Unclear", format!("The information mentions the {target} only with uncertainty."))
        } else if self.lexicon.implies(&context, &target) {
            (
                "Unclear",
                format!("The {target} is not mentioned, but the mentioned objects suggest it may be present."),
            )
        } else {
            (
                "No",
                format!("The information does not mention the {target} and nothing mentioned implies it."),
            )
        };
        format!("Possible Answer: {answer}\nReasoning: {why}")
    }

    fn attributes(&self, text: &str, entity: &str) -> String {
        let mut lines = Vec::new();
        for sentence in split_sentences(text) {
            if is_negated(sentence) || is_hedged(sentence) {
                continue;
            }
            let mentions = self.lexicon.mentions_of(sentence, entity);
            if mentions.is_empty() {
                continue;
            }
            let tokens = tokenize(sentence);
            let mut modified = String::new();
            let mut cursor = 0;
            for m in &mentions {
                let mut start = m.start;
                if m.first_token > 0 {
                    let prev = &tokens[m.first_token - 1];
                    if DETERMINERS.contains(&prev.word.as_str()) {
                        start = prev.start;
                    }
                }
                modified.push_str(&sentence[cursor..start]);
                if start == 0 {
                    modified.push_str(&capitalize(OBJECT_PLACEHOLDER));
                } else {
                    modified.push_str(OBJECT_PLACEHOLDER);
                }
                cursor = m.end;
            }
            modified.push_str(&sentence[cursor..]);
            lines.push(format!("{sentence}&{modified}"));
        }
        lines.join("\n")
    }

    fn rephrase_line(line: &str) -> String {
        let line = line.trim().trim_end_matches('.');
        let lower = line.to_lowercase();
        let Some(rest) = lower.strip_prefix(OBJECT_PLACEHOLDER) else {
            return format!("Cannot rephrase: {line}");
        };
        let rest = rest.trim();
        let rest = rest.strip_suffix("in the image").unwrap_or(rest).trim();
        let (verb, tail) = rest.split_once(' ').unwrap_or((rest, ""));
        let verb = match verb {
            "is" => "are".to_string(),
            "has" => "have".to_string(),
            "was" => "were".to_string(),
            "does" => "do".to_string(),
            v if v.ends_with('s') && !v.ends_with("ss") && v.len() > 2 => v[..v.len() - 1].to_string(),
            v => v.to_string(),
        };
        let attribute = if tail.is_empty() { verb } else { format!("{verb} {tail}") };
        if attribute.is_empty() {
            return format!("Cannot rephrase: {line}");
        }
        EvidentialQuery::render(&attribute)
    }
}

impl Reasoner for ScriptedReasoner {
    fn complete(&self, prompt: &PromptInstance) -> Result<String, ReasonerError> {
        Ok(match prompt.template_id {
            TemplateId::PerResponseReasoning => self.reason(prompt.slot("information"), prompt.slot("question")),
            TemplateId::AttributeExtraction => self.attributes(prompt.slot("sent"), prompt.slot("entity")),
            TemplateId::QueryRephrase => prompt
                .slot("statement")
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(Self::rephrase_line)
                .collect::<Vec<_>>()
                .join("\n"),
            TemplateId::TargetObjectExtraction => self
                .question_target(prompt.slot("question"))
                .unwrap_or_else(|| "NONE".to_string()),
            TemplateId::CandidateObjectExtraction => {
                self.lexicon.mentioned_objects(prompt.slot("caption")).join("\n")
            }
        })
    }

    fn endpoint(&self) -> String {
        "scripted".to_string()
    }
}
