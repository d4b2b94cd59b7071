//! Versioned prompt templates and pure slot rendering.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TemplateError;

pub const TEMPLATE_VERSION: &str = "templates_v1";

/// Few-shot block substituted into the attribute-extraction `{examples}` slot.
pub const ATTRIBUTE_EXAMPLES: &str = include_str!("../../resources/templates/attribute_extraction.examples.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    AttributeExtraction,
    QueryRephrase,
    PerResponseReasoning,
    TargetObjectExtraction,
    CandidateObjectExtraction,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::AttributeExtraction,
        TemplateId::QueryRephrase,
        TemplateId::PerResponseReasoning,
        TemplateId::TargetObjectExtraction,
        TemplateId::CandidateObjectExtraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::AttributeExtraction => "attribute_extraction",
            TemplateId::QueryRephrase => "query_rephrase",
            TemplateId::PerResponseReasoning => "per_response_reasoning",
            TemplateId::TargetObjectExtraction => "target_object_extraction",
            TemplateId::CandidateObjectExtraction => "candidate_object_extraction",
        }
    }

    pub fn system(self) -> &'static str {
        match self {
            TemplateId::AttributeExtraction => {
                include_str!("../../resources/templates/attribute_extraction.system.txt")
            }
            TemplateId::QueryRephrase => include_str!("../../resources/templates/query_rephrase.system.txt"),
            TemplateId::PerResponseReasoning => {
                include_str!("../../resources/templates/per_response_reasoning.system.txt")
            }
            TemplateId::TargetObjectExtraction => {
                include_str!("../../resources/templates/target_object_extraction.system.txt")
            }
            TemplateId::CandidateObjectExtraction => {
                include_str!("../../resources/templates/candidate_object_extraction.system.txt")
            }
        }
    }

    pub fn user(self) -> &'static str {
        match self {
            TemplateId::AttributeExtraction => {
                include_str!("../../resources/templates/attribute_extraction.user.txt")
            }
            TemplateId::QueryRephrase => include_str!("../../resources/templates/query_rephrase.user.txt"),
            TemplateId::PerResponseReasoning => {
                include_str!("../../resources/templates/per_response_reasoning.user.txt")
            }
            TemplateId::TargetObjectExtraction => {
                include_str!("../../resources/templates/target_object_extraction.user.txt")
            }
            TemplateId::CandidateObjectExtraction => {
                include_str!("../../resources/templates/candidate_object_extraction.user.txt")
            }
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::AttributeExtraction => &["examples", "sent", "entity"],
            TemplateId::QueryRephrase => &["statement"],
            TemplateId::PerResponseReasoning => &["information", "question"],
            TemplateId::TargetObjectExtraction => &["question"],
            TemplateId::CandidateObjectExtraction => &["caption"],
        }
    }

    pub fn checksum(self) -> String {
        let mut h = Sha256::new();
        h.update(self.system().as_bytes());
        h.update([0u8]);
        h.update(self.user().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub template_id: TemplateId,
    pub system_prompt: String,
    pub user_prompt: String,
    pub slots: BTreeMap<String, String>,
}

impl PromptInstance {
    pub fn slot(&self, name: &str) -> &str {
        self.slots.get(name).map(String::as_str).unwrap_or("")
    }
}

/// Substitute `{slot}` markers in one pass. Only the template's declared slot
/// names are recognized; values are never re-scanned.
pub fn render(id: TemplateId, values: &[(&str, &str)]) -> Result<PromptInstance, TemplateError> {
    let mut slots = BTreeMap::new();
    for name in id.slots() {
        let value = values
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::MissingSlot {
                template: id.name(),
                slot: name.to_string(),
            })?;
        slots.insert(name.to_string(), value.to_string());
    }
    let template = id.user();
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after
            .find('}')
            .map(|close| &after[..close])
            .filter(|name| slots.contains_key(*name));
        match hit {
            Some(name) => {
                out.push_str(&slots[name]);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(PromptInstance {
        template_id: id,
        system_prompt: id.system().to_string(),
        user_prompt: out,
        slots,
    })
}

/// `template:<name>` -> sha256 for every template, recorded in run configs.
pub fn checksums() -> BTreeMap<String, String> {
    TemplateId::ALL
        .iter()
        .map(|t| (format!("template:{}", t.name()), t.checksum()))
        .collect()
}
