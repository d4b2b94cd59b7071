#![allow(dead_code)]

use std::sync::Arc;

use crosscheck_core::lexicon::Lexicon;
use crosscheck_core::reasoner::ScriptedReasoner;
use crosscheck_core::tools::{ScriptedTool, ScriptedToolSpec, ToolBackend, ToolRegistry};
use crosscheck_core::types::{Capability, EngineConfig, Endpoint, ToolDescriptor};
use crosscheck_core::Engine;

pub const IMAGE: &str = "img_001";
pub const QUESTION: &str = "Is there a person in the image?";
pub const SHIRT_QUERY: &str = "What are all the objects that are wearing a brown shirt in the image?";

pub fn desc(id: &str, capability: Capability, trust_rank: u8) -> ToolDescriptor {
    ToolDescriptor {
        id: id.into(),
        capability,
        trust_rank,
        endpoint: Endpoint::Scripted { source: "test".into() },
        display_name: id.into(),
    }
}

pub fn lexicon() -> Arc<Lexicon> {
    Arc::new(Lexicon::bundled())
}

pub fn engine(config: EngineConfig, backends: Vec<(ToolDescriptor, Arc<dyn ToolBackend>)>) -> Engine {
    let mut registry = ToolRegistry::new();
    let mut config = config;
    config.tools.clear();
    for (d, b) in backends {
        config.tools.push(d.clone());
        registry.register(d, b).unwrap();
    }
    let lex = lexicon();
    Engine::new(config, registry, Arc::new(ScriptedReasoner::new(lex.clone())), lex).unwrap()
}

/// Detector misses the person, the plug-in caption hedges, and three tools
/// affirm a person in a brown shirt once asked about the shirt.
pub fn frisbee_tools() -> Vec<(ToolDescriptor, Arc<dyn ToolBackend>)> {
    let mut lvlm = ScriptedToolSpec::new("lvlm", Capability::Caption, "I am not sure.");
    lvlm.insert(IMAGE, "Describe this image in detail.", "A frisbee flies over a grassy field. It is unclear if the frisbee is thrown by a person.");
    lvlm.insert(
        IMAGE,
        "Describe the person in the image, including its color, count, and location.",
        "the person is wearing a brown shirt",
    );
    lvlm.insert(IMAGE, SHIRT_QUERY, "A person is wearing a brown shirt.");
    let mut det = ScriptedToolSpec::new("detector", Capability::Detect, "no objects detected");
    det.insert(IMAGE, "", "no person is detected");
    let mut vqa_a = ScriptedToolSpec::new("vqa-a", Capability::Vqa, "I cannot tell.");
    vqa_a.insert(IMAGE, SHIRT_QUERY, "The man in the center is wearing a brown shirt.");
    let mut vqa_b = ScriptedToolSpec::new("vqa-b", Capability::Vqa, "I cannot tell.");
    vqa_b.insert(IMAGE, SHIRT_QUERY, "A person wearing a brown shirt is throwing a frisbee.");
    vec![
        (desc("lvlm", Capability::Caption, 2), Arc::new(ScriptedTool::new(lvlm))),
        (desc("detector", Capability::Detect, 0), Arc::new(ScriptedTool::new(det))),
        (desc("vqa-a", Capability::Vqa, 1), Arc::new(ScriptedTool::new(vqa_a))),
        (desc("vqa-b", Capability::Vqa, 1), Arc::new(ScriptedTool::new(vqa_b))),
    ]
}

#[allow(unused_imports)]
pub use crosscheck_core::sim::CHAOS_IMAGE;

pub fn chaos_engine(seed: u64) -> (Engine, String) {
    crosscheck_core::sim::chaos_engine(seed, &lexicon())
}
