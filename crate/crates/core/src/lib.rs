//! Multi-tool evidence loop for object-existence questions.
//!
//! A question such as "Is there a person in the image?" is sent to an
//! ensemble of vision tools. Each response is reasoned into a
//! [`types::Verdict`], the verdicts are fused with symbolic rules, and when
//! the tools disagree the engine asks attribute-guided follow-up questions
//! for up to `k` rounds. Every run produces a replayable
//! [`types::SessionTrace`].

pub mod bench;
pub mod config;
pub mod engine;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod lexicon;
pub mod reasoner;
pub mod sim;
pub mod text;
pub mod tools;
pub mod trace;
pub mod types;

pub use engine::{replay, Engine, LoopState, Phase, ReplayReport};
pub use exec::Execution;
pub use types::{Answer, Verdict};
