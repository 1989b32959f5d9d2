//! Deterministic generative-agent simulation.
//!
//! Agents keep a memory stream of observations, reflections and plans,
//! retrieve from it by weighted recency/importance/relevance, reflect by
//! condensing recent memories into cited insights, plan their day
//! coarse-to-fine, and act in a tree-structured world: moving between areas,
//! reacting to what they perceive, and talking to each other. Every language
//! model call goes through [`llm::LanguageModel`]; the scripted backend makes
//! whole simulations byte-reproducible.

pub mod dialogue;
pub mod engine;
pub mod llm;
pub mod memory;
pub mod planning;
pub mod reflection;
pub mod retrieval;
pub mod summaries;
pub mod time;
pub mod world;

pub use llm::{Embedding, LanguageModel, PromptRequest, ScriptedBackend, TemplateId};
pub use memory::{MemoryKind, MemoryRecord, MemoryStream};
pub use retrieval::{RetrievalWeights, ScoreBreakdown, ScoredMemory};
pub use time::SimTime;
