//! Language-model backends.
//!
//! Every prompt the engine issues is a [`PromptRequest`] built by the
//! [`prompts`] registry and carries a [`TemplateId`]. Two backends implement
//! [`LanguageModel`]: the table-driven [`ScriptedBackend`] used for
//! reproducible runs, and [`HttpBackend`] for OpenAI-compatible endpoints.

mod http;
pub mod prompts;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{ScriptError, ScriptRow, ScriptTable, ScriptedBackend};

/// Default embedding dimension of the scripted backend.
pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// The closed set of prompt kinds the engine issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ImportanceRating,
    FocalQuestions,
    Insights,
    AgentSummaryPart,
    DayPlan,
    Decompose,
    Reaction,
    Destination,
    Emoji,
    Utterance,
    DialogueSummary,
    PreviousDaySummary,
    EntitySummaryPart,
}

impl TemplateId {
    pub const ALL: [TemplateId; 13] = [
        TemplateId::ImportanceRating,
        TemplateId::FocalQuestions,
        TemplateId::Insights,
        TemplateId::AgentSummaryPart,
        TemplateId::DayPlan,
        TemplateId::Decompose,
        TemplateId::Reaction,
        TemplateId::Destination,
        TemplateId::Emoji,
        TemplateId::Utterance,
        TemplateId::DialogueSummary,
        TemplateId::PreviousDaySummary,
        TemplateId::EntitySummaryPart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ImportanceRating => "importance_rating",
            TemplateId::FocalQuestions => "focal_questions",
            TemplateId::Insights => "insights",
            TemplateId::AgentSummaryPart => "agent_summary_part",
            TemplateId::DayPlan => "day_plan",
            TemplateId::Decompose => "decompose",
            TemplateId::Reaction => "reaction",
            TemplateId::Destination => "destination",
            TemplateId::Emoji => "emoji",
            TemplateId::Utterance => "utterance",
            TemplateId::DialogueSummary => "dialogue_summary",
            TemplateId::PreviousDaySummary => "previous_day_summary",
            TemplateId::EntitySummaryPart => "entity_summary_part",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully rendered prompt ready for a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    template_id: TemplateId,
    rendered_text: String,
    max_tokens: u32,
    temperature: f64,
}

impl PromptRequest {
    /// Only the prompt registry builds requests; the constructor enforces the
    /// request invariants.
    pub(crate) fn new(
        template_id: TemplateId,
        rendered_text: String,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<Self, BackendError> {
        if rendered_text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("rendered_text is empty".into()));
        }
        if max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if temperature.is_nan() || temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be non-negative, got {temperature}"
            )));
        }
        Ok(Self {
            template_id,
            rendered_text,
            max_tokens,
            temperature,
        })
    }

    pub fn template_id(&self) -> TemplateId {
        self.template_id
    }

    pub fn rendered_text(&self) -> &str {
        &self.rendered_text
    }

    pub fn max_tokens(&self) -> u32 {
        self.max_tokens
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length. Returns `None` for empty or
    /// zero-length input.
    pub fn from_raw(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity, clamped to [-1, 1]. Mismatched dimensions compare
    /// over the shared prefix.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (dot / denom).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned an empty completion for {0}")]
    EmptyCompletion(TemplateId),
    #[error("invalid prompt request: {0}")]
    InvalidRequest(String),
}

/// Completion and embedding interface shared by all backends.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError>;

    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        (**self).embed(text)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        (**self).embed(text)
    }
}
