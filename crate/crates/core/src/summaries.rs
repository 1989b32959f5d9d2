//! Query-based summaries of an agent and of what it observes, the react or
//! ignore decision, and the emoji status line.

use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::llm::{prompts, BackendError, LanguageModel, PromptRequest};
use crate::memory::{MemoryRecord, MemoryStream};
use crate::retrieval::{self, RetrievalError, RetrievalWeights, ScoredMemory};
use crate::time::SimTime;

/// Shown when the emoji backend fails or answers out of contract.
pub const FALLBACK_EMOJI: &str = "💬";

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("observation text is empty")]
    EmptyObservation,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentSummaryDescription {
    pub identity_core: String,
    pub occupation: String,
    pub self_assessment: String,
    pub combined: String,
    pub as_of: SimTime,
}

fn no_information(query: &str) -> String {
    format!("No information about {query}.")
}

fn summarize_section(
    llm: &dyn LanguageModel,
    retrieved: &[ScoredMemory],
    query: &str,
    build: impl FnOnce(&str) -> Result<PromptRequest, BackendError>,
) -> Result<String, SummaryError> {
    if retrieved.is_empty() {
        return Ok(no_information(query));
    }
    let statements = prompts::statement_lines(retrieved.iter().map(|m| m.record.text.as_str()));
    let answer = llm.complete(&build(&statements)?)?;
    Ok(answer.trim().to_string())
}

/// Identity, occupation and self-assessment sections, each summarized from
/// memories retrieved for its fixed query, joined under a name header.
pub fn agent_summary_description(
    name: &str,
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    weights: &RetrievalWeights,
    now: SimTime,
) -> Result<AgentSummaryDescription, SummaryError> {
    let mut sections = Vec::with_capacity(3);
    for query in [
        prompts::queries::core_characteristics(name),
        prompts::queries::daily_occupation(name),
        prompts::queries::recent_progress(name),
    ] {
        let found = retrieval::retrieve(stream, llm, &query, weights, now)?;
        sections.push(summarize_section(llm, &found, &query, |s| {
            prompts::agent_summary_part(name, &query, s)
        })?);
    }
    let self_assessment = sections.pop().unwrap_or_default();
    let occupation = sections.pop().unwrap_or_default();
    let identity_core = sections.pop().unwrap_or_default();
    let combined = format!("Name: {name}\n{identity_core}\n{occupation}\n{self_assessment}");
    Ok(AgentSummaryDescription {
        identity_core,
        occupation,
        self_assessment,
        combined,
        as_of: now,
    })
}

/// Summary of what the agent did on the day before `today`. Day 1 has no
/// previous day and returns `bootstrap`.
pub fn previous_day_summary(
    name: &str,
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    weights: &RetrievalWeights,
    today: u32,
    bootstrap: &str,
    now: SimTime,
) -> Result<String, SummaryError> {
    if today <= 1 {
        return Ok(bootstrap.to_string());
    }
    let yesterday = today - 1;
    let query = prompts::queries::previous_day_plan(name);
    let found = retrieval::retrieve_where(stream, llm, &query, weights, now, |r| r.created_at.day() == yesterday)?;
    if found.is_empty() {
        return Ok(format!("No memories of day {yesterday}."));
    }
    summarize_section(llm, &found, &query, |s| {
        prompts::previous_day_summary(name, yesterday, &query, s)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntitySummary {
    pub relationship: String,
    pub status: String,
    pub combined: String,
}

fn mentions(record: &MemoryRecord, needle_lower: &str) -> bool {
    record.text.to_lowercase().contains(needle_lower)
}

/// Relationship and status of an observed agent or object, from the
/// observer's memories that mention it. The status section always starts
/// with the directly perceived status.
pub fn observed_entity_summary(
    observer: &str,
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    weights: &RetrievalWeights,
    entity: &str,
    entity_status: &str,
    now: SimTime,
) -> Result<EntitySummary, SummaryError> {
    let needle = entity.to_lowercase();
    let rel_query = prompts::queries::relationship(observer, entity);
    let found = retrieval::retrieve_where(stream, llm, &rel_query, weights, now, |r| mentions(r, &needle))?;
    let relationship = if found.is_empty() {
        format!("No information about {observer}'s relationship with {entity}.")
    } else {
        summarize_section(llm, &found, &rel_query, |s| {
            prompts::entity_summary_part(observer, &rel_query, s)
        })?
    };

    let status_query = prompts::queries::entity_status(entity, entity_status);
    let perceived = format!("{status_query}.");
    let found = retrieval::retrieve_where(stream, llm, &status_query, weights, now, |r| mentions(r, &needle))?;
    let status = if found.is_empty() {
        perceived
    } else {
        let detail = summarize_section(llm, &found, &status_query, |s| {
            prompts::entity_summary_part(observer, &status_query, s)
        })?;
        format!("{perceived} {detail}")
    };
    let combined = format!("{relationship}\n{status}");
    Ok(EntitySummary {
        relationship,
        status,
        combined,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionDecision {
    pub react: bool,
    /// Empty iff `react` is false.
    pub reaction_text: String,
}

impl ReactionDecision {
    pub fn none() -> Self {
        Self {
            react: false,
            reaction_text: String::new(),
        }
    }
}

fn leading_word(text: &str) -> (&str, &str) {
    let end = text
        .char_indices()
        .find(|(_, c)| !c.is_alphabetic())
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    (&text[..end], &text[end..])
}

fn strip_separators(text: &str) -> &str {
    text.trim_start_matches(|c: char| c.is_whitespace() || ",.:;!-—–".contains(c))
}

/// Leading "No" means no reaction; otherwise the text after an optional
/// leading "Yes" is the reaction.
pub fn parse_reaction(completion: &str) -> Result<ReactionDecision, SummaryError> {
    let text = completion.trim().trim_matches('"').trim();
    let (word, rest) = leading_word(text);
    if word.eq_ignore_ascii_case("no") {
        return Ok(ReactionDecision::none());
    }
    let reaction = if word.eq_ignore_ascii_case("yes") {
        strip_separators(rest)
    } else {
        text
    };
    let reaction = reaction.trim().trim_end_matches('.').trim();
    if reaction.is_empty() {
        return Err(SummaryError::MalformedCompletion(format!(
            "no reaction in {completion:?}"
        )));
    }
    Ok(ReactionDecision {
        react: true,
        reaction_text: reaction.to_string(),
    })
}

pub fn reaction_prompt(
    name: &str,
    agent_summary: &str,
    entity_summary: &str,
    observation_text: &str,
) -> Result<PromptRequest, SummaryError> {
    if observation_text.trim().is_empty() {
        return Err(SummaryError::EmptyObservation);
    }
    Ok(prompts::reaction(
        name,
        agent_summary,
        entity_summary,
        observation_text,
    )?)
}

pub fn decide_reaction(
    name: &str,
    agent_summary: &str,
    entity_summary: &str,
    observation_text: &str,
    llm: &dyn LanguageModel,
) -> Result<ReactionDecision, SummaryError> {
    let request = reaction_prompt(name, agent_summary, entity_summary, observation_text)?;
    match parse_reaction(&llm.complete(&request)?) {
        Ok(d) => Ok(d),
        Err(_) => parse_reaction(&llm.complete(&request)?),
    }
}

fn is_emoji_char(c: char) -> bool {
    matches!(c as u32,
        0x00A9 | 0x00AE | 0x203C | 0x2049 | 0x2122 | 0x2139
        | 0x2194..=0x21AA
        | 0x231A..=0x23FF
        | 0x24C2
        | 0x25AA..=0x25FE
        | 0x2600..=0x27BF
        | 0x2934 | 0x2935
        | 0x2B05..=0x2B55
        | 0x3030 | 0x303D | 0x3297 | 0x3299
        | 0x1F000..=0x1FAFF)
}

/// Grapheme clusters of `text` when it is 1–2 emoji (whitespace ignored).
pub fn emoji_clusters(text: &str) -> Option<Vec<String>> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let clusters: Vec<String> = compact.graphemes(true).map(str::to_string).collect();
    let ok = (1..=2).contains(&clusters.len()) && clusters.iter().all(|g| g.chars().next().is_some_and(is_emoji_char));
    ok.then_some(clusters)
}

/// One or two emoji describing the action, or [`FALLBACK_EMOJI`].
pub fn emojify(name: &str, action_text: &str, llm: &dyn LanguageModel) -> String {
    let answer = prompts::emoji(name, action_text).and_then(|r| llm.complete(&r));
    match answer {
        Ok(a) => match emoji_clusters(&a) {
            Some(clusters) => clusters.concat(),
            None => {
                log::debug!("emoji answer {a:?} rejected");
                FALLBACK_EMOJI.to_string()
            }
        },
        Err(e) => {
            log::debug!("emoji backend failed: {e}");
            FALLBACK_EMOJI.to_string()
        }
    }
}
