//! Two-step reflection: condense recent memories into focal questions, then
//! infer cited insights for each question and store them as reflections.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::llm::{prompts, BackendError, LanguageModel, PromptRequest};
use crate::memory::{MemoryError, MemoryId, MemoryKind, MemoryStream};
use crate::retrieval::{self, RetrievalError, RetrievalWeights};
use crate::time::SimTime;

/// Records shown to the focal-question prompt.
pub const FOCAL_WINDOW: usize = 100;
pub const QUESTION_COUNT: usize = 3;
pub const MAX_INSIGHTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FocalQuestion(String);

impl FocalQuestion {
    /// Trims the text and appends `?` when missing.
    pub fn new(text: &str) -> Option<Self> {
        let t = text.trim();
        if t.trim_end_matches('?').trim().is_empty() {
            return None;
        }
        Some(if t.ends_with('?') {
            Self(t.to_string())
        } else {
            Self(format!("{t}?"))
        })
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insight {
    pub text: String,
    /// 1-based positions cited in the prompt, in the order given.
    pub prompt_indices: Vec<usize>,
    /// The memory ids those positions resolve to.
    pub evidence: Vec<MemoryId>,
    /// Id of the stored reflection record.
    pub stored_id: MemoryId,
    /// Ids of the statements shown in the prompt, in prompt order.
    pub shown: Vec<MemoryId>,
}

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error("cannot reflect on an empty memory stream")]
    EmptyStream,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("line has no \"(because of ...)\" clause: {0:?}")]
    MissingCitationClause(String),
    #[error("insight cites statement {index} but only {shown} were shown")]
    InvalidEvidenceIndex { index: usize, shown: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// True iff the importance accumulated since the last reflection reaches
/// `threshold` (inclusive).
pub fn should_reflect(stream: &MemoryStream, threshold: u64) -> bool {
    stream.importance_since_reflection() >= threshold.max(1)
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.):]|[-*•])\s*").unwrap())
}

fn strip_marker(line: &str) -> &str {
    match list_marker().find(line) {
        Some(m) => &line[m.end()..],
        None => line,
    }
}

/// Runs `attempt` on the completion of `request`, retrying once on failure.
fn with_retry<T>(
    llm: &dyn LanguageModel,
    request: &PromptRequest,
    attempt: impl Fn(&str) -> Result<T, ReflectionError>,
) -> Result<T, ReflectionError> {
    let first = attempt(&llm.complete(request)?);
    match first {
        Ok(v) => Ok(v),
        Err(e) => {
            log::debug!("retrying {} after: {e}", request.template_id());
            attempt(&llm.complete(request)?)
        }
    }
}

pub fn parse_focal_questions(completion: &str) -> Result<Vec<FocalQuestion>, ReflectionError> {
    let questions: Vec<FocalQuestion> = completion
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| FocalQuestion::new(strip_marker(l)))
        .collect();
    if questions.len() != QUESTION_COUNT {
        return Err(ReflectionError::MalformedCompletion(format!(
            "expected {QUESTION_COUNT} questions, got {}",
            questions.len()
        )));
    }
    Ok(questions)
}

/// The rendered focal-question prompt for the current stream.
pub fn focal_prompt(stream: &MemoryStream) -> Result<PromptRequest, ReflectionError> {
    if stream.is_empty() {
        return Err(ReflectionError::EmptyStream);
    }
    let lines = prompts::statement_lines(stream.recent(FOCAL_WINDOW).iter().map(|r| r.text.as_str()));
    Ok(prompts::focal_questions(&lines)?)
}

pub fn generate_focal_questions(
    stream: &MemoryStream,
    llm: &dyn LanguageModel,
) -> Result<Vec<FocalQuestion>, ReflectionError> {
    let request = focal_prompt(stream)?;
    with_retry(llm, &request, parse_focal_questions)
}

fn citation_clause() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?P<text>.*?)\s*\(\s*because\s+of\s*(?P<idx>[^()]*)\)\s*\.?\s*$").unwrap())
}

/// Splits `insight (because of 1, 5, 3)` into the insight text and its
/// cited 1-based indices.
pub fn parse_citations(line: &str) -> Result<(String, Vec<usize>), ReflectionError> {
    let line = line.trim();
    let caps = citation_clause()
        .captures(line)
        .ok_or_else(|| ReflectionError::MissingCitationClause(line.to_string()))?;
    let text = caps["text"].trim().trim_end_matches([',', ';', ':']).trim();
    if text.is_empty() {
        return Err(ReflectionError::MalformedCompletion(format!(
            "empty insight text in {line:?}"
        )));
    }
    let mut indices = Vec::new();
    for part in caps["idx"].split([',', ';']).flat_map(|p| p.split(" and ")) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let n: usize = part
            .parse()
            .map_err(|_| ReflectionError::MalformedCompletion(format!("bad citation index {part:?}")))?;
        if !indices.contains(&n) {
            indices.push(n);
        }
    }
    if indices.is_empty() {
        return Err(ReflectionError::MalformedCompletion(format!(
            "no citation indices in {line:?}"
        )));
    }
    Ok((text.to_string(), indices))
}

/// Parses up to [`MAX_INSIGHTS`] cited insights. Lines without a citation
/// clause are skipped; an out-of-range index rejects the completion.
pub fn parse_insights(completion: &str, shown: usize) -> Result<Vec<(String, Vec<usize>)>, ReflectionError> {
    let mut out = Vec::new();
    for line in completion.lines().map(strip_marker).filter(|l| !l.trim().is_empty()) {
        match parse_citations(line) {
            Ok((text, indices)) => {
                if let Some(&index) = indices.iter().find(|&&i| i == 0 || i > shown) {
                    return Err(ReflectionError::InvalidEvidenceIndex { index, shown });
                }
                out.push((text, indices));
            }
            Err(ReflectionError::MissingCitationClause(l)) => log::debug!("skipping uncited line {l:?}"),
            Err(e) => return Err(e),
        }
        if out.len() == MAX_INSIGHTS {
            break;
        }
    }
    if out.is_empty() {
        return Err(ReflectionError::MalformedCompletion("no cited insights".into()));
    }
    Ok(out)
}

/// Retrieves evidence for `question`, asks for cited insights, and appends
/// each insight as a reflection citing the memories it references.
pub fn generate_insights(
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    question: &FocalQuestion,
    weights: &RetrievalWeights,
    now: SimTime,
) -> Result<Vec<Insight>, ReflectionError> {
    if question.as_str().trim().is_empty() {
        return Err(ReflectionError::EmptyQuestion);
    }
    let evidence = retrieval::retrieve(stream, llm, question.as_str(), weights, now)?;
    if evidence.is_empty() {
        return Err(ReflectionError::EmptyStream);
    }
    let ids: Vec<MemoryId> = evidence.iter().map(|m| m.record.id).collect();
    let numbered = prompts::numbered_lines(evidence.iter().map(|m| m.record.text.as_str()));
    let request = prompts::insights(stream.owner(), &numbered)?;
    let parsed = with_retry(llm, &request, |c| parse_insights(c, ids.len()))?;

    let mut insights = Vec::with_capacity(parsed.len());
    for (text, prompt_indices) in parsed {
        let cited: Vec<MemoryId> = prompt_indices.iter().map(|&i| ids[i - 1]).collect();
        let record = stream.append(
            llm,
            MemoryKind::Reflection,
            &text,
            now,
            cited.iter().copied().collect::<BTreeSet<_>>(),
        )?;
        insights.push(Insight {
            text,
            prompt_indices,
            evidence: cited,
            stored_id: record.id,
            shown: ids.clone(),
        });
    }
    Ok(insights)
}

/// Result of one full reflection pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    pub questions: Vec<FocalQuestion>,
    pub insights: Vec<Insight>,
}

/// Focal questions followed by insight generation for each question.
/// `insight_weights.k` controls how many statements each insight prompt shows.
pub fn reflect(
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    insight_weights: &RetrievalWeights,
    now: SimTime,
) -> Result<Reflection, ReflectionError> {
    let questions = generate_focal_questions(stream, llm)?;
    let mut insights = Vec::new();
    for q in &questions {
        insights.extend(generate_insights(stream, llm, q, insight_weights, now)?);
    }
    Ok(Reflection { questions, insights })
}
