//! Two-party conversations. Each turn is generated from the speaker's
//! summary and the recent transcript; long conversations are compacted into
//! a rolling summary so prompts stay bounded while the transcript itself is
//! never trimmed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::prompts::{self, END_MARKER};
use crate::llm::{BackendError, LanguageModel};
use crate::memory::{MemoryError, MemoryId, MemoryKind, MemoryStream};
use crate::retrieval::{self, RetrievalError, RetrievalWeights};
use crate::time::SimTime;

pub const DEFAULT_MAX_TURNS: usize = 24;
pub const DEFAULT_BUDGET_CHARS: usize = 2000;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("dialogue is closed")]
    Closed,
    #[error("dialogue is still open")]
    StillOpen,
    #[error("dialogue was already finalized")]
    AlreadyFinalized,
    #[error("it is {expected}'s turn, not {got}'s")]
    OutOfTurn { expected: String, got: String },
    #[error("{0:?} is not a participant")]
    NotParticipant(String),
    #[error("an agent cannot talk to themselves")]
    SameParticipant,
    #[error("malformed utterance: {0}")]
    MalformedCompletion(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn line(&self) -> String {
        format!("{}: {}", self.speaker, self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    EndMarker,
    TurnCap,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub participants: [String; 2],
    /// Full transcript, append-only.
    pub turns: Vec<Turn>,
    pub rolling_summary: String,
    /// Number of leading turns already folded into `rolling_summary`.
    pub compacted_through: usize,
    pub open: bool,
    pub finalized: bool,
    pub max_turns: usize,
    pub opened_at: SimTime,
    pub closed_at: Option<SimTime>,
    pub close_reason: Option<CloseReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

/// Whether a reaction starts with one of the conversational verbs.
pub fn is_dialogue_reaction(reaction: &str, verbs: &[String]) -> bool {
    let first = reaction
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    !first.is_empty() && verbs.iter().any(|v| v.eq_ignore_ascii_case(&first))
}

fn is_end_marker(text: &str) -> bool {
    text.trim().eq_ignore_ascii_case(END_MARKER)
}

/// Strips quoting and a leading "Name:" the model may have echoed.
fn clean_utterance(raw: &str, speaker: &str) -> String {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix(speaker) {
        if let Some(rest) = rest.trim_start().strip_prefix(':') {
            text = rest.trim();
        }
    }
    let text = text.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(text);
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_turns(turns: &[Turn]) -> String {
    turns.iter().map(Turn::line).collect::<Vec<_>>().join("\n")
}

impl DialogueState {
    pub fn initiator(&self) -> &str {
        &self.participants[0]
    }

    pub fn partner_of(&self, name: &str) -> Option<&str> {
        match self.participants.iter().position(|p| p == name)? {
            0 => Some(&self.participants[1]),
            _ => Some(&self.participants[0]),
        }
    }

    /// Whose turn it is: the participant who did not speak last.
    pub fn next_speaker(&self) -> &str {
        match self.turns.last() {
            Some(t) if t.speaker == self.participants[0] => &self.participants[1],
            _ => &self.participants[0],
        }
    }

    /// Turns not yet folded into the rolling summary.
    pub fn uncompacted(&self) -> &[Turn] {
        &self.turns[self.compacted_through..]
    }

    pub fn uncompacted_chars(&self) -> usize {
        self.uncompacted().iter().map(|t| t.line().chars().count() + 1).sum()
    }

    pub fn transcript(&self) -> String {
        render_turns(&self.turns)
    }

    fn close(&mut self, now: SimTime, reason: CloseReason) {
        self.open = false;
        self.closed_at = Some(now);
        self.close_reason = Some(reason);
    }

    /// Ends a dialogue from outside, e.g. when a participant falls asleep.
    pub fn abort(&mut self, now: SimTime) {
        if self.open {
            self.close(now, CloseReason::Aborted);
        }
    }
}

/// Starts a conversation with the initiator's first utterance.
#[allow(clippy::too_many_arguments)]
pub fn open_dialogue(
    initiator: &str,
    partner: &str,
    agent_summary: &str,
    entity_summary: &str,
    reaction: &str,
    llm: &dyn LanguageModel,
    now: SimTime,
    max_turns: usize,
) -> Result<DialogueState, DialogueError> {
    if initiator == partner {
        return Err(DialogueError::SameParticipant);
    }
    let request = prompts::utterance_open(initiator, partner, agent_summary, entity_summary, reaction)?;
    let mut last = String::new();
    for _ in 0..2 {
        let raw = llm.complete(&request)?;
        let text = clean_utterance(&raw, initiator);
        if text.is_empty() || is_end_marker(&text) {
            last = raw;
            continue;
        }
        let mut state = DialogueState {
            participants: [initiator.to_string(), partner.to_string()],
            turns: vec![Turn {
                speaker: initiator.to_string(),
                text,
            }],
            rolling_summary: String::new(),
            compacted_through: 0,
            open: true,
            finalized: false,
            max_turns: max_turns.max(1),
            opened_at: now,
            closed_at: None,
            close_reason: None,
            summary: None,
        };
        if state.turns.len() >= state.max_turns {
            state.close(now, CloseReason::TurnCap);
        }
        return Ok(state);
    }
    Err(DialogueError::MalformedCompletion(format!(
        "first utterance must not end the conversation: {last:?}"
    )))
}

/// Generates `speaker`'s next turn. Returns the utterance, or `None` when
/// the speaker ended the conversation. Reaching the turn cap closes it.
pub fn next_utterance(
    state: &mut DialogueState,
    speaker: &str,
    agent_summary: &str,
    llm: &dyn LanguageModel,
    now: SimTime,
) -> Result<Option<String>, DialogueError> {
    if !state.open {
        return Err(DialogueError::Closed);
    }
    let partner = state
        .partner_of(speaker)
        .ok_or_else(|| DialogueError::NotParticipant(speaker.to_string()))?
        .to_string();
    if state.next_speaker() != speaker {
        return Err(DialogueError::OutOfTurn {
            expected: state.next_speaker().to_string(),
            got: speaker.to_string(),
        });
    }
    let request = prompts::utterance_next(
        speaker,
        &partner,
        agent_summary,
        &state.rolling_summary,
        &render_turns(state.uncompacted()),
        state.turns.len(),
    )?;
    let mut text = String::new();
    for _ in 0..2 {
        let raw = llm.complete(&request)?;
        if is_end_marker(&raw) {
            state.close(now, CloseReason::EndMarker);
            return Ok(None);
        }
        text = clean_utterance(&raw, speaker);
        if !text.is_empty() {
            break;
        }
    }
    if text.is_empty() {
        return Err(DialogueError::MalformedCompletion("empty utterance".into()));
    }
    state.turns.push(Turn {
        speaker: speaker.to_string(),
        text: text.clone(),
    });
    if state.turns.len() >= state.max_turns {
        state.close(now, CloseReason::TurnCap);
    }
    Ok(Some(text))
}

/// Folds the uncompacted turns into the rolling summary once they exceed
/// `budget_chars`. Returns whether compaction happened.
pub fn maybe_compact(
    state: &mut DialogueState,
    budget_chars: usize,
    llm: &dyn LanguageModel,
) -> Result<bool, DialogueError> {
    if state.uncompacted_chars() <= budget_chars {
        return Ok(false);
    }
    let request = prompts::dialogue_summary(
        &state.participants[0],
        &state.participants[1],
        &state.rolling_summary,
        &render_turns(state.uncompacted()),
    )?;
    let summary = prompts::flatten(&llm.complete(&request)?);
    if summary.is_empty() {
        return Err(DialogueError::MalformedCompletion("empty dialogue summary".into()));
    }
    state.rolling_summary = summary;
    state.compacted_through = state.turns.len();
    Ok(true)
}

/// Memory ids written for one participant by [`finalize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteBack {
    pub agent: String,
    pub summary_id: MemoryId,
    pub utterance_ids: Vec<MemoryId>,
}

/// Summarizes a closed dialogue and stores the summary plus each
/// participant's own utterances in their memory streams, timestamped at
/// close. `streams` may be given in either order.
pub fn finalize(
    state: &mut DialogueState,
    streams: [&mut MemoryStream; 2],
    llm: &dyn LanguageModel,
) -> Result<(String, Vec<WriteBack>), DialogueError> {
    if state.finalized {
        return Err(DialogueError::AlreadyFinalized);
    }
    if state.open {
        return Err(DialogueError::StillOpen);
    }
    for s in &streams {
        if !state.participants.iter().any(|p| p == s.owner()) {
            return Err(DialogueError::NotParticipant(s.owner().to_string()));
        }
    }
    if streams[0].owner() == streams[1].owner() {
        return Err(DialogueError::SameParticipant);
    }
    let at = state.closed_at.unwrap_or(state.opened_at);
    let request = prompts::dialogue_summary(
        &state.participants[0],
        &state.participants[1],
        &state.rolling_summary,
        &render_turns(state.uncompacted()),
    )?;
    let summary = prompts::flatten(&llm.complete(&request)?);
    if summary.is_empty() {
        return Err(DialogueError::MalformedCompletion("empty dialogue summary".into()));
    }
    let mut written = Vec::new();
    for stream in streams {
        let me = stream.owner().to_string();
        let partner = state.partner_of(&me).unwrap_or_default().to_string();
        let summary_id = stream
            .append(llm, MemoryKind::Observation, &summary, at, Default::default())?
            .id;
        let mut utterance_ids = Vec::new();
        for t in state.turns.iter().filter(|t| t.speaker == me) {
            let text = format!("{me} said to {partner}: \"{}\"", t.text);
            utterance_ids.push(
                stream
                    .append(llm, MemoryKind::Observation, &text, at, Default::default())?
                    .id,
            );
        }
        written.push(WriteBack {
            agent: me,
            summary_id,
            utterance_ids,
        });
    }
    state.finalized = true;
    state.summary = Some(summary.clone());
    Ok((summary, written))
}

pub const INTERVIEWER: &str = "Interviewer";

/// A human talking to one agent. Answers are conditioned on the agent's
/// summary and on memories retrieved for each question.
#[derive(Debug, Clone, PartialEq)]
pub struct InterviewSession {
    pub agent: String,
    pub turns: Vec<Turn>,
    pub rolling_summary: String,
    pub compacted_through: usize,
    pub budget_chars: usize,
}

impl InterviewSession {
    pub fn new(agent: &str, budget_chars: usize) -> Self {
        InterviewSession {
            agent: agent.to_string(),
            turns: Vec::new(),
            rolling_summary: String::new(),
            compacted_through: 0,
            budget_chars,
        }
    }

    pub fn ask(
        &mut self,
        question: &str,
        agent_summary: &str,
        stream: &mut MemoryStream,
        llm: &dyn LanguageModel,
        weights: &RetrievalWeights,
        now: SimTime,
    ) -> Result<String, DialogueError> {
        let question = prompts::flatten(question);
        if question.is_empty() {
            return Err(DialogueError::MalformedCompletion("empty question".into()));
        }
        let retrieved = retrieval::retrieve(stream, llm, &question, weights, now)?;
        let statements = retrieved
            .iter()
            .map(|m| format!("- {}", m.record.text))
            .collect::<Vec<_>>()
            .join("\n");
        let request = prompts::utterance_interview(
            &self.agent,
            agent_summary,
            &statements,
            &self.rolling_summary,
            &render_turns(&self.turns[self.compacted_through..]),
            &question,
        )?;
        let answer = clean_utterance(&llm.complete(&request)?, &self.agent);
        if answer.is_empty() || is_end_marker(&answer) {
            return Err(DialogueError::MalformedCompletion("empty interview answer".into()));
        }
        self.turns.push(Turn {
            speaker: INTERVIEWER.to_string(),
            text: question,
        });
        self.turns.push(Turn {
            speaker: self.agent.clone(),
            text: answer.clone(),
        });
        let pending: usize = self.turns[self.compacted_through..]
            .iter()
            .map(|t| t.line().chars().count() + 1)
            .sum();
        if pending > self.budget_chars {
            let request = prompts::dialogue_summary(
                INTERVIEWER,
                &self.agent,
                &self.rolling_summary,
                &render_turns(&self.turns[self.compacted_through..]),
            )?;
            match llm.complete(&request) {
                Ok(s) if !s.trim().is_empty() => {
                    self.rolling_summary = prompts::flatten(&s);
                    self.compacted_through = self.turns.len();
                }
                Ok(_) => log::warn!("interview compaction returned nothing; keeping full context"),
                Err(e) => log::warn!("interview compaction failed: {e}"),
            }
        }
        Ok(answer)
    }

    /// Stores each exchange as an observation. Only used when the operator
    /// asks for the interview to be remembered.
    pub fn write_back(
        &self,
        stream: &mut MemoryStream,
        llm: &dyn LanguageModel,
        now: SimTime,
    ) -> Result<Vec<MemoryId>, DialogueError> {
        let mut ids = Vec::new();
        for pair in self.turns.chunks(2) {
            if let [q, a] = pair {
                let text = format!(
                    "{} was asked by an interviewer: \"{}\" and answered: \"{}\"",
                    self.agent, q.text, a.text
                );
                ids.push(
                    stream
                        .append(llm, MemoryKind::Observation, &text, now, Default::default())?
                        .id,
                );
            }
        }
        Ok(ids)
    }
}
