use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Observation,
    ActionChange,
    Movement,
    Reflection,
    Plan,
    DialogueTurn,
    DialogueSummary,
    StatusEmoji,
    WorldChange,
    /// Emitted for an agent that had nothing else to report this tick.
    Heartbeat,
    /// A module failed; the agent carried on with its next step.
    Error,
}

impl EventKind {
    /// Kinds produced by the agent architecture itself, excluding the
    /// bookkeeping kinds.
    pub const ARCHITECTURE: [EventKind; 9] = [
        EventKind::Observation,
        EventKind::ActionChange,
        EventKind::Movement,
        EventKind::Reflection,
        EventKind::Plan,
        EventKind::DialogueTurn,
        EventKind::DialogueSummary,
        EventKind::StatusEmoji,
        EventKind::WorldChange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Observation => "observation",
            EventKind::ActionChange => "action_change",
            EventKind::Movement => "movement",
            EventKind::Reflection => "reflection",
            EventKind::Plan => "plan",
            EventKind::DialogueTurn => "dialogue_turn",
            EventKind::DialogueSummary => "dialogue_summary",
            EventKind::StatusEmoji => "status_emoji",
            EventKind::WorldChange => "world_change",
            EventKind::Heartbeat => "heartbeat",
            EventKind::Error => "error",
        }
    }
}

/// One line of the event log. Tick 0 holds initialization events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub time: SimTime,
    /// `None` for world events.
    pub agent: Option<String>,
    pub kind: EventKind,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl SimEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

/// Appends events to a JSON-lines file.
pub struct EventWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl EventWriter {
    pub fn create(path: &Path) -> Result<Self, EngineError> {
        let file = fs::File::create(path).map_err(|e| EngineError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(path: &Path) -> Result<Self, EngineError> {
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| EngineError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, events: &[SimEvent]) -> Result<(), EngineError> {
        for e in events {
            writeln!(self.out, "{}", e.to_line()).map_err(|err| EngineError::io(&self.path, err))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), EngineError> {
        self.out.flush().map_err(|e| EngineError::io(&self.path, e))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<SimEvent>, EngineError> {
    let file = fs::File::open(path).map_err(|e| EngineError::io(path, e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EngineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| EngineError::EventLog {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}
