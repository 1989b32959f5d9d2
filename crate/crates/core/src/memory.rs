//! Per-agent append-only memory stream.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{prompts, BackendError, Embedding, LanguageModel};
use crate::time::SimTime;

pub type MemoryId = u64;

/// Importance used when the backend's rating cannot be parsed.
pub const FALLBACK_IMPORTANCE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Observation,
    Reflection,
    Plan,
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Observation => "observation",
            MemoryKind::Reflection => "reflection",
            MemoryKind::Plan => "plan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "observation" => Some(MemoryKind::Observation),
            "reflection" => Some(MemoryKind::Reflection),
            "plan" => Some(MemoryKind::Plan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryRecord {
    pub id: MemoryId,
    pub kind: MemoryKind,
    pub text: String,
    pub created_at: SimTime,
    pub last_accessed_at: SimTime,
    pub importance: u8,
    pub embedding: Embedding,
    pub citations: BTreeSet<MemoryId>,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory text is empty")]
    EmptyText,
    #[error("invalid citation {cited} for new record {new_id}")]
    InvalidCitation { cited: MemoryId, new_id: MemoryId },
    #[error("only reflections may carry citations")]
    CitationOnNonReflection,
    #[error("importance {0} outside 1..=10")]
    InvalidImportance(u8),
    #[error("unknown memory id {0}")]
    UnknownId(MemoryId),
    #[error("access time {now} precedes creation of record {id}")]
    ClockSkew { id: MemoryId, now: SimTime },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An agent's memory stream. Records are never mutated after append except
/// for `last_accessed_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStream {
    owner: String,
    records: Vec<MemoryRecord>,
}

impl MemoryStream {
    pub fn new(owner: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            records: Vec::new(),
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn get(&self, id: MemoryId) -> Option<&MemoryRecord> {
        self.records.get(usize::try_from(id).ok()?)
    }

    pub fn next_id(&self) -> MemoryId {
        self.records.len() as MemoryId
    }

    pub fn by_kind(&self, kind: MemoryKind) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Rates importance and embeds `text` through the backend, then appends.
    pub fn append(
        &mut self,
        llm: &dyn LanguageModel,
        kind: MemoryKind,
        text: &str,
        created_at: SimTime,
        citations: BTreeSet<MemoryId>,
    ) -> Result<&MemoryRecord, MemoryError> {
        self.check_new(kind, text, &citations)?;
        let importance = rate_importance(llm, text);
        let embedding = llm.embed(text)?;
        self.append_rated(kind, text, created_at, citations, importance, embedding)
    }

    /// Appends a record whose importance and embedding are already known.
    pub fn append_rated(
        &mut self,
        kind: MemoryKind,
        text: &str,
        created_at: SimTime,
        citations: BTreeSet<MemoryId>,
        importance: u8,
        embedding: Embedding,
    ) -> Result<&MemoryRecord, MemoryError> {
        self.check_new(kind, text, &citations)?;
        if !(1..=10).contains(&importance) {
            return Err(MemoryError::InvalidImportance(importance));
        }
        let id = self.next_id();
        self.records.push(MemoryRecord {
            id,
            kind,
            text: text.to_string(),
            created_at,
            last_accessed_at: created_at,
            importance,
            embedding,
            citations,
        });
        Ok(&self.records[id as usize])
    }

    fn check_new(&self, kind: MemoryKind, text: &str, citations: &BTreeSet<MemoryId>) -> Result<(), MemoryError> {
        if text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if kind != MemoryKind::Reflection && !citations.is_empty() {
            return Err(MemoryError::CitationOnNonReflection);
        }
        let new_id = self.next_id();
        if let Some(&cited) = citations.iter().find(|&&c| c >= new_id) {
            return Err(MemoryError::InvalidCitation { cited, new_id });
        }
        Ok(())
    }

    /// The last `n` records in ascending id order.
    pub fn recent(&self, n: usize) -> &[MemoryRecord] {
        let start = self.records.len().saturating_sub(n);
        &self.records[start..]
    }

    /// Sets `last_accessed_at = now` on every listed record. Validates all ids
    /// before touching any record.
    pub fn mark_accessed(&mut self, ids: &[MemoryId], now: SimTime) -> Result<(), MemoryError> {
        for &id in ids {
            let rec = self.get(id).ok_or(MemoryError::UnknownId(id))?;
            if now < rec.created_at {
                return Err(MemoryError::ClockSkew { id, now });
            }
        }
        for &id in ids {
            let rec = &mut self.records[id as usize];
            rec.last_accessed_at = rec.last_accessed_at.max(now);
        }
        Ok(())
    }

    /// Sum of importance over records appended after the latest reflection.
    pub fn importance_since_reflection(&self) -> u64 {
        self.records
            .iter()
            .rev()
            .take_while(|r| r.kind != MemoryKind::Reflection)
            .map(|r| u64::from(r.importance))
            .sum()
    }

    /// Writes one JSON record per line.
    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a stream written by [`MemoryStream::persist`], re-checking every
    /// record invariant. Line numbers in errors are 1-based.
    pub fn load(owner: impl Into<String>, path: &Path) -> Result<Self, MemoryError> {
        let text = fs::read_to_string(path)?;
        Self::parse(owner, &text)
    }

    pub fn parse(owner: impl Into<String>, text: &str) -> Result<Self, MemoryError> {
        let mut stream = Self::new(owner);
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| MemoryError::CorruptRecord { line: line_no, reason };
            let rec: MemoryRecord = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            if rec.id != stream.next_id() {
                return Err(corrupt(format!("expected id {}, found {}", stream.next_id(), rec.id)));
            }
            if rec.last_accessed_at < rec.created_at {
                return Err(corrupt("last_accessed_at precedes created_at".into()));
            }
            stream
                .check_new(rec.kind, &rec.text, &rec.citations)
                .map_err(|e| corrupt(e.to_string()))?;
            if !(1..=10).contains(&rec.importance) {
                return Err(corrupt(format!("importance {} outside 1..=10", rec.importance)));
            }
            if (rec.embedding.norm() - 1.0).abs() > 1e-6 {
                return Err(corrupt("embedding is not unit norm".into()));
            }
            stream.records.push(rec);
        }
        Ok(stream)
    }
}

fn first_integer(text: &str) -> Option<u8> {
    static DIGITS: OnceLock<Regex> = OnceLock::new();
    let m = DIGITS.get_or_init(|| Regex::new(r"\d+").unwrap()).find(text)?;
    let digits = m.as_str().trim_start_matches('0');
    let value = if digits.is_empty() {
        0
    } else if digits.len() > 2 {
        10
    } else {
        digits.parse::<u8>().ok()?
    };
    Some(value.clamp(1, 10))
}

/// Asks the backend for a 1–10 importance rating. Parses the first integer
/// in the completion and clamps it; after two unusable answers returns
/// [`FALLBACK_IMPORTANCE`].
pub fn rate_importance(llm: &dyn LanguageModel, text: &str) -> u8 {
    let request = match prompts::importance_rating(text) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("importance prompt rejected ({e}); using {FALLBACK_IMPORTANCE}");
            return FALLBACK_IMPORTANCE;
        }
    };
    for _ in 0..2 {
        match llm.complete(&request) {
            Ok(answer) => {
                if let Some(v) = first_integer(&answer) {
                    return v;
                }
            }
            Err(e) => log::debug!("importance rating failed: {e}"),
        }
    }
    log::warn!("no usable importance rating for {text:?}; using {FALLBACK_IMPORTANCE}");
    FALLBACK_IMPORTANCE
}
