//! Memory retrieval by weighted recency, importance and relevance.
//!
//! Each candidate gets three raw components: recency decays exponentially
//! with hours since last access, importance is the stored 1–10 rating, and
//! relevance is the query cosine mapped from [-1, 1] to [0, 1]. Components
//! are min–max normalized over the candidate set (a constant component maps
//! to 0.5) and combined as
//! `alpha_recency * recency + alpha_importance * importance + alpha_relevance * relevance`.
//! Ties on the total go to the more recently accessed record, then the
//! higher id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{BackendError, Embedding, LanguageModel};
use crate::memory::{MemoryError, MemoryId, MemoryRecord, MemoryStream};
use crate::time::SimTime;

fn one() -> f64 {
    1.0
}

fn default_decay() -> f64 {
    0.995
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalWeights {
    #[serde(default = "one")]
    pub alpha_recency: f64,
    #[serde(default = "one")]
    pub alpha_importance: f64,
    #[serde(default = "one")]
    pub alpha_relevance: f64,
    /// Recency multiplier per elapsed hour.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self {
            alpha_recency: 1.0,
            alpha_importance: 1.0,
            alpha_relevance: 1.0,
            decay: default_decay(),
            k: default_k(),
        }
    }
}

impl RetrievalWeights {
    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let alphas = [self.alpha_recency, self.alpha_importance, self.alpha_relevance];
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(RetrievalError::InvalidWeights(
                "alphas must be finite and non-negative".into(),
            ));
        }
        if !alphas.iter().any(|&a| a > 0.0) {
            return Err(RetrievalError::InvalidWeights(
                "at least one alpha must be positive".into(),
            ));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(RetrievalError::InvalidWeights(format!(
                "decay {} outside (0, 1)",
                self.decay
            )));
        }
        if self.k == 0 {
            return Err(RetrievalError::InvalidWeights("k must be positive".into()));
        }
        Ok(())
    }
}

/// Un-normalized scoring features of one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawComponents {
    pub recency: f64,
    pub importance: f64,
    pub relevance: f64,
}

impl RawComponents {
    fn as_array(self) -> [f64; 3] {
        [self.recency, self.importance, self.relevance]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub recency: f64,
    pub importance: f64,
    pub relevance: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn weighted(normalized: [f64; 3], weights: &RetrievalWeights) -> Self {
        let [recency, importance, relevance] = normalized;
        Self {
            recency,
            importance,
            relevance,
            total: weights.alpha_recency * recency
                + weights.alpha_importance * importance
                + weights.alpha_relevance * relevance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMemory {
    pub record: MemoryRecord,
    pub breakdown: ScoreBreakdown,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("clock skew: scoring at {now} but record {id} was accessed at {last_accessed}")]
    ClockSkew {
        id: MemoryId,
        now: SimTime,
        last_accessed: SimTime,
    },
    #[error("invalid retrieval weights: {0}")]
    InvalidWeights(String),
    #[error("retrieval query is empty")]
    EmptyQuery,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

pub fn raw_components(
    record: &MemoryRecord,
    query: &Embedding,
    now: SimTime,
    decay: f64,
) -> Result<RawComponents, RetrievalError> {
    let hours = now
        .hours_since(record.last_accessed_at)
        .ok_or(RetrievalError::ClockSkew {
            id: record.id,
            now,
            last_accessed: record.last_accessed_at,
        })?;
    Ok(RawComponents {
        recency: decay.powf(hours),
        importance: f64::from(record.importance),
        relevance: (record.embedding.cosine(query) + 1.0) / 2.0,
    })
}

/// Min–max normalizes each component over the candidate set. A component
/// that is constant across candidates maps to 0.5.
pub fn normalize(candidates: &[RawComponents]) -> Vec<[f64; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in candidates {
        for (i, v) in c.as_array().into_iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    candidates
        .iter()
        .map(|c| {
            let mut out = [0.0; 3];
            for (i, v) in c.as_array().into_iter().enumerate() {
                let span = hi[i] - lo[i];
                out[i] = if span > 0.0 {
                    ((v - lo[i]) / span).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
            out
        })
        .collect()
}

/// Ordering used for ranking: total descending, then newer access, then
/// higher id.
pub fn rank_order(a: (&MemoryRecord, &ScoreBreakdown), b: (&MemoryRecord, &ScoreBreakdown)) -> Ordering {
    b.1.total
        .total_cmp(&a.1.total)
        .then_with(|| b.0.last_accessed_at.cmp(&a.0.last_accessed_at))
        .then_with(|| b.0.id.cmp(&a.0.id))
}

/// Scores and ranks `candidates` without touching the stream. Returns the
/// top `weights.k` as (record, breakdown) pairs.
pub fn rank<'a>(
    candidates: &[&'a MemoryRecord],
    query: &Embedding,
    weights: &RetrievalWeights,
    now: SimTime,
) -> Result<Vec<(&'a MemoryRecord, ScoreBreakdown)>, RetrievalError> {
    weights.validate()?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let raw = candidates
        .iter()
        .map(|r| raw_components(r, query, now, weights.decay))
        .collect::<Result<Vec<_>, _>>()?;
    let mut scored: Vec<(&MemoryRecord, ScoreBreakdown)> = candidates
        .iter()
        .copied()
        .zip(normalize(&raw))
        .map(|(r, n)| (r, ScoreBreakdown::weighted(n, weights)))
        .collect();
    scored.sort_by(|a, b| rank_order((a.0, &a.1), (b.0, &b.1)));
    scored.truncate(weights.k);
    Ok(scored)
}

/// Retrieves the top-k memories for `query_text` and marks them accessed.
pub fn retrieve(
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    query_text: &str,
    weights: &RetrievalWeights,
    now: SimTime,
) -> Result<Vec<ScoredMemory>, RetrievalError> {
    retrieve_where(stream, llm, query_text, weights, now, |_| true)
}

/// Like [`retrieve`], restricted to records accepted by `filter`.
pub fn retrieve_where(
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    query_text: &str,
    weights: &RetrievalWeights,
    now: SimTime,
    filter: impl Fn(&MemoryRecord) -> bool,
) -> Result<Vec<ScoredMemory>, RetrievalError> {
    if query_text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    weights.validate()?;
    let candidates: Vec<&MemoryRecord> = stream.records().iter().filter(|r| filter(r)).collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let query = llm.embed(query_text)?;
    let top: Vec<(MemoryId, ScoreBreakdown)> = rank(&candidates, &query, weights, now)?
        .into_iter()
        .map(|(r, b)| (r.id, b))
        .collect();
    let ids: Vec<MemoryId> = top.iter().map(|(id, _)| *id).collect();
    stream.mark_accessed(&ids, now)?;
    Ok(top
        .into_iter()
        .map(|(id, breakdown)| ScoredMemory {
            record: stream.get(id).expect("ranked id exists").clone(),
            breakdown,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptTable, ScriptedBackend};
    use crate::memory::MemoryKind;
    use std::collections::BTreeSet;

    fn unit(values: &[f64]) -> Embedding {
        Embedding::from_raw(values.to_vec()).unwrap()
    }

    fn record(id: MemoryId, importance: u8, accessed: u64, emb: Embedding) -> MemoryRecord {
        MemoryRecord {
            id,
            kind: MemoryKind::Observation,
            text: format!("r{id}"),
            created_at: SimTime(0),
            last_accessed_at: SimTime(accessed),
            importance,
            embedding: emb,
            citations: BTreeSet::new(),
        }
    }

    #[test]
    fn recency_at_zero_and_one_day() {
        let r = record(0, 5, 60, unit(&[1.0, 0.0]));
        let q = unit(&[1.0, 0.0]);
        let at_zero = raw_components(&r, &q, SimTime(60), 0.995).unwrap();
        assert_eq!(at_zero.recency, 1.0);
        assert!((at_zero.relevance - 1.0).abs() < 1e-12);
        assert_eq!(at_zero.importance, 5.0);
        // 0.995^24 computed by repeated multiplication as an independent route
        let oracle = (0..24).fold(1.0f64, |acc, _| acc * 0.995);
        let day = raw_components(&r, &q, SimTime(60 + 24 * 60), 0.995).unwrap();
        assert!((day.recency - oracle).abs() < 1e-4);
        // 0.995^24 to 40 digits (mpmath): 0.88665351050130788367...
        assert!((day.recency - 0.886_653_510_501_307_9).abs() < 1e-4);
        assert!(matches!(
            raw_components(&r, &q, SimTime(59), 0.995),
            Err(RetrievalError::ClockSkew { .. })
        ));
    }

    #[test]
    fn opposite_embeddings_have_zero_relevance() {
        let r = record(0, 5, 0, unit(&[1.0, 0.0]));
        let raw = raw_components(&r, &unit(&[-1.0, 0.0]), SimTime(0), 0.995).unwrap();
        assert!(raw.relevance.abs() < 1e-12);
    }

    #[test]
    fn normalization_examples() {
        let c = |imp: f64| RawComponents {
            recency: 0.7,
            importance: imp,
            relevance: imp / 10.0,
        };
        let n = normalize(&[c(2.0), c(6.0), c(10.0)]);
        let imps: Vec<f64> = n.iter().map(|t| t[1]).collect();
        assert_eq!(imps, vec![0.0, 0.5, 1.0]);
        assert!(n.iter().all(|t| t[0] == 0.5));
        assert_eq!(normalize(&[c(4.0)]), vec![[0.5, 0.5, 0.5]]);
    }

    #[test]
    fn totals_and_tie_break() {
        let w = RetrievalWeights::default();
        let a = ScoreBreakdown::weighted([1.0, 0.5, 0.0], &w);
        let b = ScoreBreakdown::weighted([0.2, 1.0, 0.3], &w);
        let c = ScoreBreakdown::weighted([0.0, 0.0, 1.0], &w);
        assert_eq!(a.total, 1.5);
        assert_eq!(b.total, 1.5);
        assert_eq!(c.total, 1.0);
        let e = unit(&[1.0]);
        let ra = record(0, 1, 100, e.clone());
        let rb = record(1, 1, 40, e.clone());
        let rc = record(2, 1, 10, e);
        let mut v = [(&rc, c), (&rb, b), (&ra, a)];
        v.sort_by(|x, y| rank_order((x.0, &x.1), (y.0, &y.1)));
        let ids: Vec<_> = v.iter().map(|(r, _)| r.id).collect();
        // equal totals: the record accessed later (ra) ranks first
        assert_eq!(ids, vec![0, 1, 2]);
        // equal totals and access time: higher id first
        let rd = record(3, 1, 100, unit(&[1.0]));
        assert_eq!(rank_order((&ra, &a), (&rd, &a)), Ordering::Greater);
    }

    #[test]
    fn weights_validation() {
        assert!(RetrievalWeights::default().validate().is_ok());
        let zero = RetrievalWeights {
            alpha_recency: 0.0,
            alpha_importance: 0.0,
            alpha_relevance: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        assert!(RetrievalWeights {
            decay: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalWeights {
            k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RetrievalWeights {
            alpha_recency: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn retrieve_marks_access_and_handles_empty() {
        let llm = ScriptedBackend::new(&ScriptTable::default().with_stock_defaults(), 0).unwrap();
        let mut s = MemoryStream::new("K");
        let w = RetrievalWeights::default().with_k(2);
        assert!(retrieve(&mut s, &llm, "anything", &w, SimTime(0)).unwrap().is_empty());
        for i in 0..4 {
            s.append(
                &llm,
                MemoryKind::Observation,
                &format!("memory {i}"),
                SimTime(i),
                BTreeSet::new(),
            )
            .unwrap();
        }
        let out = retrieve(&mut s, &llm, "memory 2", &w, SimTime(90)).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].breakdown.total >= out[1].breakdown.total);
        for sm in &out {
            assert_eq!(s.get(sm.record.id).unwrap().last_accessed_at, SimTime(90));
            assert_eq!(sm.record.last_accessed_at, SimTime(90));
        }
        let untouched = s.records().iter().filter(|r| r.last_accessed_at != SimTime(90)).count();
        assert_eq!(untouched, 2);
        assert!(matches!(
            retrieve(&mut s, &llm, " ", &w, SimTime(90)),
            Err(RetrievalError::EmptyQuery)
        ));
    }

    #[test]
    fn filter_restricts_candidates() {
        let llm = ScriptedBackend::new(&ScriptTable::default().with_stock_defaults(), 0).unwrap();
        let mut s = MemoryStream::new("K");
        for i in 0..6 {
            s.append(
                &llm,
                MemoryKind::Observation,
                &format!("m{i}"),
                SimTime(i),
                BTreeSet::new(),
            )
            .unwrap();
        }
        let out = retrieve_where(&mut s, &llm, "q", &RetrievalWeights::default(), SimTime(10), |r| {
            r.id % 2 == 0
        })
        .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|m| m.record.id % 2 == 0));
    }
}
