//! Table-driven deterministic backend.
//!
//! A [`ScriptTable`] is an ordered list of rows. Each row names a template id,
//! optional matchers over the rendered prompt, and a canned response; the
//! first row whose template id and matchers all match wins. A row with no
//! matchers is that template's default, and every template must have one.
//!
//! Matchers:
//! - `contains`: substrings that must all occur in the prompt.
//! - `regex`: must match; its named groups become `${name}` variables.
//! - `for_each`: must match at least once; the response is expanded once per
//!   match (with that match's named groups) and the expansions are joined
//!   with newlines.
//!
//! When `responses` lists several alternatives, one is picked by hashing the
//! seed, the template id and the prompt text, so the choice is a pure function
//! of those three inputs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{BackendError, Embedding, LanguageModel, PromptRequest, TemplateId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRow {
    pub template: TemplateId,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub for_each: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<String>,
}

impl ScriptRow {
    pub fn new(template: TemplateId, response: impl Into<String>) -> Self {
        Self {
            template,
            contains: Vec::new(),
            regex: None,
            for_each: None,
            response: Some(response.into()),
            responses: Vec::new(),
        }
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn regex(mut self, pattern: impl Into<String>) -> Self {
        self.regex = Some(pattern.into());
        self
    }

    pub fn for_each(mut self, pattern: impl Into<String>) -> Self {
        self.for_each = Some(pattern.into());
        self
    }

    pub fn alternatives(mut self, responses: Vec<String>) -> Self {
        self.response = None;
        self.responses = responses;
        self
    }

    fn is_default(&self) -> bool {
        self.contains.is_empty() && self.regex.is_none() && self.for_each.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptTable {
    #[serde(default)]
    pub rows: Vec<ScriptRow>,
}

impl ScriptTable {
    pub fn new(rows: Vec<ScriptRow>) -> Self {
        Self { rows }
    }

    pub fn push(&mut self, row: ScriptRow) {
        self.rows.push(row);
    }

    /// Appends a generic default row for every template that lacks one.
    /// Intended for fixtures; scenario files must spell their defaults out.
    pub fn with_stock_defaults(mut self) -> Self {
        for id in TemplateId::ALL {
            if !self.rows.iter().any(|r| r.template == id && r.is_default()) {
                self.rows.push(ScriptRow::new(id, stock_default(id)));
            }
        }
        self
    }
}

fn stock_default(id: TemplateId) -> &'static str {
    match id {
        TemplateId::ImportanceRating => "3",
        TemplateId::FocalQuestions => "1. What matters most?\n2. What changed recently?\n3. Who is involved?",
        TemplateId::Insights => "Nothing stands out (because of 1)",
        TemplateId::AgentSummaryPart => "Nothing notable.",
        TemplateId::DayPlan => "07:00 (900m): going about the day",
        TemplateId::Decompose => "No steps.",
        TemplateId::Reaction => "No.",
        TemplateId::Destination => "nowhere",
        TemplateId::Emoji => "🙂",
        TemplateId::Utterance => "[END]",
        TemplateId::DialogueSummary => "They talked briefly.",
        TemplateId::PreviousDaySummary => "An ordinary day.",
        TemplateId::EntitySummaryPart => "Nothing notable.",
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script table has no default row for template {0}")]
    MissingDefault(TemplateId),
    #[error("script row {row}: invalid regex: {source}")]
    BadRegex {
        row: usize,
        #[source]
        source: regex::Error,
    },
    #[error("script row {row}: exactly one of `response` or `responses` must be given")]
    NoResponse { row: usize },
    #[error("script table parse error: {0}")]
    Parse(String),
}

#[derive(Debug)]
struct CompiledRow {
    template: TemplateId,
    contains: Vec<String>,
    regex: Option<Regex>,
    for_each: Option<Regex>,
    responses: Vec<String>,
}

/// Deterministic scripted backend. Immutable after construction.
#[derive(Debug)]
pub struct ScriptedBackend {
    rows: Vec<CompiledRow>,
    seed: u64,
    dim: usize,
}

impl ScriptedBackend {
    pub fn new(table: &ScriptTable, seed: u64) -> Result<Self, ScriptError> {
        Self::with_dim(table, seed, super::DEFAULT_EMBEDDING_DIM)
    }

    pub fn with_dim(table: &ScriptTable, seed: u64, dim: usize) -> Result<Self, ScriptError> {
        for id in TemplateId::ALL {
            if !table.rows.iter().any(|r| r.template == id && r.is_default()) {
                return Err(ScriptError::MissingDefault(id));
            }
        }
        let compile = |row: usize, pat: &Option<String>| -> Result<Option<Regex>, ScriptError> {
            pat.as_deref()
                .map(Regex::new)
                .transpose()
                .map_err(|source| ScriptError::BadRegex { row, source })
        };
        let rows = table
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let responses = match (&r.response, r.responses.is_empty()) {
                    (Some(one), true) => vec![one.clone()],
                    (None, false) => r.responses.clone(),
                    _ => return Err(ScriptError::NoResponse { row: i }),
                };
                Ok(CompiledRow {
                    template: r.template,
                    contains: r.contains.clone(),
                    regex: compile(i, &r.regex)?,
                    for_each: compile(i, &r.for_each)?,
                    responses,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            rows,
            seed,
            dim: dim.max(1),
        })
    }

    pub fn from_toml(text: &str, seed: u64) -> Result<Self, ScriptError> {
        let table: ScriptTable = toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        Self::new(&table, seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn pick<'a>(&self, row: &'a CompiledRow, request: &PromptRequest) -> &'a str {
        if row.responses.len() == 1 {
            return &row.responses[0];
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(request.template_id().as_str().as_bytes());
        h.update([0u8]);
        h.update(request.rendered_text().as_bytes());
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        &row.responses[(u64::from_le_bytes(word) % row.responses.len() as u64) as usize]
    }

    fn respond(&self, row: &CompiledRow, request: &PromptRequest) -> Option<String> {
        let text = request.rendered_text();
        if !row.contains.iter().all(|needle| text.contains(needle.as_str())) {
            return None;
        }
        let mut vars = HashMap::new();
        if let Some(re) = &row.regex {
            let caps = re.captures(text)?;
            collect_vars(re, &caps, &mut vars);
        }
        let template = self.pick(row, request);
        match &row.for_each {
            None => Some(expand(template, &vars)),
            Some(re) => {
                let lines: Vec<String> = re
                    .captures_iter(text)
                    .map(|caps| {
                        let mut local = vars.clone();
                        collect_vars(re, &caps, &mut local);
                        expand(template, &local)
                    })
                    .collect();
                if lines.is_empty() {
                    None
                } else {
                    Some(lines.join("\n"))
                }
            }
        }
    }
}

fn collect_vars(re: &Regex, caps: &regex::Captures<'_>, vars: &mut HashMap<String, String>) {
    for name in re.capture_names().flatten() {
        if let Some(m) = caps.name(name) {
            vars.insert(name.to_string(), m.as_str().to_string());
        }
    }
}

/// Replaces `${name}` with its variable; unknown names expand to nothing.
fn expand(template: &str, vars: &HashMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find("${") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 2..];
        match after.find('}') {
            Some(end) => {
                if let Some(v) = vars.get(&after[..end]) {
                    out.push_str(v);
                }
                rest = &after[end + 1..];
            }
            None => {
                out.push_str("${");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

impl LanguageModel for ScriptedBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let answer = self
            .rows
            .iter()
            .filter(|r| r.template == request.template_id())
            .find_map(|r| self.respond(r, request))
            .ok_or(BackendError::EmptyCompletion(request.template_id()))?;
        if answer.trim().is_empty() {
            return Err(BackendError::EmptyCompletion(request.template_id()));
        }
        Ok(answer)
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let raw: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Some(e) = Embedding::from_raw(raw) {
                return Ok(e);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts;

    fn backend(rows: Vec<ScriptRow>) -> ScriptedBackend {
        ScriptedBackend::new(&ScriptTable::new(rows).with_stock_defaults(), 7).unwrap()
    }

    #[test]
    fn table_lookup_by_substring() {
        let b = backend(vec![
            ScriptRow::new(TemplateId::ImportanceRating, "2").contains("brushing teeth")
        ]);
        let req = prompts::importance_rating("Klaus is brushing teeth").unwrap();
        assert_eq!(b.complete(&req).unwrap(), "2");
        let other = prompts::importance_rating("Klaus got engaged").unwrap();
        assert_eq!(b.complete(&other).unwrap(), "3");
    }

    #[test]
    fn first_matching_row_wins() {
        let b = backend(vec![
            ScriptRow::new(TemplateId::Emoji, "A").contains("emails"),
            ScriptRow::new(TemplateId::Emoji, "B").contains("checking"),
        ]);
        let req = prompts::emoji("Isabella", "checking her emails").unwrap();
        assert_eq!(b.complete(&req).unwrap(), "A");
    }

    #[test]
    fn missing_default_rejected() {
        let table = ScriptTable::new(vec![ScriptRow::new(TemplateId::Emoji, "x").contains("y")]);
        assert!(matches!(
            ScriptedBackend::new(&table, 0),
            Err(ScriptError::MissingDefault(_))
        ));
    }

    #[test]
    fn bad_regex_and_missing_response_rejected() {
        let table = ScriptTable::new(vec![ScriptRow::new(TemplateId::Emoji, "x").regex("(")]).with_stock_defaults();
        assert!(matches!(
            ScriptedBackend::new(&table, 0),
            Err(ScriptError::BadRegex { row: 0, .. })
        ));
        let mut row = ScriptRow::new(TemplateId::Emoji, "x").contains("y");
        row.response = None;
        let table = ScriptTable::new(vec![row]).with_stock_defaults();
        assert!(matches!(
            ScriptedBackend::new(&table, 0),
            Err(ScriptError::NoResponse { row: 0 })
        ));
    }

    #[test]
    fn regex_captures_expand() {
        let b = backend(vec![
            ScriptRow::new(TemplateId::Emoji, "<${who}>").regex(r"Action: (?P<who>\w+) is")
        ]);
        let req = prompts::emoji("Maria", "reading").unwrap();
        assert_eq!(b.complete(&req).unwrap(), "<Maria>");
    }

    #[test]
    fn for_each_expands_per_match() {
        let b = backend(vec![ScriptRow::new(TemplateId::Decompose, "${slot}: ${task} step")
            .regex(r"plan entry: \d\d:\d\d \(\d+m\): (?P<task>.+)")
            .for_each(r"(?m)^> (?P<slot>\d\d:\d\d \(\d+m\))$")]);
        let slots = vec!["09:00 (60m)".to_string(), "10:00 (30m)".to_string()];
        let req = prompts::decompose(prompts::Split {
            name: "Klaus",
            description: "writing",
            start: "09:00",
            end: "10:30",
            minutes: 90,
            granularity: 60,
            slots: &slots,
        })
        .unwrap();
        assert_eq!(
            b.complete(&req).unwrap(),
            "09:00 (60m): writing step\n10:00 (30m): writing step"
        );
    }

    #[test]
    fn alternatives_depend_on_seed_and_text_only() {
        let row = ScriptRow::new(TemplateId::Utterance, "")
            .contains("Turns so far")
            .alternatives((0..16).map(|i| format!("line {i}")).collect());
        let table = ScriptTable::new(vec![row]).with_stock_defaults();
        let a = ScriptedBackend::new(&table, 1).unwrap();
        let a2 = ScriptedBackend::new(&table, 1).unwrap();
        let req = prompts::utterance_next("A", "B", "s", "", "A: hi", 1).unwrap();
        assert_eq!(a.complete(&req).unwrap(), a2.complete(&req).unwrap());
        let picks: std::collections::HashSet<String> = (0..32)
            .map(|seed| ScriptedBackend::new(&table, seed).unwrap().complete(&req).unwrap())
            .collect();
        assert!(picks.len() > 1);
    }

    #[test]
    fn embedding_is_deterministic_unit_norm() {
        let b = backend(vec![]);
        let e1 = b.embed("morning coffee").unwrap();
        let e2 = b.embed("morning coffee").unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.dim(), 64);
        assert!((e1.norm() - 1.0).abs() <= 1e-6);
        assert!((e1.cosine(&e2) - 1.0).abs() <= 1e-6);
        let c = b.embed("a").unwrap().cosine(&b.embed("b").unwrap());
        assert!((-1.0..=1.0).contains(&c));
        assert!(b.embed("").is_err());
    }

    #[test]
    fn parses_toml_table() {
        let text = r#"
[[rows]]
template = "emoji"
contains = ["emails"]
response = "💻✉️"
"#;
        let table: ScriptTable = toml::from_str(text).unwrap();
        let b = ScriptedBackend::new(&table.with_stock_defaults(), 0).unwrap();
        let req = prompts::emoji("Isabella Rodriguez", "checking her emails").unwrap();
        assert_eq!(b.complete(&req).unwrap(), "💻✉️");
    }

    #[test]
    fn expand_handles_unknown_and_unterminated() {
        let vars = HashMap::from([("a".to_string(), "1".to_string())]);
        assert_eq!(expand("${a}-${b}-${c", &vars), "1--${c");
    }
}
