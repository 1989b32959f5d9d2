//! Scenario files (TOML). Loading resolves external script tables so a
//! validated config is self-contained and can be stored in snapshots.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    HttpBackend, HttpConfig, LanguageModel, ScriptRow, ScriptTable, ScriptedBackend, DEFAULT_EMBEDDING_DIM,
};
use crate::planning::WakingWindow;
use crate::retrieval::RetrievalWeights;
use crate::time::{parse_clock, SimTime};
use crate::world::{WorldSpec, WorldTree};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    /// Seed memories separated by semicolons.
    #[serde(default)]
    pub traits: String,
    pub start_area: String,
    #[serde(default = "default_wake")]
    pub wake: String,
    #[serde(default = "default_sleep")]
    pub sleep: String,
    /// Stands in for the previous-day summary on day 1.
    #[serde(default)]
    pub yesterday: String,
}

impl AgentConfig {
    pub fn seed_memories(&self) -> impl Iterator<Item = &str> {
        self.traits.split(';').map(str::trim).filter(|s| !s.is_empty())
    }

    /// Waking window; only meaningful after validation.
    pub fn window(&self) -> WakingWindow {
        let wake = parse_clock(&self.wake).unwrap_or(7 * 60);
        let sleep = parse_clock(&self.sleep).unwrap_or(22 * 60);
        WakingWindow { wake, sleep }
    }
}

fn default_wake() -> String {
    "07:00".into()
}

fn default_sleep() -> String {
    "22:00".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionConfig {
    #[serde(default = "default_threshold")]
    pub threshold: u64,
    #[serde(default = "default_insight_k")]
    pub insight_k: usize,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            insight_k: default_insight_k(),
        }
    }
}

fn default_threshold() -> u64 {
    150
}

fn default_insight_k() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningConfig {
    /// Decomposition chunk sizes in minutes, coarse to fine.
    #[serde(default = "default_granularities")]
    pub granularities: Vec<u32>,
    /// Length of the entry a reaction inserts when the plan is revised.
    #[serde(default = "default_reaction_minutes")]
    pub reaction_minutes: u32,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            granularities: default_granularities(),
            reaction_minutes: default_reaction_minutes(),
        }
    }
}

fn default_granularities() -> Vec<u32> {
    vec![60, 15]
}

fn default_reaction_minutes() -> u32 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueConfig {
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
    #[serde(default = "default_budget")]
    pub budget_chars: usize,
    /// A reaction starting with one of these opens a conversation.
    #[serde(default = "default_verbs")]
    pub verbs: Vec<String>,
    /// Minimum time between two conversations of the same pair.
    #[serde(default = "default_cooldown")]
    pub cooldown_minutes: u32,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            max_turns: default_max_turns(),
            budget_chars: default_budget(),
            verbs: default_verbs(),
            cooldown_minutes: default_cooldown(),
        }
    }
}

fn default_max_turns() -> usize {
    crate::dialogue::DEFAULT_MAX_TURNS
}

fn default_budget() -> usize {
    crate::dialogue::DEFAULT_BUDGET_CHARS
}

fn default_verbs() -> Vec<String> {
    ["greet", "ask", "tell", "talk", "chat", "invite", "say"]
        .into_iter()
        .map(String::from)
        .collect()
}

fn default_cooldown() -> u32 {
    180
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedConfig {
    /// Extra script table file, relative to the scenario file. Its rows come
    /// after the inline rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default)]
    pub rows: Vec<ScriptRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted(ScriptedConfig),
    Http(HttpConfig),
}

impl BackendConfig {
    /// Builds the backend. Scripted tables get stock defaults for any
    /// template the scenario leaves without a default row.
    pub fn build(&self, seed: u64) -> Result<Arc<dyn LanguageModel>, ConfigError> {
        match self {
            BackendConfig::Scripted(s) => {
                let table = ScriptTable::new(s.rows.clone()).with_stock_defaults();
                let dim = s.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
                let backend = ScriptedBackend::with_dim(&table, seed, dim)
                    .map_err(|e| invalid("backend.scripted.rows", e.to_string()))?;
                Ok(Arc::new(backend))
            }
            BackendConfig::Http(h) => {
                let backend = HttpBackend::new(h.clone()).map_err(|e| invalid("backend.http", e.to_string()))?;
                Ok(Arc::new(backend))
            }
        }
    }
}

/// An object status change applied when the clock reaches `day`/`at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledChange {
    pub day: u32,
    pub at: String,
    pub area: String,
    pub object: String,
    pub status: String,
}

impl ScheduledChange {
    pub fn time(&self) -> SimTime {
        SimTime::from_day_minute(self.day, parse_clock(&self.at).unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Clock time on day 1 at which the simulation starts.
    #[serde(default = "default_start")]
    pub start: String,
    #[serde(default = "default_tick")]
    pub tick_minutes: u32,
    /// Cached agent summaries older than this are recomputed.
    #[serde(default = "default_summary_refresh")]
    pub summary_refresh_minutes: u32,
    #[serde(default)]
    pub retrieval: RetrievalWeights,
    #[serde(default)]
    pub reflection: ReflectionConfig,
    #[serde(default)]
    pub planning: PlanningConfig,
    #[serde(default)]
    pub dialogue: DialogueConfig,
    pub backend: BackendConfig,
    pub world: WorldSpec,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub world_events: Vec<ScheduledChange>,
}

fn default_start() -> String {
    "07:00".into()
}

fn default_tick() -> u32 {
    15
}

fn default_summary_refresh() -> u32 {
    180
}

impl ScenarioConfig {
    /// Parses and validates a scenario. `base` is the directory external
    /// script files are resolved against.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let BackendConfig::Scripted(s) = &mut config.backend {
            if let Some(rel) = s.script.take() {
                let path = base.join(&rel);
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let table: ScriptTable = toml::from_str(&text)
                    .map_err(|e| invalid("backend.scripted.script", format!("{}: {e}", path.display())))?;
                s.rows.extend(table.rows);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn start_time(&self) -> SimTime {
        SimTime::from_day_minute(1, parse_clock(&self.start).unwrap_or(0))
    }

    pub fn agent_names(&self) -> impl Iterator<Item = &str> {
        self.agents.iter().map(|a| a.name.as_str())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match parse_clock(&self.start) {
            Some(m) if m < 24 * 60 => {}
            _ => return Err(invalid("start", format!("{:?} is not a clock time", self.start))),
        }
        self.retrieval
            .validate()
            .map_err(|e| invalid("retrieval", e.to_string()))?;
        if self.reflection.threshold == 0 {
            return Err(invalid("reflection.threshold", "must be positive"));
        }
        if self.reflection.insight_k == 0 {
            return Err(invalid("reflection.insight_k", "must be positive"));
        }
        let grans = &self.planning.granularities;
        if grans.is_empty() {
            return Err(invalid("planning.granularities", "must not be empty"));
        }
        if grans.contains(&0) || grans.windows(2).any(|w| w[0] <= w[1]) {
            return Err(invalid(
                "planning.granularities",
                "must be positive and strictly decreasing",
            ));
        }
        if self.planning.reaction_minutes == 0 {
            return Err(invalid("planning.reaction_minutes", "must be positive"));
        }
        let leaf = *grans.last().unwrap();
        if self.tick_minutes == 0 || !leaf.is_multiple_of(self.tick_minutes) {
            return Err(invalid(
                "tick_minutes",
                format!(
                    "{} must be positive and divide the finest granularity {leaf}",
                    self.tick_minutes
                ),
            ));
        }
        if self.summary_refresh_minutes == 0 {
            return Err(invalid("summary_refresh_minutes", "must be positive"));
        }
        if self.dialogue.max_turns == 0 {
            return Err(invalid("dialogue.max_turns", "must be positive"));
        }
        if self.dialogue.budget_chars == 0 {
            return Err(invalid("dialogue.budget_chars", "must be positive"));
        }
        if let BackendConfig::Scripted(s) = &self.backend {
            if s.embedding_dim == Some(0) {
                return Err(invalid("backend.scripted.embedding_dim", "must be positive"));
            }
            ScriptedBackend::new(&ScriptTable::new(s.rows.clone()).with_stock_defaults(), self.seed)
                .map_err(|e| invalid("backend.scripted.rows", e.to_string()))?;
        }

        let world = WorldTree::from_spec(&self.world).map_err(|e| invalid("world", e.to_string()))?;
        if self.agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        let mut names = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            let at = |field: &str| format!("agents[{i}].{field}");
            if a.name.trim().is_empty() || a.name.trim() != a.name {
                return Err(invalid(at("name"), "must be non-empty without surrounding spaces"));
            }
            if !names.insert(a.name.as_str()) {
                return Err(invalid(at("name"), format!("duplicate agent {:?}", a.name)));
            }
            if !world.is_leaf_area(&a.start_area) {
                return Err(invalid(
                    at("start_area"),
                    format!("{:?} is not a leaf area", a.start_area),
                ));
            }
            let wake =
                parse_clock(&a.wake).ok_or_else(|| invalid(at("wake"), format!("{:?} is not a clock time", a.wake)))?;
            let sleep = parse_clock(&a.sleep)
                .ok_or_else(|| invalid(at("sleep"), format!("{:?} is not a clock time", a.sleep)))?;
            WakingWindow::new(wake, sleep).map_err(|e| invalid(at("sleep"), e.to_string()))?;
        }
        for (i, c) in self.world_events.iter().enumerate() {
            let at = |field: &str| format!("world_events[{i}].{field}");
            if c.day == 0 {
                return Err(invalid(at("day"), "days are numbered from 1"));
            }
            match parse_clock(&c.at) {
                Some(m) if m < 24 * 60 => {}
                _ => return Err(invalid(at("at"), format!("{:?} is not a clock time", c.at))),
            }
            world
                .object_status(&c.area, &c.object)
                .map_err(|e| invalid(at("object"), e.to_string()))?;
            if c.status.trim().is_empty() {
                return Err(invalid(at("status"), "must not be empty"));
            }
        }
        Ok(())
    }
}
