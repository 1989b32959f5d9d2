//! The tick loop. Each tick applies scheduled world changes, then gives every
//! agent one turn in scenario order: perceive, store observations, react to
//! what is new (by talking or by revising the plan), follow the plan, move one
//! hop, refresh the status emoji and reflect once enough has happened.
//! Everything the loop does is reported as a [`SimEvent`].

mod config;
mod event;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use config::{
    AgentConfig, BackendConfig, ConfigError, DialogueConfig, PlanningConfig, ReflectionConfig, ScenarioConfig,
    ScheduledChange, ScriptedConfig,
};
pub use event::{read_events, EventKind, EventWriter, SimEvent};

use crate::dialogue::{self, DialogueState};
use crate::llm::LanguageModel;
use crate::memory::{MemoryError, MemoryKind, MemoryStream};
use crate::planning::{self, DayPlan, PlanNode, ReplanContext};
use crate::reflection;
use crate::retrieval::RetrievalWeights;
use crate::summaries::{self, AgentSummaryDescription, SummaryError};
use crate::time::SimTime;
use crate::world::{self, Visibility, WorldTree};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const STATE_FILE: &str = "state.json";
pub const MEMORY_DIR: &str = "memory";
const SNAPSHOT_FORMAT: u32 = 1;
const SLEEPING: &str = "sleeping";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },
    #[error("{path} line {line}: {reason}")]
    EventLog { path: PathBuf, line: usize, reason: String },
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
}

impl EngineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EngineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// What an agent is doing. Consecutive plan entries with the same text count
/// as one action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub name: String,
    pub area: String,
    /// Remaining hops to the current destination.
    pub route: Vec<String>,
    pub action: Option<Action>,
    pub emoji: String,
    pub plan: Option<DayPlan>,
    pub summary: Option<AgentSummaryDescription>,
    /// Observation texts from the agent's previous turn.
    pub last_observations: BTreeSet<String>,
    pub visited: BTreeSet<String>,
    /// Time of the last conversation with each partner.
    pub last_talked: BTreeMap<String, SimTime>,
}

impl AgentState {
    pub fn action_text(&self) -> &str {
        self.action.as_ref().map_or("idle", |a| a.description.as_str())
    }
}

/// Everything besides the memory streams that a resumed run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Ticks executed so far.
    pub tick: u64,
    /// Time of the next tick.
    pub now: SimTime,
    /// Index into the time-sorted scheduled changes.
    pub next_change: usize,
    pub world: WorldTree,
    pub agents: Vec<AgentState>,
    pub dialogues: Vec<DialogueState>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: u32,
    config: ScenarioConfig,
    state: SimState,
}

/// Observation of a co-located agent or object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Percept {
    pub entity: String,
    pub status: String,
    /// Index of the observed agent, if it is one.
    pub agent: Option<usize>,
}

impl Percept {
    pub fn text(&self) -> String {
        format!("{} is {}", self.entity, self.status)
    }
}

struct Emitter {
    tick: u64,
    time: SimTime,
    events: Vec<SimEvent>,
}

impl Emitter {
    fn emit(
        &mut self,
        agent: Option<&str>,
        kind: EventKind,
        payload: impl Into<String>,
        detail: Option<serde_json::Value>,
    ) {
        self.events.push(SimEvent {
            tick: self.tick,
            time: self.time,
            agent: agent.map(str::to_string),
            kind,
            payload: payload.into(),
            detail,
        });
    }

    fn error(&mut self, agent: &str, step: &str, err: impl std::fmt::Display) {
        log::warn!("{agent}: {step} failed: {err}");
        self.emit(
            Some(agent),
            EventKind::Error,
            format!("{step}: {err}"),
            Some(json!({ "step": step })),
        );
    }
}

fn memory_file(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:02}_{clean}.jsonl")
}

fn two_mut<T>(items: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (left, right) = items.split_at_mut(b);
        (&mut left[a], &mut right[0])
    } else {
        let (left, right) = items.split_at_mut(a);
        (&mut right[0], &mut left[b])
    }
}

/// Cached agent summary, recomputed once older than `refresh` minutes.
fn cached_summary(
    agent: &mut AgentState,
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    weights: &RetrievalWeights,
    refresh: u32,
    now: SimTime,
) -> Result<String, SummaryError> {
    if let Some(s) = &agent.summary {
        if now >= s.as_of && now.0 - s.as_of.0 < u64::from(refresh) {
            return Ok(s.combined.clone());
        }
    }
    let fresh = summaries::agent_summary_description(&agent.name, stream, llm, weights, now)?;
    let combined = fresh.combined.clone();
    agent.summary = Some(fresh);
    Ok(combined)
}

pub struct Simulation {
    config: ScenarioConfig,
    llm: Arc<dyn LanguageModel>,
    state: SimState,
    streams: Vec<MemoryStream>,
    schedule: Vec<ScheduledChange>,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

fn sorted_schedule(config: &ScenarioConfig) -> Vec<ScheduledChange> {
    let mut s = config.world_events.clone();
    s.sort_by_key(ScheduledChange::time);
    s
}

impl Simulation {
    /// Builds the configured backend and initializes the simulation.
    /// Returns the initialization events (tick 0).
    pub fn new(config: ScenarioConfig) -> Result<(Self, Vec<SimEvent>), EngineError> {
        let llm = config.backend.build(config.seed)?;
        Self::with_backend(config, llm)
    }

    /// Like [`Simulation::new`] with an explicit backend.
    pub fn with_backend(
        config: ScenarioConfig,
        llm: Arc<dyn LanguageModel>,
    ) -> Result<(Self, Vec<SimEvent>), EngineError> {
        config.validate()?;
        let world = WorldTree::from_spec(&config.world).map_err(|e| ConfigError::Invalid {
            path: "world".into(),
            reason: e.to_string(),
        })?;
        let start = config.start_time();
        let mut streams = Vec::new();
        let mut agents = Vec::new();
        for a in &config.agents {
            let mut stream = MemoryStream::new(&a.name);
            for seed in a.seed_memories() {
                stream.append(llm.as_ref(), MemoryKind::Observation, seed, start, BTreeSet::new())?;
            }
            streams.push(stream);
            agents.push(AgentState {
                name: a.name.clone(),
                area: a.start_area.clone(),
                route: Vec::new(),
                action: None,
                emoji: String::new(),
                plan: None,
                summary: None,
                last_observations: BTreeSet::new(),
                visited: BTreeSet::from([a.start_area.clone()]),
                last_talked: BTreeMap::new(),
            });
        }
        let schedule = sorted_schedule(&config);
        let mut sim = Simulation {
            config,
            llm,
            state: SimState {
                tick: 0,
                now: start,
                next_change: 0,
                world,
                agents,
                dialogues: Vec::new(),
            },
            streams,
            schedule,
        };
        let mut em = Emitter {
            tick: 0,
            time: start,
            events: Vec::new(),
        };
        for i in 0..sim.state.agents.len() {
            sim.ensure_plan(i, &mut em);
        }
        Ok((sim, em.events))
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn now(&self) -> SimTime {
        self.state.now
    }

    pub fn world(&self) -> &WorldTree {
        &self.state.world
    }

    pub fn llm(&self) -> &dyn LanguageModel {
        self.llm.as_ref()
    }

    pub fn agent_index(&self, name: &str) -> Result<usize, EngineError> {
        self.state
            .agents
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| EngineError::UnknownAgent(name.to_string()))
    }

    pub fn stream(&self, name: &str) -> Result<&MemoryStream, EngineError> {
        Ok(&self.streams[self.agent_index(name)?])
    }

    pub fn stream_mut(&mut self, name: &str) -> Result<&mut MemoryStream, EngineError> {
        let i = self.agent_index(name)?;
        Ok(&mut self.streams[i])
    }

    pub fn streams(&self) -> &[MemoryStream] {
        &self.streams
    }

    /// The agent's summary description as of now, refreshing the cache.
    pub fn agent_summary(&mut self, name: &str) -> Result<String, EngineError> {
        let i = self.agent_index(name)?;
        let now = self.state.now;
        Ok(cached_summary(
            &mut self.state.agents[i],
            &mut self.streams[i],
            self.llm.as_ref(),
            &self.config.retrieval,
            self.config.summary_refresh_minutes,
            now,
        )?)
    }

    /// Runs `n` ticks and returns their events.
    pub fn run_ticks(&mut self, n: u64) -> Vec<SimEvent> {
        (0..n).flat_map(|_| self.tick()).collect()
    }

    pub fn tick(&mut self) -> Vec<SimEvent> {
        let now = self.state.now;
        let mut em = Emitter {
            tick: self.state.tick + 1,
            time: now,
            events: Vec::new(),
        };
        while let Some(change) = self.schedule.get(self.state.next_change) {
            if change.time() > now {
                break;
            }
            if let Err(e) = self
                .state
                .world
                .update_object_state(&change.area, &change.object, &change.status)
            {
                em.emit(None, EventKind::Error, format!("world change: {e}"), None);
            }
            self.state.next_change += 1;
        }
        for ev in self.state.world.take_events() {
            em.emit(
                None,
                EventKind::WorldChange,
                ev.describe(),
                Some(json!({ "area": ev.area, "object": ev.object, "status": ev.status })),
            );
        }
        for i in 0..self.state.agents.len() {
            self.agent_turn(i, &mut em);
        }
        self.state.tick += 1;
        self.state.now = now.plus(u64::from(self.config.tick_minutes));
        em.events
    }

    fn agent_turn(&mut self, i: usize, em: &mut Emitter) {
        let name = self.state.agents[i].name.clone();
        let before = em.events.len();
        let awake = self.ensure_plan(i, em);
        if awake {
            let percepts = self.perceive(i);
            let texts: BTreeSet<String> = percepts.iter().map(Percept::text).collect();
            let now = self.state.now;
            for p in &percepts {
                let text = p.text();
                match self.streams[i].append(self.llm.as_ref(), MemoryKind::Observation, &text, now, BTreeSet::new()) {
                    Ok(rec) => {
                        let detail = json!({ "memory_id": rec.id, "entity": p.entity });
                        em.emit(Some(&name), EventKind::Observation, text, Some(detail));
                    }
                    Err(e) => em.error(&name, "store observation", e),
                }
            }
            let novel: Vec<&Percept> = percepts
                .iter()
                .filter(|p| !self.state.agents[i].last_observations.contains(&p.text()))
                .collect();
            for p in novel {
                if self.react(i, p, em) {
                    break;
                }
            }
            self.state.agents[i].last_observations = texts;
        } else {
            self.state.agents[i].last_observations.clear();
        }

        let changed = self.update_action(i, awake, em);
        self.advance(i, em);
        if let Some(action) = changed {
            let emoji = summaries::emojify(&name, &action, self.llm.as_ref());
            self.state.agents[i].emoji = emoji.clone();
            em.emit(
                Some(&name),
                EventKind::StatusEmoji,
                emoji,
                Some(json!({ "action": action })),
            );
        }
        self.maybe_reflect(i, em);

        let own = em.events[before..]
            .iter()
            .any(|e| e.agent.as_deref() == Some(name.as_str()));
        if !own {
            let a = &self.state.agents[i];
            em.emit(
                Some(&name),
                EventKind::Heartbeat,
                format!("{} is {}", name, a.action_text()),
                Some(json!({ "area": a.area })),
            );
        }
    }

    fn is_awake(&self, i: usize, now: SimTime) -> bool {
        let (wake, sleep) = self.config.agents[i].window().on_day(now.day());
        wake <= now && now < sleep
    }

    /// Makes sure an awake agent has today's plan. Returns whether the
    /// agent is awake.
    fn ensure_plan(&mut self, i: usize, em: &mut Emitter) -> bool {
        let now = self.state.now;
        if !self.is_awake(i, now) {
            return false;
        }
        let today = now.day();
        if self.state.agents[i].plan.as_ref().is_some_and(|p| p.day == today) {
            return true;
        }
        let name = self.state.agents[i].name.clone();
        let llm = self.llm.as_ref();
        let cfg = &self.config.agents[i];
        let window = cfg.window();
        let summary = match cached_summary(
            &mut self.state.agents[i],
            &mut self.streams[i],
            llm,
            &self.config.retrieval,
            self.config.summary_refresh_minutes,
            now,
        ) {
            Ok(s) => s,
            Err(e) => {
                em.error(&name, "agent summary", e);
                format!("Name: {name}")
            }
        };
        let previous = match summaries::previous_day_summary(
            &name,
            &mut self.streams[i],
            llm,
            &self.config.retrieval,
            today,
            &cfg.yesterday,
            now,
        ) {
            Ok(s) => s,
            Err(e) => {
                em.error(&name, "previous day summary", e);
                String::new()
            }
        };
        let plan = match planning::plan_day(&name, &mut self.streams[i], llm, window, &summary, &previous, today) {
            Ok(mut plan) => {
                for e in planning::refine_plan(&mut plan, &self.config.planning.granularities, llm) {
                    em.error(&name, "decompose plan", e);
                }
                em.emit(
                    Some(&name),
                    EventKind::Plan,
                    plan.render(),
                    Some(json!({ "day": today, "depth": plan.depth(), "revision": false })),
                );
                plan
            }
            Err(e) => {
                em.error(&name, "plan day", e);
                let (wake, _) = window.on_day(today);
                DayPlan {
                    agent: name.clone(),
                    day: today,
                    wake,
                    sleep: window.on_day(today).1,
                    roots: vec![PlanNode::new("going about the day", wake, window.minutes())],
                }
            }
        };
        self.state.agents[i].plan = Some(plan);
        true
    }

    /// Co-located agents first (scenario order), then the area's objects.
    pub fn perceive(&self, i: usize) -> Vec<Percept> {
        let me = &self.state.agents[i];
        let mut out: Vec<Percept> = self
            .state
            .agents
            .iter()
            .enumerate()
            .filter(|(j, a)| *j != i && a.area == me.area)
            .map(|(j, a)| Percept {
                entity: a.name.clone(),
                status: a.action_text().to_string(),
                agent: Some(j),
            })
            .collect();
        if let Ok(objects) = self.state.world.objects_in(&me.area) {
            out.extend(objects.into_iter().map(|(name, status)| Percept {
                entity: name.to_string(),
                status: status.to_string(),
                agent: None,
            }));
        }
        out
    }

    fn can_talk(&self, i: usize, j: usize) -> bool {
        let now = self.state.now;
        if i == j || !self.is_awake(j, now) {
            return false;
        }
        let cooldown = u64::from(self.config.dialogue.cooldown_minutes);
        match self.state.agents[i].last_talked.get(&self.state.agents[j].name) {
            Some(t) => now.0 >= t.0 + cooldown,
            None => true,
        }
    }

    /// Decides whether to react to one observation and carries the reaction
    /// out. Returns true if the agent reacted.
    fn react(&mut self, i: usize, p: &Percept, em: &mut Emitter) -> bool {
        let now = self.state.now;
        let name = self.state.agents[i].name.clone();
        let llm = self.llm.as_ref();
        let weights = &self.config.retrieval;
        let summary = match cached_summary(
            &mut self.state.agents[i],
            &mut self.streams[i],
            llm,
            weights,
            self.config.summary_refresh_minutes,
            now,
        ) {
            Ok(s) => s,
            Err(e) => {
                em.error(&name, "agent summary", e);
                return false;
            }
        };
        let entity = match summaries::observed_entity_summary(
            &name,
            &mut self.streams[i],
            llm,
            weights,
            &p.entity,
            &p.status,
            now,
        ) {
            Ok(e) => e,
            Err(e) => {
                em.error(&name, "entity summary", e);
                return false;
            }
        };
        let text = p.text();
        let decision = match summaries::decide_reaction(&name, &summary, &entity.combined, &text, llm) {
            Ok(d) => d,
            Err(e) => {
                em.error(&name, "reaction", e);
                return false;
            }
        };
        if !decision.react {
            return false;
        }
        if dialogue::is_dialogue_reaction(&decision.reaction_text, &self.config.dialogue.verbs) {
            return match p.agent {
                Some(j) if self.can_talk(i, j) => {
                    self.converse(i, j, &summary, &entity.combined, &decision.reaction_text, em);
                    true
                }
                // already talked recently, or the other agent is asleep
                _ => false,
            };
        }
        let Some(plan) = self.state.agents[i].plan.clone() else {
            return false;
        };
        let ctx = ReplanContext {
            agent_summary: &summary,
            entity_summary: &entity.combined,
            observation: &text,
            reaction: &decision.reaction_text,
            reaction_minutes: self.config.planning.reaction_minutes,
        };
        match planning::replan(
            &plan,
            &mut self.streams[i],
            llm,
            now,
            ctx,
            &self.config.planning.granularities,
        ) {
            Ok(revised) => {
                em.emit(
                    Some(&name),
                    EventKind::Plan,
                    revised.render(),
                    Some(json!({
                        "day": revised.day,
                        "depth": revised.depth(),
                        "revision": true,
                        "reaction": decision.reaction_text,
                        "observation": text,
                    })),
                );
                self.state.agents[i].plan = Some(revised);
                true
            }
            Err(e) => {
                em.error(&name, "replan", e);
                false
            }
        }
    }

    /// Runs a whole conversation within the current tick; neither
    /// participant does anything else in between.
    fn converse(&mut self, i: usize, j: usize, summary: &str, entity: &str, reaction: &str, em: &mut Emitter) {
        let now = self.state.now;
        let llm = self.llm.as_ref();
        let cfg = &self.config.dialogue;
        let me = self.state.agents[i].name.clone();
        let partner = self.state.agents[j].name.clone();
        let id = self.state.dialogues.len();
        let turn_event = |em: &mut Emitter, d: &DialogueState| {
            let t = d.turns.last().expect("dialogue has turns");
            let to = d.partner_of(&t.speaker).unwrap_or_default().to_string();
            em.emit(
                Some(&t.speaker),
                EventKind::DialogueTurn,
                t.text.clone(),
                Some(json!({ "dialogue": id, "turn": d.turns.len() - 1, "to": to })),
            );
        };
        let mut d = match dialogue::open_dialogue(&me, &partner, summary, entity, reaction, llm, now, cfg.max_turns) {
            Ok(d) => d,
            Err(e) => {
                em.error(&me, "open dialogue", e);
                return;
            }
        };
        turn_event(em, &d);
        while d.open {
            let speaker = d.next_speaker().to_string();
            let k = if speaker == me { i } else { j };
            let speaker_summary = match cached_summary(
                &mut self.state.agents[k],
                &mut self.streams[k],
                llm,
                &self.config.retrieval,
                self.config.summary_refresh_minutes,
                now,
            ) {
                Ok(s) => s,
                Err(e) => {
                    em.error(&speaker, "agent summary", e);
                    format!("Name: {speaker}")
                }
            };
            match dialogue::next_utterance(&mut d, &speaker, &speaker_summary, llm, now) {
                Ok(Some(_)) => turn_event(em, &d),
                Ok(None) => {}
                Err(e) => {
                    em.error(&speaker, "utterance", e);
                    d.abort(now);
                }
            }
            if let Err(e) = dialogue::maybe_compact(&mut d, cfg.budget_chars, llm) {
                em.error(&me, "compact dialogue", e);
            }
        }
        let (si, sj) = two_mut(&mut self.streams, i, j);
        match dialogue::finalize(&mut d, [si, sj], llm) {
            Ok((summary, written)) => {
                let memory: BTreeMap<String, Vec<u64>> = written
                    .iter()
                    .map(|w| {
                        let mut ids = vec![w.summary_id];
                        ids.extend(&w.utterance_ids);
                        (w.agent.clone(), ids)
                    })
                    .collect();
                em.emit(
                    Some(&me),
                    EventKind::DialogueSummary,
                    summary,
                    Some(json!({
                        "dialogue": id,
                        "participants": d.participants,
                        "turns": d.turns.len(),
                        "transcript_chars": d.transcript().chars().count(),
                        "rolling_summary": d.rolling_summary,
                        "close_reason": d.close_reason,
                        "memory": memory,
                    })),
                );
            }
            Err(e) => em.error(&me, "finalize dialogue", e),
        }
        self.state.agents[i].last_talked.insert(partner.clone(), now);
        self.state.agents[j].last_talked.insert(me, now);
        self.state.dialogues.push(d);
    }

    /// Follows the plan. On a new action, picks where to do it and sets the
    /// route. Returns the new action's description if it changed.
    fn update_action(&mut self, i: usize, awake: bool, em: &mut Emitter) -> Option<String> {
        let now = self.state.now;
        let name = self.state.agents[i].name.clone();
        let action = match (awake, self.state.agents[i].plan.as_ref()) {
            (true, Some(plan)) => match plan.current_action(now) {
                Ok(node) => Action {
                    description: node.description.clone(),
                    start: Some(node.start),
                },
                Err(e) => {
                    em.error(&name, "current action", e);
                    Action {
                        description: "idle".into(),
                        start: None,
                    }
                }
            },
            _ => Action {
                description: SLEEPING.into(),
                start: None,
            },
        };
        if self.state.agents[i].action.as_ref().map(|a| &a.description) == Some(&action.description) {
            return None;
        }
        let description = action.description.clone();
        em.emit(
            Some(&name),
            EventKind::ActionChange,
            format!("{name} is {description}"),
            Some(json!({ "action": description, "start": action.start })),
        );
        self.state.agents[i].action = Some(action);

        let agent = &self.state.agents[i];
        let vis = Visibility {
            visited: &agent.visited,
            full: false,
        };
        let dest = world::choose_destination(
            &name,
            &agent.area,
            &description,
            &self.state.world,
            vis,
            self.llm.as_ref(),
        );
        if let Some(reason) = &dest.fallback {
            em.error(&name, "destination", reason);
        }
        let route = match self.state.world.find_path(&agent.area, &dest.area) {
            Ok(path) => path.into_iter().skip(1).collect(),
            Err(e) => {
                em.error(&name, "path", e);
                Vec::new()
            }
        };
        self.state.agents[i].route = route;
        Some(description)
    }

    fn advance(&mut self, i: usize, em: &mut Emitter) {
        let agent = &mut self.state.agents[i];
        if agent.route.is_empty() {
            return;
        }
        let next = agent.route.remove(0);
        let from = std::mem::replace(&mut agent.area, next.clone());
        agent.visited.insert(next.clone());
        em.emit(
            Some(&agent.name),
            EventKind::Movement,
            format!("{} moved from {from} to {next}", agent.name),
            Some(json!({ "from": from, "to": next, "remaining": agent.route.len() })),
        );
    }

    fn maybe_reflect(&mut self, i: usize, em: &mut Emitter) {
        if !reflection::should_reflect(&self.streams[i], self.config.reflection.threshold) {
            return;
        }
        let name = self.state.agents[i].name.clone();
        let weights = self.config.retrieval.with_k(self.config.reflection.insight_k);
        match reflection::reflect(&mut self.streams[i], self.llm.as_ref(), &weights, self.state.now) {
            Ok(r) => {
                for ins in r.insights {
                    em.emit(
                        Some(&name),
                        EventKind::Reflection,
                        ins.text,
                        Some(json!({
                            "memory_id": ins.stored_id,
                            "evidence": ins.evidence,
                            "prompt_indices": ins.prompt_indices,
                            "shown": ins.shown,
                        })),
                    );
                }
            }
            Err(e) => em.error(&name, "reflection", e),
        }
    }

    /// Writes `state.json` and one memory file per agent into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        let mem_dir = dir.join(MEMORY_DIR);
        fs::create_dir_all(&mem_dir).map_err(|e| EngineError::io(&mem_dir, e))?;
        let snapshot = Snapshot {
            format: SNAPSHOT_FORMAT,
            config: self.config.clone(),
            state: self.state.clone(),
        };
        let path = dir.join(STATE_FILE);
        let text = serde_json::to_string_pretty(&snapshot).expect("state serializes");
        fs::write(&path, text + "\n").map_err(|e| EngineError::io(&path, e))?;
        for (i, s) in self.streams.iter().enumerate() {
            s.persist(&mem_dir.join(memory_file(i, s.owner())))?;
        }
        Ok(())
    }

    /// Restores a simulation saved by [`Simulation::save`], rebuilding the
    /// backend from the stored scenario.
    pub fn load(dir: &Path) -> Result<Self, EngineError> {
        let (config, state) = Self::read_snapshot(dir)?;
        let llm = config.backend.build(config.seed)?;
        Self::assemble(dir, config, state, llm)
    }

    pub fn load_with_backend(dir: &Path, llm: Arc<dyn LanguageModel>) -> Result<Self, EngineError> {
        let (config, state) = Self::read_snapshot(dir)?;
        Self::assemble(dir, config, state, llm)
    }

    fn read_snapshot(dir: &Path) -> Result<(ScenarioConfig, SimState), EngineError> {
        let path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| EngineError::io(&path, e))?;
        let bad = |reason: String| EngineError::Snapshot {
            path: path.clone(),
            reason,
        };
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(bad(format!("unsupported format {}", snap.format)));
        }
        snap.config.validate()?;
        if snap.state.agents.len() != snap.config.agents.len()
            || snap
                .state
                .agents
                .iter()
                .zip(&snap.config.agents)
                .any(|(s, c)| s.name != c.name)
        {
            return Err(bad("agents do not match the stored scenario".into()));
        }
        Ok((snap.config, snap.state))
    }

    fn assemble(
        dir: &Path,
        config: ScenarioConfig,
        state: SimState,
        llm: Arc<dyn LanguageModel>,
    ) -> Result<Self, EngineError> {
        let mut streams = Vec::new();
        for (i, a) in state.agents.iter().enumerate() {
            let path = dir.join(MEMORY_DIR).join(memory_file(i, &a.name));
            streams.push(MemoryStream::load(&a.name, &path).map_err(|e| match e {
                MemoryError::Io(source) => EngineError::Io { path, source },
                other => EngineError::Memory(other),
            })?);
        }
        let schedule = sorted_schedule(&config);
        Ok(Simulation {
            config,
            llm,
            state,
            streams,
            schedule,
        })
    }
}

/// Runs a fresh simulation for `ticks` ticks, writing the event log and a
/// final snapshot into `out`.
pub fn run(config: ScenarioConfig, ticks: u64, out: &Path) -> Result<Vec<SimEvent>, EngineError> {
    let (sim, init) = Simulation::new(config)?;
    run_into(sim, init, ticks, out, false)
}

/// Continues the snapshot in `dir` for `ticks` more ticks, appending to its
/// event log. Returns only the new events.
pub fn resume(dir: &Path, ticks: u64) -> Result<Vec<SimEvent>, EngineError> {
    let sim = Simulation::load(dir)?;
    run_into(sim, Vec::new(), ticks, dir, true)
}

fn run_into(
    mut sim: Simulation,
    first: Vec<SimEvent>,
    ticks: u64,
    out: &Path,
    append: bool,
) -> Result<Vec<SimEvent>, EngineError> {
    fs::create_dir_all(out).map_err(|e| EngineError::io(out, e))?;
    let log = out.join(EVENTS_FILE);
    let mut writer = if append {
        EventWriter::append(&log)?
    } else {
        EventWriter::create(&log)?
    };
    writer.write(&first)?;
    let mut all = first;
    for _ in 0..ticks {
        let events = sim.tick();
        writer.write(&events)?;
        all.extend(events);
    }
    writer.finish()?;
    sim.save(out)?;
    Ok(all)
}

/// Per-day counts for the run digest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayDigest {
    pub day: u32,
    pub events: usize,
    pub reflections: BTreeMap<String, usize>,
    pub dialogues: usize,
    pub errors: usize,
}

pub fn digest(events: &[SimEvent]) -> Vec<DayDigest> {
    let mut days: BTreeMap<u32, DayDigest> = BTreeMap::new();
    for e in events {
        let day = e.time.day();
        let d = days.entry(day).or_insert_with(|| DayDigest {
            day,
            ..Default::default()
        });
        d.events += 1;
        match e.kind {
            EventKind::Reflection => {
                *d.reflections.entry(e.agent.clone().unwrap_or_default()).or_default() += 1;
            }
            EventKind::DialogueSummary => d.dialogues += 1,
            EventKind::Error => d.errors += 1,
            _ => {}
        }
    }
    days.into_values().collect()
}
