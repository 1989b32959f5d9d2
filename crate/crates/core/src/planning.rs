//! Coarse-to-fine day planning.
//!
//! A day plan is a list of broad entries tiling the agent's waking window;
//! each entry is recursively split into finer chunks (60 then 15 minutes by
//! default). Plans are exchanged with the backend in the line grammar
//! `HH:MM (Nm): description`. The `HH:MM` prefix may be omitted, in which
//! case the entry starts where the previous one ended.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{prompts, BackendError, LanguageModel, PromptRequest};
use crate::memory::{MemoryError, MemoryKind, MemoryStream};
use crate::time::{format_clock, SimTime, MINUTES_PER_DAY};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("malformed plan completion: {0}")]
    MalformedCompletion(String),
    #[error("plan does not tile its window: {0}")]
    NonTilingPlan(String),
    #[error("{0} is outside the plan window")]
    OutsidePlanWindow(SimTime),
    #[error("invalid waking window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub description: String,
    pub start: SimTime,
    /// Minutes, always positive.
    pub duration: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn new(description: impl Into<String>, start: SimTime, duration: u32) -> Self {
        Self {
            description: description.into(),
            start,
            duration,
            children: Vec::new(),
        }
    }

    pub fn end(&self) -> SimTime {
        self.start.plus(u64::from(self.duration))
    }

    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end()
    }

    /// Levels below this node (0 for a leaf).
    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| c.depth() + 1).max().unwrap_or(0)
    }

    /// `HH:MM (Nm): description`
    pub fn plan_line(&self) -> String {
        format!("{} ({}m): {}", self.start.clock(), self.duration, self.description)
    }

    /// Checks that children (at every level) exactly tile their parent.
    pub fn check_tiling(&self) -> Result<(), String> {
        if self.duration == 0 {
            return Err(format!("{:?} has zero duration", self.description));
        }
        if !self.children.is_empty() {
            check_tiles(&self.children, self.start, self.end())?;
            for c in &self.children {
                c.check_tiling()?;
            }
        }
        Ok(())
    }

    /// Copy of the node cut at `at`, keeping only the part before it.
    /// Returns `None` when nothing precedes `at`.
    fn truncated(&self, at: SimTime) -> Option<PlanNode> {
        if at <= self.start {
            return None;
        }
        if at >= self.end() {
            return Some(self.clone());
        }
        Some(PlanNode {
            description: self.description.clone(),
            start: self.start,
            duration: (at.0 - self.start.0) as u32,
            children: self.children.iter().filter_map(|c| c.truncated(at)).collect(),
        })
    }
}

/// Checks that `nodes` cover `[from, to)` contiguously with positive durations.
pub fn check_tiles(nodes: &[PlanNode], from: SimTime, to: SimTime) -> Result<(), String> {
    let mut cursor = from;
    for n in nodes {
        if n.duration == 0 {
            return Err(format!("entry at {} has zero duration", n.start.clock()));
        }
        match n.start.cmp(&cursor) {
            std::cmp::Ordering::Greater => return Err(format!("gap from {} to {}", cursor.clock(), n.start.clock())),
            std::cmp::Ordering::Less => return Err(format!("entry at {} overlaps the previous one", n.start.clock())),
            std::cmp::Ordering::Equal => {}
        }
        cursor = n.end();
    }
    if cursor != to {
        return Err(format!("entries end at {} instead of {}", cursor.clock(), to.clock()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayPlan {
    pub agent: String,
    pub day: u32,
    pub wake: SimTime,
    pub sleep: SimTime,
    pub roots: Vec<PlanNode>,
}

impl DayPlan {
    pub fn check_tiling(&self) -> Result<(), String> {
        check_tiles(&self.roots, self.wake, self.sleep)?;
        self.roots.iter().try_for_each(PlanNode::check_tiling)
    }

    pub fn depth(&self) -> usize {
        self.roots.iter().map(PlanNode::depth).max().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let entries: Vec<String> = self.roots.iter().map(PlanNode::plan_line).collect();
        format!("{}'s plan for day {}: {}", self.agent, self.day, entries.join("; "))
    }

    /// Deepest node whose half-open interval contains `now`.
    pub fn current_action(&self, now: SimTime) -> Result<&PlanNode, PlanError> {
        let mut node = self
            .roots
            .iter()
            .find(|n| n.contains(now))
            .ok_or(PlanError::OutsidePlanWindow(now))?;
        while let Some(child) = node.children.iter().find(|c| c.contains(now)) {
            node = child;
        }
        Ok(node)
    }
}

/// Agent waking window as minutes of the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WakingWindow {
    pub wake: u32,
    pub sleep: u32,
}

impl WakingWindow {
    pub fn new(wake: u32, sleep: u32) -> Result<Self, PlanError> {
        if wake >= sleep || u64::from(sleep) > MINUTES_PER_DAY {
            return Err(PlanError::InvalidWindow(format!(
                "wake {} must precede sleep {} within one day",
                format_clock(wake),
                format_clock(sleep)
            )));
        }
        Ok(Self { wake, sleep })
    }

    pub fn on_day(self, day: u32) -> (SimTime, SimTime) {
        (
            SimTime::from_day_minute(day, self.wake),
            SimTime::from_day_minute(day, self.sleep),
        )
    }

    pub fn minutes(self) -> u32 {
        self.sleep - self.wake
    }
}

fn plan_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(?:[-*•>]\s*|\d+[.)]\s+)?(?:(?P<clock>\d{1,2}:\d{2})\s*)?\(\s*(?P<dur>\d+)\s*m(?:in(?:utes?)?)?\s*\)\s*:\s*(?P<desc>\S.*?)\s*$",
        )
        .unwrap()
    })
}

/// Parses plan-grammar lines. Times are read relative to `day_start`;
/// entries without a time start where the previous entry ended (the first
/// at `default_start`). Lines outside the grammar are ignored.
pub fn parse_plan(text: &str, day_start: SimTime, default_start: SimTime) -> Result<Vec<PlanNode>, PlanError> {
    let mut nodes: Vec<PlanNode> = Vec::new();
    for line in text.lines() {
        let Some(caps) = plan_line().captures(line) else {
            continue;
        };
        let duration: u32 = caps["dur"]
            .parse()
            .map_err(|_| PlanError::MalformedCompletion(format!("bad duration in {line:?}")))?;
        if duration == 0 {
            return Err(PlanError::MalformedCompletion(format!("zero duration in {line:?}")));
        }
        let start = match caps.name("clock") {
            Some(c) => {
                let m = crate::time::parse_clock(c.as_str())
                    .ok_or_else(|| PlanError::MalformedCompletion(format!("bad time in {line:?}")))?;
                day_start.plus(u64::from(m))
            }
            None => nodes.last().map(PlanNode::end).unwrap_or(default_start),
        };
        nodes.push(PlanNode::new(caps["desc"].trim(), start, duration));
    }
    if nodes.is_empty() {
        return Err(PlanError::MalformedCompletion("no plan entries found".into()));
    }
    Ok(nodes)
}

/// Asks for entries tiling `[from, to)`; a non-tiling or unparseable answer
/// gets one repair prompt.
fn request_tiling(
    llm: &dyn LanguageModel,
    request: &PromptRequest,
    from: SimTime,
    to: SimTime,
) -> Result<Vec<PlanNode>, PlanError> {
    let day_start = from.start_of_day();
    let attempt = |answer: &str| -> Result<Vec<PlanNode>, PlanError> {
        let nodes = parse_plan(answer, day_start, from)?;
        check_tiles(&nodes, from, to).map_err(PlanError::NonTilingPlan)?;
        Ok(nodes)
    };
    let answer = llm.complete(request)?;
    match attempt(&answer) {
        Ok(nodes) => Ok(nodes),
        Err(first) => {
            log::debug!("plan rejected ({first}); asking for a repair");
            let repair = prompts::day_plan_repair(request, &first.to_string(), &answer, &from.clock(), &to.clock())?;
            attempt(&llm.complete(&repair)?)
        }
    }
}

/// Broad-strokes plan for `day`, stored in `stream` as one plan memory.
/// The plan is not yet decomposed.
pub fn plan_day(
    name: &str,
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    window: WakingWindow,
    agent_summary: &str,
    previous_day_summary: &str,
    day: u32,
) -> Result<DayPlan, PlanError> {
    let (wake, sleep) = window.on_day(day);
    let request = prompts::day_plan(
        prompts::PlanWindow {
            name,
            day,
            wake: &wake.clock(),
            sleep: &format_clock(window.sleep),
            minutes: window.minutes(),
        },
        agent_summary,
        previous_day_summary,
    )?;
    let roots = request_tiling(llm, &request, wake, sleep)?;
    let plan = DayPlan {
        agent: name.to_string(),
        day,
        wake,
        sleep,
        roots,
    };
    stream.append(llm, MemoryKind::Plan, &plan.render(), wake, BTreeSet::new())?;
    Ok(plan)
}

/// Consecutive slots of `granularity` minutes covering the node; the last
/// slot may be shorter.
fn slots(node: &PlanNode, granularity: u32) -> Vec<String> {
    let mut out = Vec::new();
    let mut t = node.start;
    while t < node.end() {
        let len = granularity.min((node.end().0 - t.0) as u32);
        out.push(format!("{} ({len}m)", t.clock()));
        t = t.plus(u64::from(len));
    }
    out
}

/// Splits one node into children tiling it. Nodes at or below the
/// granularity are returned unchanged.
pub fn decompose(
    name: &str,
    node: &PlanNode,
    granularity: u32,
    llm: &dyn LanguageModel,
) -> Result<PlanNode, PlanError> {
    if node.duration <= granularity.max(1) {
        return Ok(node.clone());
    }
    let slot_list = slots(node, granularity);
    let request = prompts::decompose(prompts::Split {
        name,
        description: &node.description,
        start: &node.start.clock(),
        end: &node.end().clock(),
        minutes: node.duration,
        granularity,
        slots: &slot_list,
    })?;
    let attempt = |answer: &str| -> Result<Vec<PlanNode>, PlanError> {
        let children = parse_plan(answer, node.start.start_of_day(), node.start)?;
        check_tiles(&children, node.start, node.end()).map_err(PlanError::NonTilingPlan)?;
        Ok(children)
    };
    let children = match attempt(&llm.complete(&request)?) {
        Ok(c) => c,
        Err(_) => attempt(&llm.complete(&request)?)?,
    };
    Ok(PlanNode {
        children,
        ..node.clone()
    })
}

/// Level-by-level refinement: a node longer than the first granularity is
/// split and its children refined with the remaining granularities; a node
/// that is already short enough is refined with the remaining ones directly.
pub fn decompose_recursive(
    name: &str,
    node: &PlanNode,
    granularities: &[u32],
    llm: &dyn LanguageModel,
) -> Result<PlanNode, PlanError> {
    let Some((&g, rest)) = granularities.split_first() else {
        return Ok(node.clone());
    };
    let split = decompose(name, node, g, llm)?;
    if split.children.is_empty() {
        return decompose_recursive(name, &split, rest, llm);
    }
    let children = split
        .children
        .iter()
        .map(|c| decompose_recursive(name, c, rest, llm))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlanNode { children, ..split })
}

/// Decomposes every root that has no children yet. A root whose
/// decomposition fails is left as is; its error is returned alongside.
pub fn refine_plan(plan: &mut DayPlan, granularities: &[u32], llm: &dyn LanguageModel) -> Vec<PlanError> {
    let mut errors = Vec::new();
    for root in plan.roots.iter_mut().filter(|r| r.children.is_empty()) {
        match decompose_recursive(&plan.agent, root, granularities, llm) {
            Ok(refined) => *root = refined,
            Err(e) => errors.push(e),
        }
    }
    errors
}

/// Context of a reaction that triggers a revision of the rest of the day.
#[derive(Debug, Clone, Copy)]
pub struct ReplanContext<'a> {
    pub agent_summary: &'a str,
    pub entity_summary: &'a str,
    pub observation: &'a str,
    pub reaction: &'a str,
    /// Length of the reaction entry in the proposed revision.
    pub reaction_minutes: u32,
}

/// Revises the plan from `now` to bedtime. Nodes ending at or before `now`
/// are kept verbatim, the node running at `now` is cut at `now`, and the
/// backend supplies entries for the remainder, starting from a proposal that
/// puts the reaction first and keeps the rest of the old schedule. New roots
/// identical to old ones keep their decomposition; others are decomposed.
pub fn replan(
    plan: &DayPlan,
    stream: &mut MemoryStream,
    llm: &dyn LanguageModel,
    now: SimTime,
    ctx: ReplanContext<'_>,
    granularities: &[u32],
) -> Result<DayPlan, PlanError> {
    if now < plan.wake || now >= plan.sleep {
        return Err(PlanError::OutsidePlanWindow(now));
    }
    let kept: Vec<PlanNode> = plan.roots.iter().filter_map(|r| r.truncated(now)).collect();

    let reaction_end = now.plus(u64::from(ctx.reaction_minutes.max(1))).min(plan.sleep);
    let mut proposal = vec![PlanNode::new(ctx.reaction, now, (reaction_end.0 - now.0) as u32)];
    for r in &plan.roots {
        let start = r.start.max(reaction_end);
        if start < r.end() {
            proposal.push(PlanNode::new(
                r.description.clone(),
                start,
                (r.end().0 - start.0) as u32,
            ));
        }
    }
    let proposal_lines: Vec<String> = proposal.iter().map(PlanNode::plan_line).collect();
    let request = prompts::replan(prompts::Revision {
        name: &plan.agent,
        agent_summary: ctx.agent_summary,
        entity_summary: ctx.entity_summary,
        observation: ctx.observation,
        reaction: ctx.reaction,
        start: &now.clock(),
        sleep: &plan.sleep.clock(),
        minutes: (plan.sleep.0 - now.0) as u32,
        proposal: &proposal_lines,
    })?;
    let fresh = request_tiling(llm, &request, now, plan.sleep)?;

    let mut roots = kept;
    let mut errors = Vec::new();
    for node in fresh {
        let reused = plan.roots.iter().find(|old| {
            old.start == node.start && old.duration == node.duration && old.description == node.description
        });
        match reused {
            Some(old) => roots.push(old.clone()),
            None => match decompose_recursive(&plan.agent, &node, granularities, llm) {
                Ok(refined) => roots.push(refined),
                Err(e) => {
                    errors.push(e);
                    roots.push(node);
                }
            },
        }
    }
    for e in errors {
        log::warn!("replan decomposition for {} failed: {e}", plan.agent);
    }
    let revised = DayPlan { roots, ..plan.clone() };
    revised.check_tiling().map_err(PlanError::NonTilingPlan)?;
    stream.append(llm, MemoryKind::Plan, &revised.render(), now, BTreeSet::new())?;
    Ok(revised)
}
