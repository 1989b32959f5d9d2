//! Prompt template registry.
//!
//! All prompt text in the engine is produced here. Each template is a
//! `{placeholder}` string registered under a [`TemplateId`]; builder functions
//! fill the placeholders and return a validated [`PromptRequest`]. Templates
//! flagged `verbatim: false` use wording of our own; the flagged `verbatim`
//! ones embed the fixed questions of the agent architecture unchanged.

use super::{BackendError, PromptRequest, TemplateId};

/// One registered template.
#[derive(Debug, Clone, Copy)]
pub struct TemplateSpec {
    pub id: TemplateId,
    /// Name of the variant (several variants may share one id).
    pub variant: &'static str,
    pub text: &'static str,
    pub max_tokens: u32,
    /// True when the template carries a fixed question verbatim.
    pub verbatim: bool,
}

pub const FOCAL_QUESTION: &str = "Given only the information above, what are 3 most salient high-level questions we can answer about the subjects in the statements?";
pub const INSIGHT_QUESTION: &str = "What 5 high-level insights can you infer from the above statements? (example format: insight (because of 1, 5, 3))";
pub const END_MARKER: &str = "[END]";

const IMPORTANCE: TemplateSpec = TemplateSpec {
    id: TemplateId::ImportanceRating,
    variant: "rate",
    text: "On a scale of 1 to 10, where 1 is purely mundane and 10 is extremely poignant, rate the likely poignancy of the following memory.\nMemory: {memory}\nRating:",
    max_tokens: 8,
    verbatim: false,
};

const FOCAL: TemplateSpec = TemplateSpec {
    id: TemplateId::FocalQuestions,
    variant: "questions",
    text: "{statements}\n\nGiven only the information above, what are 3 most salient high-level questions we can answer about the subjects in the statements?",
    max_tokens: 256,
    verbatim: true,
};

const INSIGHTS: TemplateSpec = TemplateSpec {
    id: TemplateId::Insights,
    variant: "insights",
    text: "Statements about {name}\n{statements}\n\nWhat 5 high-level insights can you infer from the above statements? (example format: insight (because of 1, 5, 3))",
    max_tokens: 512,
    verbatim: true,
};

const SUMMARY_PART: TemplateSpec = TemplateSpec {
    id: TemplateId::AgentSummaryPart,
    variant: "section",
    text: "Statements about {name}:\n{statements}\n\nQuery: {query}\nAnswer the query about {name} in one or two sentences, using only the statements above.",
    max_tokens: 160,
    verbatim: false,
};

const PREVIOUS_DAY: TemplateSpec = TemplateSpec {
    id: TemplateId::PreviousDaySummary,
    variant: "summary",
    text: "Statements about {name} from day {day}:\n{statements}\n\nQuery: {query}\nSummarize {name}'s previous day in one or two sentences, using only the statements above.",
    max_tokens: 160,
    verbatim: false,
};

const ENTITY_PART: TemplateSpec = TemplateSpec {
    id: TemplateId::EntitySummaryPart,
    variant: "section",
    text: "Statements from {observer}'s memory:\n{statements}\n\nQuery: {query}\nAnswer the query in one sentence from {observer}'s point of view, using only the statements above.",
    max_tokens: 120,
    verbatim: false,
};

const REACTION: TemplateSpec = TemplateSpec {
    id: TemplateId::Reaction,
    variant: "decide",
    text: "{agent_summary}\n\n{entity_summary}\n\nObservation: {observation}\n\nShould {name} react to the observation, and if so, what would be an appropriate reaction?\nAnswer \"No\" or \"Yes — <reaction>\".",
    max_tokens: 80,
    verbatim: true,
};

const DAY_PLAN: TemplateSpec = TemplateSpec {
    id: TemplateId::DayPlan,
    variant: "day",
    text: "{agent_summary}\n\nYesterday: {previous_day}\n\nToday is day {day}. {name} is awake from {wake} to {sleep}. Write {name}'s plan for today in broad strokes as 5 to 8 entries, one per line, in the form \"HH:MM (Nm): activity\". The entries must cover {wake} to {sleep} ({minutes} minutes) without gaps or overlaps.",
    max_tokens: 400,
    verbatim: false,
};

const DAY_PLAN_REPAIR: TemplateSpec = TemplateSpec {
    id: TemplateId::DayPlan,
    variant: "repair",
    text: "{original}\n\nThe previous answer was rejected: {problem}\nPrevious answer:\n{answer}\n\nRewrite the plan so that the entries cover {wake} to {sleep} exactly, one per line, in the form \"HH:MM (Nm): activity\".",
    max_tokens: 400,
    verbatim: false,
};

const REPLAN: TemplateSpec = TemplateSpec {
    id: TemplateId::DayPlan,
    variant: "revise",
    text: "{agent_summary}\n\n{entity_summary}\n\nObservation: {observation}\n{name} decided to react: {reaction}\n\nRevise {name}'s plan from {start} to {sleep} ({minutes} minutes). Proposed revision:\n{proposal}\n\nAnswer with the revised entries, one per line, in the form \"HH:MM (Nm): activity\", covering {start} to {sleep} without gaps or overlaps.",
    max_tokens: 400,
    verbatim: false,
};

const DECOMPOSE: TemplateSpec = TemplateSpec {
    id: TemplateId::Decompose,
    variant: "split",
    text: "{name}'s plan entry: {start} ({minutes}m): {description}\nBreak this entry into finer steps of about {granularity} minutes, one per line, in the form \"HH:MM (Nm): step\". The steps must cover {start} to {end} without gaps or overlaps. Suggested slots:\n{slots}",
    max_tokens: 400,
    verbatim: false,
};

const DESTINATION: TemplateSpec = TemplateSpec {
    id: TemplateId::Destination,
    variant: "choose",
    text: "{name} is currently in {current}. {name} is going to be {action}.\n\n{known_world}\n\nAreas to choose from: {candidates}\nWhich area should {name} go to?\nAnswer with one area name.",
    max_tokens: 24,
    verbatim: true,
};

const EMOJI: TemplateSpec = TemplateSpec {
    id: TemplateId::Emoji,
    variant: "status",
    text: "Convert the following action into at most two emoji.\nAction: {name} is {action}\nEmoji:",
    max_tokens: 16,
    verbatim: false,
};

const UTTERANCE_OPEN: TemplateSpec = TemplateSpec {
    id: TemplateId::Utterance,
    variant: "open",
    text: "{agent_summary}\n\n{entity_summary}\n\n{name} decided to: {reaction}\nConversation between {name} and {partner}. Turns so far: 0\nWhat would {name} say to {partner}? Reply with the utterance only, or [END] to end the conversation.",
    max_tokens: 200,
    verbatim: false,
};

const UTTERANCE_NEXT: TemplateSpec = TemplateSpec {
    id: TemplateId::Utterance,
    variant: "continue",
    text: "{agent_summary}\n\n{earlier}Recent conversation:\n{turns}\n\nConversation between {name} and {partner}. Turns so far: {count}\nWhat would {name} say next? Reply with the utterance only, or [END] to end the conversation.",
    max_tokens: 200,
    verbatim: false,
};

const UTTERANCE_INTERVIEW: TemplateSpec = TemplateSpec {
    id: TemplateId::Utterance,
    variant: "interview",
    text: "{agent_summary}\n\nRelevant memories of {name}:\n{statements}\n\n{earlier}Interview so far:\n{turns}\n\nInterviewer: {question}\nHow would {name} respond? Reply with the utterance only.",
    max_tokens: 200,
    verbatim: false,
};

const DIALOGUE_SUMMARY: TemplateSpec = TemplateSpec {
    id: TemplateId::DialogueSummary,
    variant: "summarize",
    text: "{earlier}Conversation between {first} and {second}:\n{turns}\n\nSummarize the conversation between {first} and {second} in one or two sentences.",
    max_tokens: 200,
    verbatim: false,
};

/// Every registered template, in registry order.
pub const REGISTRY: &[TemplateSpec] = &[
    IMPORTANCE,
    FOCAL,
    INSIGHTS,
    SUMMARY_PART,
    PREVIOUS_DAY,
    ENTITY_PART,
    REACTION,
    DAY_PLAN,
    DAY_PLAN_REPAIR,
    REPLAN,
    DECOMPOSE,
    DESTINATION,
    EMOJI,
    UTTERANCE_OPEN,
    UTTERANCE_NEXT,
    UTTERANCE_INTERVIEW,
    DIALOGUE_SUMMARY,
];

/// Query strings used for retrieval. These are fixed wording, not prompts.
pub mod queries {
    pub fn core_characteristics(name: &str) -> String {
        format!("{name}'s core characteristics")
    }

    pub fn daily_occupation(name: &str) -> String {
        format!("{name}'s current daily occupation")
    }

    pub fn recent_progress(name: &str) -> String {
        format!("{name}'s feeling about his recent progress in life")
    }

    pub fn previous_day_plan(name: &str) -> String {
        format!("{name}'s previous day plan")
    }

    pub fn relationship(observer: &str, entity: &str) -> String {
        format!("What is {observer}'s relationship with the {entity}?")
    }

    pub fn entity_status(entity: &str, status: &str) -> String {
        format!("{entity} is {status}")
    }
}

/// Substitutes `{key}` placeholders in a single pass; substituted values are
/// never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let key = close.map(|c| &after[..c]);
        match key.and_then(|k| vars.iter().find(|(name, _)| *name == k)) {
            Some((k, v)) => {
                out.push_str(v);
                rest = &after[k.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn build(spec: &TemplateSpec, vars: &[(&str, &str)]) -> Result<PromptRequest, BackendError> {
    PromptRequest::new(spec.id, fill(spec.text, vars), spec.max_tokens, 0.0)
}

/// One statement per line; embedded newlines are flattened.
pub fn statement_lines<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts.into_iter().map(flatten).collect::<Vec<_>>().join("\n")
}

/// `1. first`, `2. second`, ...
pub fn numbered_lines<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, flatten(t)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn earlier_block(rolling_summary: &str) -> String {
    if rolling_summary.is_empty() {
        String::new()
    } else {
        format!("Summary of the earlier conversation: {rolling_summary}\n\n")
    }
}

pub fn importance_rating(memory: &str) -> Result<PromptRequest, BackendError> {
    build(&IMPORTANCE, &[("memory", &flatten(memory))])
}

pub fn focal_questions(statements: &str) -> Result<PromptRequest, BackendError> {
    build(&FOCAL, &[("statements", statements)])
}

pub fn insights(name: &str, numbered_statements: &str) -> Result<PromptRequest, BackendError> {
    build(&INSIGHTS, &[("name", name), ("statements", numbered_statements)])
}

pub fn agent_summary_part(name: &str, query: &str, statements: &str) -> Result<PromptRequest, BackendError> {
    build(
        &SUMMARY_PART,
        &[("name", name), ("query", query), ("statements", statements)],
    )
}

pub fn previous_day_summary(
    name: &str,
    day: u32,
    query: &str,
    statements: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &PREVIOUS_DAY,
        &[
            ("name", name),
            ("day", &day.to_string()),
            ("query", query),
            ("statements", statements),
        ],
    )
}

pub fn entity_summary_part(observer: &str, query: &str, statements: &str) -> Result<PromptRequest, BackendError> {
    build(
        &ENTITY_PART,
        &[("observer", observer), ("query", query), ("statements", statements)],
    )
}

pub fn reaction(
    name: &str,
    agent_summary: &str,
    entity_summary: &str,
    observation: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &REACTION,
        &[
            ("name", name),
            ("agent_summary", agent_summary),
            ("entity_summary", entity_summary),
            ("observation", observation),
        ],
    )
}

/// Parameters shared by the day-plan variants.
#[derive(Debug, Clone, Copy)]
pub struct PlanWindow<'a> {
    pub name: &'a str,
    pub day: u32,
    pub wake: &'a str,
    pub sleep: &'a str,
    pub minutes: u32,
}

pub fn day_plan(
    window: PlanWindow<'_>,
    agent_summary: &str,
    previous_day: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &DAY_PLAN,
        &[
            ("agent_summary", agent_summary),
            ("previous_day", previous_day),
            ("name", window.name),
            ("day", &window.day.to_string()),
            ("wake", window.wake),
            ("sleep", window.sleep),
            ("minutes", &window.minutes.to_string()),
        ],
    )
}

/// Re-asks a plan prompt after a rejected answer.
pub fn day_plan_repair(
    original: &PromptRequest,
    problem: &str,
    answer: &str,
    wake: &str,
    sleep: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &DAY_PLAN_REPAIR,
        &[
            ("original", original.rendered_text()),
            ("problem", problem),
            ("answer", answer),
            ("wake", wake),
            ("sleep", sleep),
        ],
    )
}

/// Inputs of the remainder-of-day revision prompt.
#[derive(Debug, Clone, Copy)]
pub struct Revision<'a> {
    pub name: &'a str,
    pub agent_summary: &'a str,
    pub entity_summary: &'a str,
    pub observation: &'a str,
    pub reaction: &'a str,
    pub start: &'a str,
    pub sleep: &'a str,
    pub minutes: u32,
    /// Proposed entries, already in plan grammar, one per line.
    pub proposal: &'a [String],
}

pub fn replan(rev: Revision<'_>) -> Result<PromptRequest, BackendError> {
    let proposal = rev
        .proposal
        .iter()
        .map(|l| format!("> {l}"))
        .collect::<Vec<_>>()
        .join("\n");
    build(
        &REPLAN,
        &[
            ("name", rev.name),
            ("agent_summary", rev.agent_summary),
            ("entity_summary", rev.entity_summary),
            ("observation", rev.observation),
            ("reaction", rev.reaction),
            ("start", rev.start),
            ("sleep", rev.sleep),
            ("minutes", &rev.minutes.to_string()),
            ("proposal", &proposal),
        ],
    )
}

/// Inputs of the decomposition prompt.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub name: &'a str,
    pub description: &'a str,
    pub start: &'a str,
    pub end: &'a str,
    pub minutes: u32,
    pub granularity: u32,
    /// Suggested slots as `HH:MM (Nm)`.
    pub slots: &'a [String],
}

pub fn decompose(split: Split<'_>) -> Result<PromptRequest, BackendError> {
    let slots = split
        .slots
        .iter()
        .map(|s| format!("> {s}"))
        .collect::<Vec<_>>()
        .join("\n");
    build(
        &DECOMPOSE,
        &[
            ("name", split.name),
            ("description", &flatten(split.description)),
            ("start", split.start),
            ("end", split.end),
            ("minutes", &split.minutes.to_string()),
            ("granularity", &split.granularity.to_string()),
            ("slots", &slots),
        ],
    )
}

pub fn destination(
    name: &str,
    current: &str,
    action: &str,
    known_world: &str,
    candidates: &[&str],
) -> Result<PromptRequest, BackendError> {
    build(
        &DESTINATION,
        &[
            ("name", name),
            ("current", current),
            ("action", action),
            ("known_world", known_world),
            ("candidates", &candidates.join(", ")),
        ],
    )
}

pub fn emoji(name: &str, action: &str) -> Result<PromptRequest, BackendError> {
    build(&EMOJI, &[("name", name), ("action", &flatten(action))])
}

pub fn utterance_open(
    name: &str,
    partner: &str,
    agent_summary: &str,
    entity_summary: &str,
    reaction: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &UTTERANCE_OPEN,
        &[
            ("name", name),
            ("partner", partner),
            ("agent_summary", agent_summary),
            ("entity_summary", entity_summary),
            ("reaction", reaction),
        ],
    )
}

pub fn utterance_next(
    name: &str,
    partner: &str,
    agent_summary: &str,
    rolling_summary: &str,
    turns: &str,
    count: usize,
) -> Result<PromptRequest, BackendError> {
    build(
        &UTTERANCE_NEXT,
        &[
            ("name", name),
            ("partner", partner),
            ("agent_summary", agent_summary),
            ("earlier", &earlier_block(rolling_summary)),
            ("turns", if turns.is_empty() { "(none)" } else { turns }),
            ("count", &count.to_string()),
        ],
    )
}

pub fn utterance_interview(
    name: &str,
    agent_summary: &str,
    statements: &str,
    rolling_summary: &str,
    turns: &str,
    question: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &UTTERANCE_INTERVIEW,
        &[
            ("name", name),
            ("agent_summary", agent_summary),
            ("statements", if statements.is_empty() { "(none)" } else { statements }),
            ("earlier", &earlier_block(rolling_summary)),
            ("turns", if turns.is_empty() { "(none)" } else { turns }),
            ("question", &flatten(question)),
        ],
    )
}

pub fn dialogue_summary(
    first: &str,
    second: &str,
    rolling_summary: &str,
    turns: &str,
) -> Result<PromptRequest, BackendError> {
    build(
        &DIALOGUE_SUMMARY,
        &[
            ("first", first),
            ("second", second),
            ("earlier", &earlier_block(rolling_summary)),
            ("turns", turns),
        ],
    )
}
