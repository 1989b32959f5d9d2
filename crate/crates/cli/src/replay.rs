//! Human-readable rendering of an event log.

use std::collections::BTreeMap;
use std::io::{self, Write};

use genagent_core::engine::{EventKind, SimEvent};

fn dialogue_id(e: &SimEvent) -> Option<u64> {
    e.detail.as_ref()?.get("dialogue")?.as_u64()
}

/// Prints events in log order. Turns of one conversation are grouped under
/// a header, and each agent line carries the agent's current emoji.
pub fn render(events: &[SimEvent], from: Option<u64>, to: Option<u64>, out: &mut impl Write) -> io::Result<()> {
    let mut emoji: BTreeMap<&str, &str> = BTreeMap::new();
    let mut open_dialogue: Option<u64> = None;
    let mut last_tick = None;
    for e in events {
        // emoji state is tracked from the start so filtered views stay accurate
        if e.kind == EventKind::StatusEmoji {
            if let Some(a) = &e.agent {
                emoji.insert(a, &e.payload);
            }
        }
        if from.is_some_and(|f| e.tick < f) || to.is_some_and(|t| e.tick > t) {
            continue;
        }
        if last_tick != Some(e.tick) {
            writeln!(out, "== tick {} ({})", e.tick, e.time)?;
            last_tick = Some(e.tick);
            open_dialogue = None;
        }
        let agent = e.agent.as_deref().unwrap_or("world");
        let status = e.agent.as_deref().and_then(|a| emoji.get(a)).copied().unwrap_or("");
        match e.kind {
            EventKind::DialogueTurn => {
                let id = dialogue_id(e);
                if open_dialogue != id {
                    let to = e
                        .detail
                        .as_ref()
                        .and_then(|d| d.get("to"))
                        .and_then(|v| v.as_str())
                        .unwrap_or("?");
                    writeln!(out, "  -- conversation #{} between {agent} and {to}", id.unwrap_or(0))?;
                    open_dialogue = id;
                }
                writeln!(out, "     {agent}: {}", e.payload)?;
            }
            EventKind::DialogueSummary => {
                writeln!(out, "  -- summary #{}: {}", dialogue_id(e).unwrap_or(0), e.payload)?;
                open_dialogue = None;
            }
            EventKind::StatusEmoji => {
                let action = e
                    .detail
                    .as_ref()
                    .and_then(|d| d.get("action"))
                    .and_then(|v| v.as_str())
                    .unwrap_or("");
                writeln!(out, "  {agent} is {action}: {}", e.payload)?;
            }
            kind => {
                open_dialogue = None;
                let badge = if status.is_empty() {
                    String::new()
                } else {
                    format!(" {status}")
                };
                writeln!(out, "  {agent}{badge} [{}] {}", kind.as_str(), e.payload)?;
            }
        }
    }
    Ok(())
}
