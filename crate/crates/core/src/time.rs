//! Simulation clock: integer minutes since the simulation epoch.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: u64 = 24 * 60;

/// Minutes since the simulation epoch (00:00 of day 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn from_day_minute(day: u32, minute_of_day: u32) -> Self {
        SimTime(u64::from(day.max(1) - 1) * MINUTES_PER_DAY + u64::from(minute_of_day))
    }

    pub fn minutes(self) -> u64 {
        self.0
    }

    /// 1-based simulation day.
    pub fn day(self) -> u32 {
        (self.0 / MINUTES_PER_DAY) as u32 + 1
    }

    pub fn minute_of_day(self) -> u32 {
        (self.0 % MINUTES_PER_DAY) as u32
    }

    pub fn start_of_day(self) -> SimTime {
        SimTime(self.0 - self.0 % MINUTES_PER_DAY)
    }

    pub fn plus(self, minutes: u64) -> SimTime {
        SimTime(self.0 + minutes)
    }

    /// Elapsed hours since `earlier`, or `None` when `earlier` is later.
    pub fn hours_since(self, earlier: SimTime) -> Option<f64> {
        self.0.checked_sub(earlier.0).map(|m| m as f64 / 60.0)
    }

    /// `HH:MM` of the time of day.
    pub fn clock(self) -> String {
        format_clock(self.minute_of_day())
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "day {} {}", self.day(), self.clock())
    }
}

pub fn format_clock(minute_of_day: u32) -> String {
    format!("{:02}:{:02}", minute_of_day / 60, minute_of_day % 60)
}

/// Parses `HH:MM` into minutes since midnight; `24:00` is accepted.
pub fn parse_clock(text: &str) -> Option<u32> {
    let (h, m) = text.trim().split_once(':')?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return None;
    }
    let h: u32 = h.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return None;
    }
    Some(h * 60 + m)
}
