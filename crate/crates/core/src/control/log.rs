//! Append-only operation log.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    pub seq: u64,
    pub severity: Severity,
    pub source: String,
    pub text: String,
    #[serde(default)]
    pub payload: serde_json::Value,
}

/// Inclusive tick range plus an optional sequence cursor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    #[serde(default)]
    pub from_tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_tick: Option<u64>,
    /// Only entries with `seq >= since_seq`.
    #[serde(default)]
    pub since_seq: u64,
}

impl LogRange {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn since(seq: u64) -> Self {
        Self {
            since_seq: seq,
            ..Self::default()
        }
    }

    pub fn ticks(from: u64, to: u64) -> Self {
        Self {
            from_tick: from,
            to_tick: Some(to),
            since_seq: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.to_tick.is_some_and(|t| t < self.from_tick)
    }

    fn contains(&self, e: &LogEntry) -> bool {
        e.tick >= self.from_tick && self.to_tick.is_none_or(|t| e.tick <= t) && e.seq >= self.since_seq
    }
}

#[derive(Debug, Clone, Default)]
pub struct OperationLog {
    entries: Vec<LogEntry>,
}

impl OperationLog {
    pub fn append(&mut self, tick: u64, severity: Severity, source: &str, text: String, payload: serde_json::Value) -> &LogEntry {
        let seq = self.entries.len() as u64;
        debug_assert!(self.entries.last().is_none_or(|e| e.tick <= tick));
        self.entries.push(LogEntry {
            tick,
            seq,
            severity,
            source: source.to_string(),
            text,
            payload,
        });
        self.entries.last().expect("just pushed")
    }

    pub fn query(&self, range: &LogRange) -> Vec<LogEntry> {
        if range.is_empty() {
            return Vec::new();
        }
        let start = range.since_seq.min(self.entries.len() as u64) as usize;
        self.entries[start..]
            .iter()
            .filter(|e| range.contains(e))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.len() as u64
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }
}
