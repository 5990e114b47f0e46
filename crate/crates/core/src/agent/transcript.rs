//! Ordered record of what the agent thought, did and saw.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Task,
    Plan,
    Thought,
    Action,
    Observation,
    /// Verbatim backend output.
    Backend,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub task: u64,
    pub tick: u64,
    pub kind: EntryKind,
    /// Plan step label, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn push(&mut self, task: u64, tick: u64, kind: EntryKind, step: Option<usize>, text: String, payload: Value) {
        let seq = self.entries.len() as u64;
        self.entries.push(TranscriptEntry {
            seq,
            task,
            tick,
            kind,
            step,
            text,
            payload,
        });
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("transcript parse error at byte {offset}: {message}")]
pub struct ReplayError {
    pub offset: usize,
    pub message: String,
}

/// Parse JSON lines, reporting the byte offset of the first bad entry.
pub fn parse_jsonl(text: &str) -> Result<Vec<TranscriptEntry>, ReplayError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let entry: TranscriptEntry = serde_json::from_str(body).map_err(|e| {
                let col = if e.line() == 1 { e.column().saturating_sub(1) } else { 0 };
                ReplayError {
                    offset: offset + col,
                    message: e.to_string(),
                }
            })?;
            out.push(entry);
        }
        offset += line.len();
    }
    Ok(out)
}

/// Circled step label (①..⑳), falling back to `(n)`.
pub fn step_label(n: usize) -> String {
    match n {
        1..=20 => char::from_u32(0x2460 + n as u32 - 1).expect("circled digit").to_string(),
        _ => format!("({n})"),
    }
}

/// Plain-text report; deterministic in its input.
pub fn render(entries: &[TranscriptEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let label = e.step.map(step_label).unwrap_or_else(|| " ".into());
        let _ = match e.kind {
            EntryKind::Task => writeln!(s, "[tick {}] task {}: {}", e.tick, e.task, e.text),
            EntryKind::Plan => writeln!(s, "  plan: {}", e.text),
            EntryKind::Thought => writeln!(s, "  {label} thought: {}", e.text),
            EntryKind::Action => writeln!(s, "  {label} [tick {}] {}", e.tick, e.text),
            EntryKind::Observation => writeln!(s, "      -> {}", e.text),
            EntryKind::Backend => Ok(()),
            EntryKind::Outcome => writeln!(s, "  outcome [tick {}]: {}", e.tick, e.text),
        };
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_truncation_offset() {
        let mut t = Transcript::default();
        t.push(0, 5, EntryKind::Action, Some(1), "sync-twin".into(), Value::Null);
        t.push(0, 5, EntryKind::Observation, Some(1), "ok".into(), serde_json::json!({"x": 1}));
        let text = t.to_jsonl();
        assert_eq!(parse_jsonl(&text).unwrap(), t.entries());
        let first = text.find('\n').unwrap() + 1;
        let cut = &text[..first + 10];
        let err = parse_jsonl(cut).unwrap_err();
        assert!(err.offset >= first && err.offset <= cut.len(), "{err}");
        assert!(parse_jsonl("").unwrap().is_empty());
        assert_eq!(render(&[]), "");
    }

    #[test]
    fn labels() {
        assert_eq!(step_label(1), "①");
        assert_eq!(step_label(5), "⑤");
        assert_eq!(step_label(21), "(21)");
    }
}
