//! Lifecycle agent: mode selection, planning, tool execution and reporting.
//!
//! Operator requests and monitor alarms become tasks. Each task runs under
//! one operation mode: rule-centric tasks execute stored workflows, while
//! LLM modes ask a backend for plans, localizations and repairs. Backend text
//! is parsed against a fixed grammar and every step is validated against the
//! tool registry before anything touches the network.

pub mod backend;
pub mod grammar;
pub mod localize;
pub mod plan;
pub mod react;
#[cfg(feature = "remote")]
pub mod remote;
pub mod retrieval;
mod runtime;
pub mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlError;
use crate::optimizer::{ObjectiveError, OptimizerError};
use crate::twin::TwinError;

pub use backend::{BackendError, CountingBackend, FnBackend, LlmBackend, Prompt, PromptKind, ScriptedPolicy};
pub use localize::{FailureKind, Localization};
pub use plan::{Plan, PlanStep, WorkflowStore};
pub use react::{react_optimize, ReactOptions, ReactOutcome};
pub use retrieval::{Document, DocumentStore, RetrievalError, RetrievedChunk};
pub use runtime::{Agent, AgentConfig, ModeCounters, TaskReport, TrackOptions, Trigger};
pub use transcript::{EntryKind, Transcript, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationMode {
    /// The backend plans and also tunes gains directly.
    LlmNative,
    /// The backend plans; tools do the numerics.
    LlmCentric,
    /// Stored workflows only; no backend calls.
    RuleCentric,
}

impl OperationMode {
    pub const ALL: [OperationMode; 3] = [OperationMode::LlmNative, OperationMode::LlmCentric, OperationMode::RuleCentric];

    pub fn as_str(self) -> &'static str {
        match self {
            OperationMode::LlmNative => "llm-native",
            OperationMode::LlmCentric => "llm-centric",
            OperationMode::RuleCentric => "rule-centric",
        }
    }
}

impl fmt::Display for OperationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperationMode {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AgentError::BadModeTable(format!("unknown mode `{s}`")))
    }
}

/// Event kinds the mode table is keyed on.
pub const EVENT_KINDS: [&str; 6] = ["establish", "add", "drop", "loss_of_signal", "q_drop", "degradation_forecast"];

/// Event kind to operation mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTable {
    pub entries: BTreeMap<String, OperationMode>,
}

impl Default for ModeTable {
    fn default() -> Self {
        let entries = EVENT_KINDS
            .iter()
            .map(|k| {
                let mode = match *k {
                    "establish" | "add" | "drop" => OperationMode::RuleCentric,
                    _ => OperationMode::LlmCentric,
                };
                (k.to_string(), mode)
            })
            .collect();
        Self { entries }
    }
}

impl ModeTable {
    /// Every kind mapped to `mode`.
    pub fn uniform(mode: OperationMode) -> Self {
        Self {
            entries: EVENT_KINDS.iter().map(|k| (k.to_string(), mode)).collect(),
        }
    }

    /// Defaults overridden by `kind=mode,...`. `load` stands for `add` and
    /// `drop`, `failure` for the three alarm kinds, `all` for everything.
    pub fn with_overrides(spec: &str) -> Result<Self, AgentError> {
        let mut table = Self::default();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, mode) = item
                .split_once('=')
                .ok_or_else(|| AgentError::BadModeTable(format!("expected kind=mode, got `{item}`")))?;
            let mode: OperationMode = mode.trim().parse()?;
            let keys: Vec<&str> = match key.trim() {
                "load" => vec!["add", "drop"],
                "failure" => vec!["loss_of_signal", "q_drop", "degradation_forecast"],
                "all" => EVENT_KINDS.to_vec(),
                k if EVENT_KINDS.contains(&k) => vec![k],
                k => return Err(AgentError::UnknownEventKind(k.to_string())),
            };
            for k in keys {
                table.entries.insert(k.to_string(), mode);
            }
        }
        Ok(table)
    }

    pub fn select(&self, kind: &str) -> Result<OperationMode, AgentError> {
        select_mode(kind, self)
    }
}

/// Look up the mode for an event kind.
pub fn select_mode(kind: &str, table: &ModeTable) -> Result<OperationMode, AgentError> {
    table
        .entries
        .get(kind)
        .copied()
        .ok_or_else(|| AgentError::UnknownEventKind(kind.to_string()))
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown event kind `{0}`")]
    UnknownEventKind(String),
    #[error("bad mode table: {0}")]
    BadModeTable(String),
    #[error("plan rejected: {reason}")]
    PlanRejected { reason: String, raw: String },
    #[error("execution aborted at `{step}`: {reason}")]
    ExecutionAborted { step: String, reason: String },
    #[error("malformed backend action: {0:?}")]
    MalformedAction(String),
    #[error("localization failed: {0}")]
    LocalizationFailed(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}
