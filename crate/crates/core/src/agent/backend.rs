//! Language-model backends: the trait, a deterministic scripted policy, and
//! small wrappers used by tests and instrumentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::localize::{localization_rule, parse_span_lines, FailureKind};
use super::OperationMode;
use crate::gain::GainConfig;
use crate::optimizer::{CoordinateAscent, CoordinateOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    SelectMode,
    Plan,
    Localize,
    Repair,
    React,
}

/// Context text plus the action schema the answer must conform to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub context: String,
    pub allowed_actions: Vec<String>,
}

impl Prompt {
    pub fn new(kind: PromptKind, context: String, allowed_actions: Vec<String>) -> Self {
        Self {
            kind,
            context,
            allowed_actions,
        }
    }

    /// Flat text for remote models.
    pub fn render(&self) -> String {
        let mut s = format!(
            "You operate an optical line system. Task type: {:?}.\nAnswer only with lines of the form `THOUGHT: ...` and `ACTION: <name> <args>`.\nAllowed actions:\n",
            self.kind
        );
        for a in &self.allowed_actions {
            s.push_str("  ");
            s.push_str(a);
            s.push('\n');
        }
        s.push_str("Context:\n");
        s.push_str(&self.context);
        s
    }
}

/// Anything that turns a prompt into action text.
pub trait LlmBackend {
    fn name(&self) -> &str;
    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

/// Counts calls to an inner backend.
#[derive(Debug, Clone)]
pub struct CountingBackend<B> {
    pub inner: B,
    pub calls: usize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: 0 }
    }
}

impl<B: LlmBackend> LlmBackend for CountingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        self.calls += 1;
        self.inner.complete(prompt)
    }
}

/// Backend defined by a closure; handy for fault injection.
pub struct FnBackend<F>(pub F);

impl<F: FnMut(&Prompt) -> String> LlmBackend for FnBackend<F> {
    fn name(&self) -> &str {
        "fn"
    }
    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        Ok((self.0)(prompt))
    }
}

/// Deterministic policy standing in for a model.
///
/// Plans follow the failure playbook, localization applies the datasheet
/// comparison rule to the `SPAN` evidence lines, and optimization steps a
/// gains-only coordinate-ascent machine one observation at a time.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub coordinate: CoordinateOptions,
    machine: Option<CoordinateAscent>,
    seen: usize,
}

impl Default for ScriptedPolicy {
    fn default() -> Self {
        Self::new(CoordinateOptions {
            include_tilts: false,
            ..CoordinateOptions::default()
        })
    }
}

/// `key=value` lookup in a whitespace-separated line.
pub(crate) fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

pub(crate) fn parse_gains(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|v| v.parse::<f64>().ok()).collect()
}

pub(crate) fn format_gains(gains: &[f64]) -> String {
    gains.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",")
}

impl ScriptedPolicy {
    pub fn new(coordinate: CoordinateOptions) -> Self {
        Self {
            coordinate,
            machine: None,
            seen: 0,
        }
    }

    fn select_mode(context: &str) -> String {
        let kind = context
            .lines()
            .find_map(|l| l.strip_prefix("EVENT "))
            .unwrap_or("")
            .trim();
        let mode = match kind {
            "establish" | "add" | "drop" => OperationMode::RuleCentric,
            _ => OperationMode::LlmCentric,
        };
        format!("ACTION: mode {}", mode.as_str())
    }

    fn plan(context: &str) -> String {
        let task = context.lines().find_map(|l| l.strip_prefix("TASK ")).unwrap_or("");
        let mode = context.lines().find_map(|l| l.strip_prefix("MODE ")).unwrap_or("");
        let kind = task.split_whitespace().next().unwrap_or("");
        let load = field(task, "wavelengths");
        let mut out = String::new();
        let mut push = |thought: &str, action: String| {
            out.push_str("THOUGHT: ");
            out.push_str(thought);
            out.push_str("\nACTION: ");
            out.push_str(&action);
            out.push('\n');
        };
        match (kind, mode.trim()) {
            ("add" | "drop" | "establish", "llm-native") => {
                if let Some(n) = load.filter(|_| kind != "establish") {
                    push("apply the requested channel load", format!("set-load {n}"));
                }
                push("tune the gains directly from live Q readings", "react-optimize".into());
            }
            ("add" | "drop" | "establish", _) => {
                if let Some(n) = load.filter(|_| kind != "establish") {
                    push("apply the requested channel load", format!("set-load {n}"));
                }
                push("excite each amplifier to refresh the calibration data", "probe-configs".into());
                push("calibrate the twin on recent telemetry", "fit-twin".into());
                push("search gains on the twin and apply the best", "optimize-power".into());
                push("align the twin with the new state", "sync-twin".into());
            }
            _ => {
                let query = if kind == "loss_of_signal" {
                    "fiber cut loss of signal supervisory channel"
                } else {
                    "span aging measured loss attenuation datasheet"
                };
                push("collect manuals and datasheets for this alarm", format!("retrieve-docs {query}"));
                push("compare span powers, OSC state and logs to find the fault", "localize-failure".into());
                push("derive recovery actions for the located fault", "generate-recovery".into());
                push("re-optimize amplifier gains", "optimize-power".into());
                push("synchronize the digital twin", "sync-twin".into());
            }
        }
        out
    }

    fn localize(context: &str) -> String {
        let spans = parse_span_lines(context);
        match localization_rule(&spans) {
            Some(loc) => {
                let why = match loc.kind {
                    FailureKind::Cut => format!("span {} has lost its supervisory channel", loc.span),
                    FailureKind::Aging => {
                        format!("span {} loss exceeds its datasheet value by {:.2} dB", loc.span, loc.excess_db)
                    }
                };
                format!("THOUGHT: {why}\nACTION: report {} {}", loc.span, loc.kind.as_str())
            }
            None => "THOUGHT: every span matches its datasheet\nACTION: report none".into(),
        }
    }

    fn repair(context: &str) -> String {
        let error = context.lines().find_map(|l| l.strip_prefix("ERROR ")).unwrap_or("");
        if error.starts_with("cut-link") {
            "THOUGHT: the link is dark; wait for the repair\nACTION: wait-for-repair".into()
        } else if error.starts_with("localization") {
            "THOUGHT: degradation not yet visible; keep watching\nACTION: observe 30".into()
        } else {
            "ACTION: skip".into()
        }
    }

    fn react(&mut self, context: &str) -> String {
        let observations: Vec<&str> = context
            .lines()
            .filter_map(|l| l.strip_prefix("OBSERVATION "))
            .collect();
        if observations.is_empty() || self.machine.is_none() {
            let init = context
                .lines()
                .find_map(|l| l.strip_prefix("INIT "))
                .and_then(|l| field(l, "gains"))
                .and_then(parse_gains);
            let Some(gains) = init else {
                return "ACTION: finish".into();
            };
            let n = gains.len();
            self.machine = Some(CoordinateAscent::new(
                GainConfig {
                    gains,
                    tilts: vec![0.0; n],
                },
                self.coordinate,
            ));
            self.seen = 0;
        }
        let machine = self.machine.as_mut().expect("machine initialised");
        if observations.len() > self.seen {
            let last = observations[observations.len() - 1];
            let value = field(last, "min_q").and_then(|v| v.parse::<f64>().ok());
            machine.observe(value);
            self.seen = observations.len();
        }
        match machine.propose() {
            Some(cfg) => format!("ACTION: set_gains {}", format_gains(&cfg.gains)),
            None => "ACTION: finish".into(),
        }
    }
}

impl LlmBackend for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        Ok(match prompt.kind {
            PromptKind::SelectMode => Self::select_mode(&prompt.context),
            PromptKind::Plan => Self::plan(&prompt.context),
            PromptKind::Localize => Self::localize(&prompt.context),
            PromptKind::Repair => Self::repair(&prompt.context),
            PromptKind::React => self.react(&prompt.context),
        })
    }
}
