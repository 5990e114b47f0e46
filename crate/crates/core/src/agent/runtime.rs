//! The agent loop: task intake, planning, plan execution and the tools.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::backend::{BackendError, LlmBackend, Prompt, PromptKind};
use super::grammar::{parse_action, parse_steps};
use super::localize::{
    cross_check, generate_recovery, localization_rule, span_evidence, Evidence, EvidenceChunk, FailureKind,
    Localization, EVIDENCE_RECORDS, RECOVERY_GAIN_CAP_DB,
};
use super::plan::{tool_signatures, Plan, PlanStep, WorkflowStore};
use super::react::{react_optimize, ReactOptions};
use super::retrieval::{DocumentStore, RetrievedChunk};
use super::transcript::{EntryKind, Transcript};
use super::{AgentError, ModeTable, OperationMode};
use crate::control::{
    Change, ConfigEdit, ControlError, DeviceConfig, EditResult, LogRange, NetworkPort, SOURCE_OPERATOR,
};
use crate::gain::{GainConfig, GAIN_MAX_DB, GAIN_MIN_DB};
use crate::optimizer::{coordinate_ascent, CoordinateOptions, Objective, ObjectiveError, TwinEnv};
use crate::telemetry::{Alarm, AlarmKind, Monitor, MonitorConfig, TelemetryRecord};
use crate::twin::{usable, DigitalTwin, TwinError, EXTRA_LOSS_MAX_DB};

/// Span tracking after an aging compensation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOptions {
    /// Uncompensated drift that triggers another gain step, dB.
    pub drift_db: f64,
    /// Loss change over `settle_ticks` below which the span counts as settled.
    pub settle_db: f64,
    pub settle_ticks: usize,
    pub max_ticks: u64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            drift_db: 1.0,
            settle_db: 0.1,
            settle_ticks: 30,
            max_ticks: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub mode_table: ModeTable,
    /// Ask the backend to pick the mode; the answer must be a known mode.
    pub backend_selects_mode: bool,
    pub monitor: MonitorConfig,
    pub coordinate: CoordinateOptions,
    pub react: ReactOptions,
    /// Usable records handed to the twin fit.
    pub fit_window: usize,
    /// Records consumed by one twin sync.
    pub sync_records: usize,
    pub probe_delta_db: f64,
    /// Repair steps allowed per task.
    pub repair_limit: usize,
    pub wait_limit_ticks: u64,
    pub track: TrackOptions,
    pub retrieve_k: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode_table: ModeTable::default(),
            backend_selects_mode: false,
            monitor: MonitorConfig::default(),
            coordinate: CoordinateOptions {
                include_tilts: false,
                ..CoordinateOptions::default()
            },
            react: ReactOptions {
                max_iters: 200,
                ..ReactOptions::default()
            },
            fit_window: 300,
            sync_records: 5,
            probe_delta_db: 2.0,
            repair_limit: 2,
            wait_limit_ticks: 5000,
            track: TrackOptions::default(),
            retrieve_k: 3,
        }
    }
}

/// What started a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trigger {
    Establish { wavelengths: usize },
    Load { from: usize, to: usize },
    Alarm { alarm: Alarm },
}

impl Trigger {
    /// Mode-table key.
    pub fn kind(&self) -> &'static str {
        match self {
            Trigger::Establish { .. } => "establish",
            Trigger::Load { from, to } if to >= from => "add",
            Trigger::Load { .. } => "drop",
            Trigger::Alarm { alarm } => alarm.kind.name(),
        }
    }

    fn describe(&self) -> String {
        match self {
            Trigger::Establish { wavelengths } => format!("establish wavelengths={wavelengths}"),
            Trigger::Load { from, to } => format!("{} wavelengths={to} from={from}", self.kind()),
            Trigger::Alarm { alarm } => {
                let mut s = format!("{} tick={}", alarm.kind.name(), alarm.tick);
                if let Some(span) = alarm.detail.span {
                    s.push_str(&format!(" span={span}"));
                }
                s
            }
        }
    }

    fn wavelengths(&self) -> Option<usize> {
        match self {
            Trigger::Establish { wavelengths } => Some(*wavelengths),
            Trigger::Load { to, .. } => Some(*to),
            Trigger::Alarm { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub id: u64,
    pub kind: String,
    pub mode: Option<OperationMode>,
    pub trigger: Trigger,
    pub start_tick: u64,
    pub end_tick: u64,
    pub success: bool,
    pub error: Option<String>,
    pub plan_origin: Option<String>,
    pub localization: Option<Localization>,
    /// Actions taken up to and including the accepted localization.
    pub localization_actions: Option<usize>,
    pub actions: usize,
    pub backend_calls: u64,
    pub workflow_fetches: u64,
}

/// Instrumentation per operation mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounters {
    pub backend_calls: BTreeMap<OperationMode, u64>,
    pub workflow_fetches: BTreeMap<OperationMode, u64>,
    pub tasks: BTreeMap<OperationMode, u64>,
}

impl ModeCounters {
    pub fn backend_calls(&self, mode: OperationMode) -> u64 {
        self.backend_calls.get(&mode).copied().unwrap_or(0)
    }

    pub fn workflow_fetches(&self, mode: OperationMode) -> u64 {
        self.workflow_fetches.get(&mode).copied().unwrap_or(0)
    }
}

#[derive(Debug, Error)]
enum ToolError {
    #[error("cut-link span={0}")]
    CutLink(usize),
    #[error("bad-args {0}")]
    BadArgs(String),
    #[error("localization {0}")]
    Localization(String),
    #[error("control {0}")]
    Control(ControlError),
    #[error("twin {0}")]
    Twin(#[from] TwinError),
    #[error("optimizer {0}")]
    Optimizer(String),
    #[error("timeout {0}")]
    Timeout(String),
    #[error("tool {0}")]
    Other(String),
    /// Ends the task without a repair attempt.
    #[error("{0}")]
    Abort(AgentError),
}

impl From<ControlError> for ToolError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Transport(_) => ToolError::Abort(AgentError::Control(e)),
            e => ToolError::Control(e),
        }
    }
}

impl From<AgentError> for ToolError {
    fn from(e: AgentError) -> Self {
        ToolError::Abort(e)
    }
}

struct Observation {
    text: String,
    payload: Value,
}

impl Observation {
    fn new(text: String, payload: Value) -> Self {
        Self { text, payload }
    }
}

enum Repair {
    Insert(PlanStep),
    Skip,
    Abort(String),
}

/// Network access shared by every tool.
struct Runtime<P> {
    port: P,
    monitor: Monitor,
    device: DeviceConfig,
    now: u64,
    log_cursor: u64,
    requested_load: usize,
    pending_alarms: Vec<Alarm>,
    history: Vec<TelemetryRecord>,
}

impl<P: NetworkPort> Runtime<P> {
    fn advance(&mut self, ticks: u64) -> Result<Vec<TelemetryRecord>, ControlError> {
        let records = self.port.advance(ticks)?;
        for r in &records {
            self.now = r.tick + 1;
            let raised = self.monitor.ingest(r.clone());
            self.pending_alarms.extend(raised);
        }
        self.history.extend_from_slice(&records);
        Ok(records)
    }

    fn latest(&self) -> Option<&TelemetryRecord> {
        self.monitor.buffer().last()
    }

    fn dark_span(&self) -> Option<usize> {
        self.latest()?.osc_alive.iter().position(|a| !a)
    }

    fn refresh(&mut self) -> Result<(), ControlError> {
        self.device = self.port.get_config()?;
        Ok(())
    }

    fn edit(&mut self, edit: &ConfigEdit) -> Result<EditResult, ControlError> {
        let result = self.port.edit_config(edit)?;
        self.refresh()?;
        Ok(result)
    }

    fn usable_tail(&self, n: usize) -> Vec<TelemetryRecord> {
        let mut v: Vec<TelemetryRecord> = self.monitor.buffer().iter().rev().filter(|r| usable(r)).take(n).cloned().collect();
        v.reverse();
        v
    }

    fn span_excess(&self, span: usize) -> Option<f64> {
        let records = self.monitor.buffer().tail(4 * EVIDENCE_RECORDS);
        span_evidence(&records, &self.device)
            .into_iter()
            .find(|s| s.span == span)
            .map(|s| s.excess_db())
    }
}

/// Live-link objective used by the reasoning loop: apply, wait one tick,
/// read the measured minimum Q.
struct LiveEnv<'a, P> {
    rt: &'a mut Runtime<P>,
    fatal: Option<ControlError>,
}

impl<P: NetworkPort> Objective for LiveEnv<'_, P> {
    fn evaluate(&mut self, config: &GainConfig) -> Result<f64, ObjectiveError> {
        if let Some(span) = self.rt.dark_span() {
            return Err(ObjectiveError::CutLink(span));
        }
        let keep = |e: ControlError, fatal: &mut Option<ControlError>| {
            let msg = e.to_string();
            if matches!(e, ControlError::Transport(_)) {
                *fatal = Some(e);
            }
            ObjectiveError::Rejected(msg)
        };
        if let Err(e) = self.rt.edit(&ConfigEdit::apply_config(config)) {
            return Err(keep(e, &mut self.fatal));
        }
        let records = match self.rt.advance(1) {
            Ok(r) => r,
            Err(e) => return Err(keep(e, &mut self.fatal)),
        };
        let last = records.last().ok_or(ObjectiveError::NoActiveChannels)?;
        if let Some(span) = last.osc_alive.iter().position(|a| !a) {
            return Err(ObjectiveError::CutLink(span));
        }
        last.min_real_q().ok_or(ObjectiveError::NoActiveChannels)
    }
}

/// Counts backend calls made inside the reasoning loop.
struct Metered<'a, B> {
    inner: &'a mut B,
    calls: u64,
}

impl<B: LlmBackend> LlmBackend for Metered<'_, B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        self.calls += 1;
        self.inner.complete(prompt)
    }
}

#[derive(Debug, Clone)]
struct Task {
    id: u64,
    trigger: Trigger,
}

#[derive(Debug, Default)]
struct TaskContext {
    id: u64,
    mode: Option<OperationMode>,
    label: Option<usize>,
    chunks: Vec<EvidenceChunk>,
    evidence: Option<Evidence>,
    localization: Option<Localization>,
    localization_actions: Option<usize>,
    actions: usize,
    backend_calls: u64,
    workflow_fetches: u64,
    plan_origin: Option<String>,
    trigger_tick: u64,
}

/// Autonomous lifecycle agent bound to one network.
pub struct Agent<P, B> {
    rt: Runtime<P>,
    backend: B,
    config: AgentConfig,
    store: DocumentStore,
    workflows: WorkflowStore,
    twin: DigitalTwin,
    transcript: Transcript,
    queue: VecDeque<Task>,
    next_task: u64,
    reports: Vec<TaskReport>,
    counters: ModeCounters,
    incident_open: bool,
    ctx: TaskContext,
}

impl<P: NetworkPort, B: LlmBackend> Agent<P, B> {
    pub fn new(mut port: P, backend: B, config: AgentConfig) -> Result<Self, AgentError> {
        let device = port.get_config()?;
        let monitor = Monitor::new(device.channel_grid(), config.monitor);
        let twin = DigitalTwin::new(device.nominal_link());
        Ok(Self {
            rt: Runtime {
                port,
                monitor,
                now: device.tick,
                requested_load: device.load(),
                device,
                log_cursor: 0,
                pending_alarms: Vec::new(),
                history: Vec::new(),
            },
            backend,
            config,
            store: DocumentStore::shipped(),
            workflows: WorkflowStore,
            twin,
            transcript: Transcript::default(),
            queue: VecDeque::new(),
            next_task: 0,
            reports: Vec::new(),
            counters: ModeCounters::default(),
            incident_open: false,
            ctx: TaskContext::default(),
        })
    }

    /// Replace the document corpus.
    pub fn with_store(mut self, store: DocumentStore) -> Self {
        self.store = store;
        self
    }

    /// Next tick to be produced.
    pub fn now(&self) -> u64 {
        self.rt.now
    }

    pub fn port(&self) -> &P {
        &self.rt.port
    }

    pub fn port_mut(&mut self) -> &mut P {
        &mut self.rt.port
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn twin(&self) -> &DigitalTwin {
        &self.twin
    }

    pub fn monitor(&self) -> &Monitor {
        &self.rt.monitor
    }

    /// Every record the agent has received, in order.
    pub fn records(&self) -> &[TelemetryRecord] {
        &self.rt.history
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn reports(&self) -> &[TaskReport] {
        &self.reports
    }

    pub fn counters(&self) -> &ModeCounters {
        &self.counters
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn into_port(self) -> P {
        self.rt.port
    }

    /// Advance one tick, take in requests and alarms, and run at most one
    /// queued task to completion. Only transport failures are returned;
    /// task failures land in the task report.
    pub fn step(&mut self) -> Result<(), AgentError> {
        self.rt.advance(1)?;
        self.intake()?;
        if let Some(task) = self.queue.pop_front() {
            self.run_task(task)?;
        }
        Ok(())
    }

    /// Step until the clock reaches `tick`.
    pub fn run_until(&mut self, tick: u64) -> Result<(), AgentError> {
        while self.rt.now < tick {
            self.step()?;
        }
        Ok(())
    }

    fn intake(&mut self) -> Result<(), AgentError> {
        let entries = self.rt.port.get_logs(&LogRange::since(self.rt.log_cursor))?;
        for e in entries {
            self.rt.log_cursor = e.seq + 1;
            if e.source != SOURCE_OPERATOR {
                continue;
            }
            let n = e.payload.get("wavelengths").and_then(Value::as_u64).map(|n| n as usize);
            let trigger = match (e.payload.get("request").and_then(Value::as_str), n) {
                (Some("establish"), Some(n)) => Trigger::Establish { wavelengths: n },
                (Some("set-load"), Some(n)) if n != self.rt.requested_load => Trigger::Load {
                    from: self.rt.requested_load,
                    to: n,
                },
                _ => continue,
            };
            if let Some(n) = trigger.wavelengths() {
                self.rt.requested_load = n;
            }
            self.enqueue(trigger);
        }
        let alarms = std::mem::take(&mut self.rt.pending_alarms);
        if !self.incident_open {
            let first = alarms
                .iter()
                .find(|a| a.kind == AlarmKind::LossOfSignal)
                .or_else(|| alarms.first());
            if let Some(alarm) = first {
                self.incident_open = true;
                self.enqueue(Trigger::Alarm { alarm: alarm.clone() });
            }
        }
        Ok(())
    }

    fn enqueue(&mut self, trigger: Trigger) {
        let id = self.next_task;
        self.next_task += 1;
        self.queue.push_back(Task { id, trigger });
    }

    fn note(&mut self, kind: EntryKind, text: String, payload: Value) {
        self.transcript.push(self.ctx.id, self.rt.now, kind, self.ctx.label, text, payload);
    }

    fn mode(&self) -> OperationMode {
        self.ctx.mode.unwrap_or(OperationMode::RuleCentric)
    }

    fn run_task(&mut self, task: Task) -> Result<(), AgentError> {
        let start_tick = self.rt.now;
        self.ctx = TaskContext {
            id: task.id,
            trigger_tick: start_tick,
            ..TaskContext::default()
        };
        let kind = task.trigger.kind();
        let result = self
            .choose_mode(kind)
            .and_then(|mode| {
                self.ctx.mode = Some(mode);
                *self.counters.tasks.entry(mode).or_default() += 1;
                self.note(
                    EntryKind::Task,
                    format!("{} mode={mode}", task.trigger.describe()),
                    serde_json::to_value(&task.trigger).expect("trigger serializes"),
                );
                self.make_plan(&task, mode)
            })
            .and_then(|plan| self.execute(plan));
        if self.ctx.mode.is_none() {
            self.note(EntryKind::Task, task.trigger.describe(), Value::Null);
        }
        let (success, error) = match &result {
            Ok(()) => (true, None),
            Err(e) => (false, Some(e.to_string())),
        };
        self.ctx.label = None;
        let outcome = match &error {
            None => "success".to_string(),
            Some(e) => format!("failed: {e}"),
        };
        self.note(EntryKind::Outcome, outcome, json!({"success": success}));
        if matches!(task.trigger, Trigger::Alarm { .. }) {
            // alarms raised while the incident was handled belong to it
            self.rt.pending_alarms.retain(|a| a.kind == AlarmKind::LossOfSignal);
            self.incident_open = false;
        }
        self.reports.push(TaskReport {
            id: task.id,
            kind: kind.to_string(),
            mode: self.ctx.mode,
            trigger: task.trigger,
            start_tick,
            end_tick: self.rt.now,
            success,
            error,
            plan_origin: self.ctx.plan_origin.take(),
            localization: self.ctx.localization,
            localization_actions: self.ctx.localization_actions,
            actions: self.ctx.actions,
            backend_calls: self.ctx.backend_calls,
            workflow_fetches: self.ctx.workflow_fetches,
        });
        match result {
            Err(AgentError::Control(e @ ControlError::Transport(_))) => Err(AgentError::Control(e)),
            _ => Ok(()),
        }
    }

    fn choose_mode(&mut self, kind: &str) -> Result<OperationMode, AgentError> {
        let default = self.config.mode_table.select(kind)?;
        if !self.config.backend_selects_mode {
            return Ok(default);
        }
        // the selection call is billed to the default mode
        self.ctx.mode = Some(default);
        let allowed: Vec<String> = OperationMode::ALL.iter().map(|m| format!("mode {m}")).collect();
        let raw = self.ask(PromptKind::SelectMode, format!("EVENT {kind}\n"), allowed)?;
        let ta = parse_action(&raw).map_err(|_| AgentError::MalformedAction(raw.clone()))?;
        match (ta.action.name.as_str(), ta.action.args.as_slice()) {
            ("mode", [m]) => m.parse(),
            _ => Err(AgentError::MalformedAction(raw)),
        }
    }

    fn ask(&mut self, kind: PromptKind, context: String, allowed: Vec<String>) -> Result<String, AgentError> {
        let mode = self.mode();
        debug_assert_ne!(mode, OperationMode::RuleCentric, "rule-centric tasks never call the backend");
        *self.counters.backend_calls.entry(mode).or_default() += 1;
        self.ctx.backend_calls += 1;
        let raw = self
            .backend
            .complete(&Prompt::new(kind, context, allowed))
            .map_err(|e| AgentError::Backend(e.to_string()))?;
        self.note(EntryKind::Backend, raw.clone(), json!({"prompt": kind}));
        Ok(raw)
    }

    fn make_plan(&mut self, task: &Task, mode: OperationMode) -> Result<Plan, AgentError> {
        let plan = if mode == OperationMode::RuleCentric {
            let name = match task.trigger {
                Trigger::Establish { .. } => "link-bring-up",
                Trigger::Load { .. } => "wavelength-change",
                Trigger::Alarm { .. } => "failure-recovery",
            };
            *self.counters.workflow_fetches.entry(mode).or_default() += 1;
            self.ctx.workflow_fetches += 1;
            self.workflows
                .fetch(name, task.trigger.wavelengths())
                .ok_or_else(|| AgentError::PlanRejected {
                    reason: format!("no stored workflow `{name}`"),
                    raw: String::new(),
                })?
        } else {
            let mut context = format!(
                "TASK {}\nMODE {mode}\nLOAD current={} tick={}\n",
                task.trigger.describe(),
                self.rt.device.load(),
                self.rt.now
            );
            let mut last = None;
            for _ in 0..2 {
                let raw = self.ask(PromptKind::Plan, context.clone(), tool_signatures())?;
                match parse_steps(&raw)
                    .map_err(|e| e.to_string())
                    .and_then(|steps| Plan::from_actions(&steps, "backend"))
                {
                    Ok(plan) => {
                        self.ctx.plan_origin = Some(plan.origin.clone());
                        self.note_plan(&plan);
                        return Ok(plan);
                    }
                    Err(reason) => {
                        context.push_str(&format!("REJECTED {reason}\n"));
                        last = Some((reason, raw));
                    }
                }
            }
            let (reason, raw) = last.expect("two rejections recorded");
            return Err(AgentError::PlanRejected { reason, raw });
        };
        self.ctx.plan_origin = Some(plan.origin.clone());
        self.note_plan(&plan);
        Ok(plan)
    }

    fn note_plan(&mut self, plan: &Plan) {
        let text = plan.steps.iter().map(PlanStep::render).collect::<Vec<_>>().join("; ");
        self.note(
            EntryKind::Plan,
            format!("{} [{}]", plan.origin, text),
            serde_json::to_value(plan).expect("plan serializes"),
        );
    }

    fn execute(&mut self, plan: Plan) -> Result<(), AgentError> {
        let mut queue: VecDeque<(usize, PlanStep)> = plan.steps.into_iter().enumerate().map(|(i, s)| (i + 1, s)).collect();
        let mut repairs = 0;
        while let Some((label, step)) = queue.pop_front() {
            self.ctx.label = Some(label);
            if !step.rationale.is_empty() {
                self.note(EntryKind::Thought, step.rationale.clone(), Value::Null);
            }
            self.ctx.actions += 1;
            self.note(
                EntryKind::Action,
                step.render(),
                json!({"tool": step.tool, "args": step.args}),
            );
            let err = match self.run_tool(&step, label, &mut queue) {
                Ok(obs) => {
                    self.note(EntryKind::Observation, obs.text, obs.payload);
                    continue;
                }
                Err(e) => e,
            };
            self.note(EntryKind::Observation, format!("error: {err}"), json!({"error": err.to_string()}));
            let err = match err {
                ToolError::Abort(e) => return Err(e),
                e => e,
            };
            if repairs >= self.config.repair_limit {
                return Err(AgentError::ExecutionAborted {
                    step: step.render(),
                    reason: format!("{err} (repair limit reached)"),
                });
            }
            repairs += 1;
            match self.repair(&err, &step)? {
                Repair::Insert(fix) => {
                    queue.push_front((label, step));
                    queue.push_front((label, fix));
                }
                Repair::Skip => {}
                Repair::Abort(reason) => {
                    return Err(AgentError::ExecutionAborted {
                        step: step.render(),
                        reason,
                    })
                }
            }
        }
        Ok(())
    }

    fn repair(&mut self, err: &ToolError, step: &PlanStep) -> Result<Repair, AgentError> {
        if self.mode() == OperationMode::RuleCentric {
            return Ok(match err {
                ToolError::CutLink(_) => Repair::Insert(PlanStep::new("wait-for-repair", &[], "rule: dark span")),
                ToolError::Localization(_) => Repair::Insert(PlanStep::new("observe", &["30".into()], "rule: gather more evidence")),
                _ => Repair::Skip,
            });
        }
        let mut allowed = tool_signatures();
        allowed.push("skip  -- drop the failed step".into());
        allowed.push("abort  -- stop the task".into());
        let raw = self.ask(
            PromptKind::Repair,
            format!("ERROR {err}\nSTEP {}\n", step.render()),
            allowed,
        )?;
        let Ok(ta) = parse_action(&raw) else {
            return Ok(Repair::Abort(format!("malformed repair answer {raw:?}")));
        };
        let a = ta.action;
        Ok(match a.name.as_str() {
            "skip" if a.args.is_empty() => Repair::Skip,
            "abort" => Repair::Abort("backend chose to abort".into()),
            _ => {
                let fix = PlanStep::new(&a.name, &a.args, &ta.thought.unwrap_or_default());
                match fix.validate() {
                    Ok(()) => Repair::Insert(fix),
                    Err(why) => Repair::Abort(format!("invalid repair step: {why}")),
                }
            }
        })
    }

    fn run_tool(
        &mut self,
        step: &PlanStep,
        label: usize,
        queue: &mut VecDeque<(usize, PlanStep)>,
    ) -> Result<Observation, ToolError> {
        step.validate().map_err(ToolError::BadArgs)?;
        let int = |i: usize| step.args.get(i).map(|a| a.parse::<u64>().map_err(|e| ToolError::BadArgs(e.to_string())));
        let real = |i: usize| step.args.get(i).map(|a| a.parse::<f64>().map_err(|e| ToolError::BadArgs(e.to_string())));
        match step.tool.as_str() {
            "retrieve-docs" => self.retrieve_docs(&step.args.join(" ")),
            "localize-failure" => self.localize_failure(),
            "generate-recovery" => self.generate_recovery(label, queue),
            "optimize-power" => self.optimize_power(),
            "sync-twin" => self.sync_twin(),
            "fit-twin" => self.fit_twin(),
            "probe-configs" => {
                let delta = real(0).transpose()?.unwrap_or(self.config.probe_delta_db);
                self.probe_configs(delta)
            }
            "set-load" => self.set_load(int(0).transpose()?.unwrap_or(0) as usize),
            "adjust-gain" => {
                let amp = int(0).transpose()?.unwrap_or(0) as usize;
                let db = real(1).transpose()?.unwrap_or(0.0);
                self.adjust_gain(amp, db)
            }
            "wait-for-repair" => {
                let max = int(0).transpose()?.unwrap_or(self.config.wait_limit_ticks);
                self.wait_for_repair(max)
            }
            "track-aging" => self.track_aging(int(0).transpose()?.unwrap_or(0) as usize),
            "observe" => {
                let n = int(0).transpose()?.unwrap_or(1);
                self.rt.advance(n)?;
                Ok(Observation::new(format!("observed {n} ticks"), json!({"ticks": n})))
            }
            "react-optimize" => {
                let max = int(0).transpose()?.map(|v| v as usize).unwrap_or(self.config.react.max_iters);
                self.react(max)
            }
            other => Err(ToolError::BadArgs(format!("no implementation for `{other}`"))),
        }
    }

    fn retrieve_docs(&mut self, query: &str) -> Result<Observation, ToolError> {
        let chunks: Vec<RetrievedChunk> = self
            .store
            .retrieve(query, self.config.retrieve_k)
            .map_err(|e| ToolError::Other(e.to_string()))?;
        self.ctx.chunks = chunks
            .iter()
            .map(|c| EvidenceChunk {
                doc_id: c.doc_id.clone(),
                score: c.score,
                excerpt: self.store.excerpt(c).to_string(),
            })
            .collect();
        let text = if chunks.is_empty() {
            "no matching documents".to_string()
        } else {
            chunks
                .iter()
                .map(|c| format!("{} ({:.3})", c.doc_id, c.score))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Ok(Observation::new(text, serde_json::to_value(&chunks).expect("chunks serialize")))
    }

    fn evidence(&mut self) -> Result<Evidence, ToolError> {
        self.rt.refresh()?;
        let now = self.rt.now;
        let since = self.ctx.trigger_tick.saturating_sub(100);
        let alarms: Vec<Alarm> = self.rt.monitor.alarms().iter().filter(|a| a.tick >= since).cloned().collect();
        let log_lines = self
            .rt
            .port
            .get_logs(&LogRange::ticks(since, now))?
            .into_iter()
            .map(|e| format!("tick={} {:?} {} {}", e.tick, e.severity, e.source, e.text))
            .collect();
        let records = self.rt.monitor.buffer().tail(4 * EVIDENCE_RECORDS);
        Ok(Evidence {
            tick: now,
            alarms,
            log_lines,
            chunks: self.ctx.chunks.clone(),
            spans: span_evidence(&records, &self.rt.device),
        })
    }

    fn localize_failure(&mut self) -> Result<Observation, ToolError> {
        let evidence = self.evidence()?;
        let loc = if self.mode() == OperationMode::RuleCentric {
            let loc = localization_rule(&evidence.spans)
                .ok_or_else(|| ToolError::Localization("no span deviates from its datasheet".into()))?;
            cross_check(&loc, &evidence.spans).map_err(ToolError::Localization)?;
            loc
        } else {
            self.localize_with_backend(&evidence)?
        };
        self.ctx.localization = Some(loc);
        self.ctx.localization_actions = Some(self.ctx.actions);
        self.ctx.evidence = Some(evidence);
        Ok(Observation::new(
            format!("span {} {} (excess {:.2} dB)", loc.span, loc.kind.as_str(), loc.excess_db),
            serde_json::to_value(loc).expect("localization serializes"),
        ))
    }

    fn localize_with_backend(&mut self, evidence: &Evidence) -> Result<Localization, ToolError> {
        let mut context = evidence.render();
        let allowed = vec![
            "report <span:int> <cut|aging>  -- name the failed span".to_string(),
            "report none  -- no anomaly in the evidence".to_string(),
        ];
        let mut reason = String::new();
        for _ in 0..2 {
            let raw = self.ask(PromptKind::Localize, context.clone(), allowed.clone())?;
            let verdict = parse_action(&raw).map_err(|e| e.to_string()).and_then(|ta| {
                match (ta.action.name.as_str(), ta.action.args.as_slice()) {
                    ("report", [none]) if none == "none" => Ok(None),
                    ("report", [span, kind]) => {
                        let span: usize = span.parse().map_err(|_| format!("bad span `{span}`"))?;
                        let kind = FailureKind::parse(kind).ok_or_else(|| format!("bad kind `{kind}`"))?;
                        let excess_db = evidence
                            .spans
                            .iter()
                            .find(|s| s.span == span)
                            .map_or(0.0, |s| s.excess_db());
                        Ok(Some(Localization { span, kind, excess_db }))
                    }
                    _ => Err(format!("expected `report`, got `{}`", ta.action.render())),
                }
            });
            match verdict {
                Ok(None) => return Err(ToolError::Localization("backend reports no anomalous span".into())),
                Ok(Some(loc)) => match cross_check(&loc, &evidence.spans) {
                    Ok(()) => return Ok(loc),
                    Err(why) => reason = why,
                },
                Err(why) => reason = why,
            }
            context.push_str(&format!("REJECTED {reason}\n"));
        }
        Err(ToolError::Localization(format!("inconsistent answers: {reason}")))
    }

    fn generate_recovery(&mut self, label: usize, queue: &mut VecDeque<(usize, PlanStep)>) -> Result<Observation, ToolError> {
        let (Some(loc), Some(evidence)) = (self.ctx.localization, self.ctx.evidence.as_ref()) else {
            return Err(ToolError::Other("nothing localized yet".into()));
        };
        let plan = generate_recovery(&loc, &self.twin.params, &self.rt.device, &evidence.spans);
        let remaining: Vec<(usize, PlanStep)> = queue.drain(..).collect();
        for step in &plan.steps {
            let l = remaining
                .iter()
                .find(|(_, s)| s.tool == step.tool)
                .map_or(label, |(l, _)| *l);
            queue.push_back((l, step.clone()));
        }
        let text = plan.steps.iter().map(PlanStep::render).collect::<Vec<_>>().join("; ");
        Ok(Observation::new(text, serde_json::to_value(&plan).expect("plan serializes")))
    }

    fn optimize_power(&mut self) -> Result<Observation, ToolError> {
        if let Some(span) = self.rt.dark_span() {
            return Err(ToolError::CutLink(span));
        }
        self.rt.refresh()?;
        let device = &self.rt.device;
        let mut env = TwinEnv::new(device.nominal_link(), self.twin.params.clone(), device.channel_grid());
        let init = device.gain_config();
        let report = coordinate_ascent(&mut env, &init, &self.config.coordinate).map_err(|e| match e {
            crate::optimizer::OptimizerError::Objective(ObjectiveError::CutLink(s)) => ToolError::CutLink(s),
            e => ToolError::Optimizer(e.to_string()),
        })?;
        self.rt.edit(&ConfigEdit::apply_config(&report.best_config))?;
        let measured = self.rt.advance(1)?.last().and_then(TelemetryRecord::min_real_q);
        Ok(Observation::new(
            format!(
                "applied gains [{}]; predicted min-Q {:.3} dB after {} evaluations; measured {}",
                report.best_config.gains.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>().join(", "),
                report.best_value,
                report.evaluations,
                measured.map_or("n/a".to_string(), |q| format!("{q:.3} dB"))
            ),
            json!({
                "gains": report.best_config.gains,
                "predicted_min_q_db": report.best_value,
                "evaluations": report.evaluations,
                "measured_min_q_db": measured,
            }),
        ))
    }

    fn sync_twin(&mut self) -> Result<Observation, ToolError> {
        if let Some(span) = self.rt.dark_span() {
            return Err(ToolError::CutLink(span));
        }
        let records = self.rt.usable_tail(self.config.sync_records);
        if records.is_empty() {
            return Err(ToolError::Other("no usable telemetry".into()));
        }
        for r in &records {
            self.twin.sync(r);
        }
        let p = &self.twin.params;
        Ok(Observation::new(
            format!(
                "twin synced on {} records; extra loss [{}] dB",
                records.len(),
                p.extra_loss_db.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
            ),
            serde_json::to_value(p).expect("parameters serialize"),
        ))
    }

    fn fit_twin(&mut self) -> Result<Observation, ToolError> {
        let records = self.rt.usable_tail(self.config.fit_window);
        let report = self.twin.fit(&records)?;
        Ok(Observation::new(
            format!(
                "fit on {} records: rmse {:.3} -> {:.3} dB in {} iterations",
                records.len(),
                report.initial_rmse,
                report.residual_rmse,
                report.iterations
            ),
            json!({
                "records": records.len(),
                "initial_rmse": report.initial_rmse,
                "residual_rmse": report.residual_rmse,
                "iterations": report.iterations,
                "converged": report.converged,
            }),
        ))
    }

    fn probe_configs(&mut self, delta: f64) -> Result<Observation, ToolError> {
        if let Some(span) = self.rt.dark_span() {
            return Err(ToolError::CutLink(span));
        }
        self.rt.refresh()?;
        let base = self.rt.device.gain_config();
        let mut probes = 0;
        for k in 0..base.len() {
            for d in [delta, -delta, delta / 2.0, -delta / 2.0] {
                let mut cfg = base.clone();
                cfg.gains[k] = (cfg.gains[k] + d).clamp(GAIN_MIN_DB, GAIN_MAX_DB);
                self.rt.edit(&ConfigEdit {
                    expected_version: None,
                    changes: vec![Change::SetGain {
                        amplifier: k,
                        db: cfg.gains[k],
                    }],
                })?;
                self.rt.advance(1)?;
                probes += 1;
            }
            self.rt.edit(&ConfigEdit {
                expected_version: None,
                changes: vec![Change::SetGain {
                    amplifier: k,
                    db: base.gains[k],
                }],
            })?;
        }
        self.rt.advance(1)?;
        Ok(Observation::new(
            format!("{probes} probe configurations of +/-{delta} dB, configuration restored"),
            json!({"probes": probes, "delta_db": delta}),
        ))
    }

    fn set_load(&mut self, wavelengths: usize) -> Result<Observation, ToolError> {
        let result = self.rt.edit(&ConfigEdit::set_load(wavelengths))?;
        self.rt.advance(1)?;
        Ok(Observation::new(
            format!("load set to {wavelengths}; {} slots changed", result.changed_slots.len()),
            json!({"wavelengths": wavelengths, "changed_slots": result.changed_slots}),
        ))
    }

    fn adjust_gain(&mut self, amplifier: usize, db: f64) -> Result<Observation, ToolError> {
        self.rt.edit(&ConfigEdit {
            expected_version: None,
            changes: vec![Change::SetGain { amplifier, db }],
        })?;
        self.rt.advance(1)?;
        Ok(Observation::new(
            format!("amplifier {amplifier} gain set to {db:.3} dB"),
            json!({"amplifier": amplifier, "gain_db": db}),
        ))
    }

    fn wait_for_repair(&mut self, max_ticks: u64) -> Result<Observation, ToolError> {
        let mut waited = 0;
        while self.rt.dark_span().is_some() {
            if waited >= max_ticks {
                return Err(ToolError::Timeout(format!("link still dark after {waited} ticks")));
            }
            self.rt.advance(1)?;
            waited += 1;
        }
        Ok(Observation::new(
            format!("all spans lit after {waited} ticks"),
            json!({"waited_ticks": waited}),
        ))
    }

    fn track_aging(&mut self, span: usize) -> Result<Observation, ToolError> {
        let t = self.config.track;
        let amp = span + 1;
        if amp >= self.rt.device.amplifiers.len() {
            return Err(ToolError::BadArgs(format!("no span {span}")));
        }
        let mut compensated = self
            .rt
            .span_excess(span)
            .ok_or_else(|| ToolError::Other("no span reading".into()))?;
        let mut history = vec![compensated];
        let mut adjustments = 0;
        let mut settled = false;
        let mut ticks = 0;
        while ticks < t.max_ticks {
            self.rt.advance(1)?;
            ticks += 1;
            if let Some(dark) = self.rt.dark_span() {
                return Err(ToolError::CutLink(dark));
            }
            let Some(excess) = self.rt.span_excess(span) else { continue };
            self.twin.params.extra_loss_db[span] = excess.clamp(0.0, EXTRA_LOSS_MAX_DB);
            history.push(excess);
            if excess - compensated >= t.drift_db {
                let g = self.rt.device.amplifiers[amp].gain_db;
                let target = (g + excess - compensated).min(RECOVERY_GAIN_CAP_DB.max(g));
                if target > g {
                    self.rt.edit(&ConfigEdit {
                        expected_version: None,
                        changes: vec![Change::SetGain { amplifier: amp, db: target }],
                    })?;
                    adjustments += 1;
                }
                compensated = excess;
            }
            let n = history.len();
            if n > t.settle_ticks && (excess - history[n - 1 - t.settle_ticks]).abs() < t.settle_db {
                settled = true;
                break;
            }
        }
        let last = history.last().copied().unwrap_or(compensated);
        Ok(Observation::new(
            format!(
                "span {span} {} at {last:.2} dB excess after {ticks} ticks; {adjustments} gain adjustments",
                if settled { "settled" } else { "still drifting" }
            ),
            json!({"span": span, "excess_db": last, "ticks": ticks, "adjustments": adjustments, "settled": settled}),
        ))
    }

    fn react(&mut self, max_iters: usize) -> Result<Observation, ToolError> {
        if let Some(span) = self.rt.dark_span() {
            return Err(ToolError::CutLink(span));
        }
        self.rt.refresh()?;
        let init = self.rt.device.gain_config();
        let options = ReactOptions {
            max_iters,
            ..self.config.react
        };
        let mut env = LiveEnv { rt: &mut self.rt, fatal: None };
        let mut backend = Metered {
            inner: &mut self.backend,
            calls: 0,
        };
        let outcome = react_optimize(&mut env, &mut backend, &init, &options);
        let fatal = env.fatal.take();
        let calls = backend.calls;
        let mode = self.mode();
        *self.counters.backend_calls.entry(mode).or_default() += calls;
        self.ctx.backend_calls += calls;
        if let Some(e) = fatal {
            return Err(ToolError::Abort(AgentError::Control(e)));
        }
        let outcome = outcome?;
        for turn in &outcome.turns {
            self.note(
                EntryKind::Backend,
                turn.raw.clone(),
                json!({"prompt": PromptKind::React, "action": turn.action, "observation": turn.observation}),
            );
        }
        let best = &outcome.report.best_config;
        self.rt.edit(&ConfigEdit::apply_config(best))?;
        self.rt.advance(1)?;
        Ok(Observation::new(
            format!(
                "best measured min-Q {:.3} dB after {} evaluations ({:?})",
                outcome.report.best_value, outcome.report.evaluations, outcome.end
            ),
            json!({"gains": best.gains, "best_min_q_db": outcome.report.best_value, "evaluations": outcome.report.evaluations}),
        ))
    }
}
