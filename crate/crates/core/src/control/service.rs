//! The single state owner: runs the clock, serializes writes, fans telemetry out.

use std::collections::BTreeSet;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::log::{LogEntry, LogRange, OperationLog, Severity};
use super::{Change, ConfigEdit, ControlError, DeviceConfig, EditResult};
use crate::gain::{GAIN_MAX_DB, GAIN_MIN_DB, TILT_MAX_DB, TILT_MIN_DB};
use crate::optimizer::min_real_q;
use crate::physics::transmit;
use crate::scenario::{Event, EventKind, NetworkState, Scenario};
use crate::telemetry::{detect_los, RingBuffer, Sampler, TelemetryFilter, TelemetryRecord, BUFFER_CAPACITY};

/// Records a subscriber may fall behind before it is disconnected.
pub const SUBSCRIBER_BACKLOG: usize = 1000;

/// Log source for operator service requests.
pub const SOURCE_OPERATOR: &str = "operator";
/// Log source for device-raised alarms.
pub const SOURCE_DEVICE: &str = "span-monitor";
/// Log source for accepted configuration edits.
pub const SOURCE_CONTROLLER: &str = "controller";

/// Noise-free plant state at one tick, kept for evaluation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub tick: u64,
    pub load: usize,
    /// True minimum Q over real channels; `None` while dark or idle.
    pub min_q_db: Option<f64>,
    pub extra_loss_db: Vec<f64>,
    pub cut_span: Option<usize>,
}

/// Items pushed to a subscriber's sink.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Record { tag: u64, record: Arc<Value> },
    Line(String),
}

/// Test hook that makes the next edit fail after staging `after_changes` changes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaultInjection {
    pub fail_next_edit_after: Option<usize>,
}

#[derive(Debug)]
struct Subscriber {
    id: u64,
    tag: u64,
    filter: TelemetryFilter,
    sink: SyncSender<Outgoing>,
}

/// Owns the plant, the clock, the operation log and the subscriber list.
#[derive(Debug)]
pub struct Service {
    scenario: Scenario,
    state: NetworkState,
    sampler: Sampler,
    version: u64,
    log: OperationLog,
    subscribers: Vec<Subscriber>,
    next_subscriber: u64,
    pending: Vec<EventKind>,
    los_spans: BTreeSet<usize>,
    buffer: RingBuffer<TelemetryRecord>,
    truth_trace: Vec<TruthSample>,
    pub fault: FaultInjection,
}

impl Service {
    pub fn new(scenario: Scenario, sigma_db: f64) -> Self {
        let mut state = NetworkState::for_scenario(&scenario);
        state.auto_apply_loads = false;
        let sampler = Sampler::new(scenario.seed, sigma_db);
        Self {
            scenario,
            state,
            sampler,
            version: 0,
            log: OperationLog::default(),
            subscribers: Vec::new(),
            next_subscriber: 0,
            pending: Vec::new(),
            los_spans: BTreeSet::new(),
            buffer: RingBuffer::new(BUFFER_CAPACITY),
            truth_trace: Vec::new(),
            fault: FaultInjection::default(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Ticks processed so far; the next `tick` call produces this tick.
    pub fn now(&self) -> u64 {
        self.state.next_tick()
    }

    pub fn is_finished(&self) -> bool {
        self.now() >= self.scenario.duration
    }

    /// The true plant. Evaluation code only; never exposed on the wire.
    pub fn plant(&self) -> &NetworkState {
        &self.state
    }

    /// Per-tick ground truth. Evaluation code only.
    pub fn truth_trace(&self) -> &[TruthSample] {
        &self.truth_trace
    }

    pub fn buffer(&self) -> &RingBuffer<TelemetryRecord> {
        &self.buffer
    }

    pub fn log(&self) -> &OperationLog {
        &self.log
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.len()
    }

    pub fn get_config(&self) -> DeviceConfig {
        DeviceConfig::from_link(&self.state.link, self.now(), self.version)
    }

    /// Validate and stage every change, then commit them together.
    pub fn edit_config(&mut self, edit: &ConfigEdit) -> Result<EditResult, ControlError> {
        if let Some(expected) = edit.expected_version {
            if expected != self.version {
                return Err(ControlError::Conflict {
                    expected,
                    actual: self.version,
                });
            }
        }
        if edit.changes.is_empty() {
            return Err(ControlError::Validation("empty change set".into()));
        }
        let fault = self.fault.fail_next_edit_after.take();
        let mut staged = self.state.clone();
        let amps = staged.link.amplifiers.len();
        let mut changed_slots = Vec::new();
        for (n, change) in edit.changes.iter().enumerate() {
            if fault == Some(n) {
                return Err(ControlError::Internal("injected commit failure".into()));
            }
            match *change {
                Change::SetGain { amplifier, db } => {
                    check_amp(amplifier, amps)?;
                    check_range("gain", db, GAIN_MIN_DB, GAIN_MAX_DB)?;
                    staged.link.amplifiers[amplifier].gain_db = db;
                }
                Change::SetTilt { amplifier, db } => {
                    check_amp(amplifier, amps)?;
                    check_range("tilt", db, TILT_MIN_DB, TILT_MAX_DB)?;
                    staged.link.amplifiers[amplifier].tilt_db = db;
                }
                Change::SetLoad { wavelengths } => {
                    let slots = staged
                        .apply_wavelength_change(wavelengths)
                        .map_err(|e| ControlError::Validation(e.to_string()))?;
                    changed_slots.extend(slots);
                }
            }
        }
        if fault.is_some_and(|n| n >= edit.changes.len()) {
            return Err(ControlError::Internal("injected commit failure".into()));
        }
        changed_slots.sort_unstable();
        changed_slots.dedup();
        self.state = staged;
        self.version += 1;
        let tick = self.now();
        self.log.append(
            tick,
            Severity::Info,
            SOURCE_CONTROLLER,
            format!("config v{} committed ({} changes)", self.version, edit.changes.len()),
            json!({"version": self.version, "changes": edit.changes}),
        );
        Ok(EditResult {
            version: self.version,
            applied: edit.changes.clone(),
            changed_slots,
        })
    }

    /// Queue an event for the next tick.
    pub fn inject_event(&mut self, kind: EventKind) -> Result<u64, ControlError> {
        let at_tick = self.now();
        Event {
            at_tick,
            kind: kind.clone(),
        }
        .validate()
        .map_err(|e| ControlError::Validation(e.to_string()))?;
        self.pending.push(kind);
        Ok(at_tick)
    }

    pub fn get_logs(&self, range: &LogRange) -> Vec<LogEntry> {
        self.log.query(range)
    }

    /// Register a sink; every later record is projected and pushed to it.
    pub fn subscribe(&mut self, filter: TelemetryFilter, tag: u64, sink: SyncSender<Outgoing>) -> u64 {
        let id = self.next_subscriber;
        self.next_subscriber += 1;
        self.subscribers.push(Subscriber { id, tag, filter, sink });
        id
    }

    /// Subscribe with a fresh bounded channel.
    pub fn subscribe_channel(&mut self, filter: TelemetryFilter) -> (u64, Receiver<Outgoing>) {
        let (tx, rx) = sync_channel(SUBSCRIBER_BACKLOG);
        let id = self.subscribe(filter, 0, tx);
        (id, rx)
    }

    pub fn unsubscribe(&mut self, id: u64) {
        self.subscribers.retain(|s| s.id != id);
    }

    /// Advance the clock by one tick and return the telemetry it produced.
    pub fn tick(&mut self) -> TelemetryRecord {
        let tick = self.now();
        let mut fired: Vec<EventKind> = std::mem::take(&mut self.pending);
        for kind in &fired {
            self.state.apply(kind);
        }
        fired.extend(self.state.step(&self.scenario, tick).into_iter().map(|e| e.kind));
        for kind in &fired {
            self.log_request(tick, kind);
        }
        let record = self.sampler.sample(&self.state.link, tick);
        self.record_truth(tick);
        self.raise_device_alarms(&record);
        self.fan_out(&record);
        self.buffer.push(record.clone());
        record
    }

    fn record_truth(&mut self, tick: u64) {
        let link = &self.state.link;
        let snap = transmit(link, &link.launch_vector(), &link.gain_config());
        self.truth_trace.push(TruthSample {
            tick,
            load: self.state.load(),
            min_q_db: min_real_q(&snap).ok(),
            extra_loss_db: link.spans.iter().map(|s| s.extra_loss_db).collect(),
            cut_span: snap.cut_span,
        });
    }

    fn log_request(&mut self, tick: u64, kind: &EventKind) {
        let (request, wavelengths) = match *kind {
            EventKind::EstablishBatches { batches } => ("establish", batches * crate::scenario::BATCH_SIZE),
            EventKind::SetLoad { wavelengths } => ("set-load", wavelengths),
            _ => return,
        };
        self.log.append(
            tick,
            Severity::Info,
            SOURCE_OPERATOR,
            format!("service request: {request} {wavelengths} wavelengths"),
            json!({"request": request, "wavelengths": wavelengths}),
        );
    }

    fn raise_device_alarms(&mut self, record: &TelemetryRecord) {
        let alarms = detect_los(record);
        let now: BTreeSet<usize> = alarms.iter().filter_map(|a| a.detail.span).collect();
        for alarm in &alarms {
            let span = alarm.detail.span.expect("LOS alarms carry a span");
            if self.los_spans.contains(&span) {
                continue;
            }
            self.log.append(
                record.tick,
                Severity::Critical,
                SOURCE_DEVICE,
                format!("LOS on span {span}: {}", alarm.detail.note),
                json!({"alarm": "loss_of_signal", "span": span, "osc_alive": record.osc_alive[span]}),
            );
        }
        for &span in self.los_spans.difference(&now) {
            self.log.append(
                record.tick,
                Severity::Info,
                SOURCE_DEVICE,
                format!("LOS cleared on span {span}"),
                json!({"alarm": "loss_of_signal_cleared", "span": span}),
            );
        }
        self.los_spans = now;
    }

    fn fan_out(&mut self, record: &TelemetryRecord) {
        if self.subscribers.is_empty() {
            return;
        }
        let mut dropped = Vec::new();
        for sub in &self.subscribers {
            let value = if sub.filter == TelemetryFilter::default() {
                serde_json::to_value(record).expect("record serializes")
            } else {
                sub.filter.project(record)
            };
            let item = Outgoing::Record {
                tag: sub.tag,
                record: Arc::new(value),
            };
            match sub.sink.try_send(item) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => dropped.push((sub.id, true)),
                Err(TrySendError::Disconnected(_)) => dropped.push((sub.id, false)),
            }
        }
        for (id, overflow) in dropped {
            self.unsubscribe(id);
            if overflow {
                let err = ControlError::BacklogOverflow(id);
                self.log.append(
                    record.tick,
                    Severity::Warning,
                    SOURCE_CONTROLLER,
                    err.to_string(),
                    json!({"subscription": id, "backlog": SUBSCRIBER_BACKLOG}),
                );
            }
        }
    }
}

fn check_amp(amplifier: usize, count: usize) -> Result<(), ControlError> {
    if amplifier >= count {
        return Err(ControlError::Validation(format!("no amplifier {amplifier}")));
    }
    Ok(())
}

fn check_range(what: &str, v: f64, lo: f64, hi: f64) -> Result<(), ControlError> {
    if !(lo..=hi).contains(&v) {
        return Err(ControlError::Validation(format!("{what} {v} dB outside [{lo}, {hi}]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gain::GainConfig;

    fn service() -> Service {
        Service::new(Scenario::canonical(), 0.1)
    }

    #[test]
    fn edit_round_trips_and_is_atomic() {
        let mut svc = service();
        svc.tick();
        let before = serde_json::to_string(&svc.get_config()).unwrap();
        let bad = ConfigEdit {
            expected_version: None,
            changes: vec![
                Change::SetGain { amplifier: 0, db: 19.5 },
                Change::SetGain { amplifier: 1, db: 26.0 },
            ],
        };
        assert!(matches!(svc.edit_config(&bad), Err(ControlError::Validation(_))));
        assert_eq!(serde_json::to_string(&svc.get_config()).unwrap(), before);

        svc.fault.fail_next_edit_after = Some(1);
        let good = ConfigEdit::apply_config(&GainConfig::flat(6, 19.5));
        assert!(matches!(svc.edit_config(&good), Err(ControlError::Internal(_))));
        assert_eq!(serde_json::to_string(&svc.get_config()).unwrap(), before);

        let logged = svc.log().len();
        svc.edit_config(&good).unwrap();
        assert_eq!(svc.log().len(), logged + 1);
        assert!(svc.get_config().amplifiers.iter().all(|a| a.gain_db == 19.5));
        assert_eq!(svc.tick().config.gains, vec![19.5; 6]);
    }

    #[test]
    fn stale_version_conflicts() {
        let mut svc = service();
        let mut edit = ConfigEdit::apply_config(&GainConfig::flat(6, 18.0));
        edit.expected_version = Some(0);
        svc.edit_config(&edit).unwrap();
        assert_eq!(
            svc.edit_config(&edit),
            Err(ControlError::Conflict { expected: 0, actual: 1 })
        );
    }

    #[test]
    fn injected_cut_shows_next_tick_and_is_logged() {
        let mut svc = service();
        svc.tick();
        svc.inject_event(EventKind::FiberCut { span: 0 }).unwrap();
        let rec = svc.tick();
        assert!(!rec.osc_alive[0]);
        let logs = svc.get_logs(&LogRange::all());
        assert!(logs
            .iter()
            .any(|e| e.severity == Severity::Critical && e.payload["span"] == 0));
        assert!(svc.inject_event(EventKind::FiberCut { span: 9 }).is_err());
    }

    #[test]
    fn slow_subscriber_is_dropped_without_blocking() {
        let mut svc = service();
        let (_, rx) = svc.subscribe_channel(TelemetryFilter::default());
        let (_, fast) = svc.subscribe_channel(TelemetryFilter::default());
        for _ in 0..SUBSCRIBER_BACKLOG + 50 {
            svc.tick();
            while fast.try_recv().is_ok() {}
        }
        assert_eq!(svc.subscriber_count(), 1);
        let ticks: Vec<u64> = rx
            .try_iter()
            .map(|o| match o {
                Outgoing::Record { record, .. } => record["tick"].as_u64().unwrap(),
                Outgoing::Line(_) => unreachable!(),
            })
            .collect();
        assert_eq!(ticks, (0..SUBSCRIBER_BACKLOG as u64).collect::<Vec<_>>());
        assert!(svc
            .get_logs(&LogRange::all())
            .iter()
            .any(|e| e.severity == Severity::Warning && e.text.contains("backlog")));
    }
}
