//! End-to-end lifecycle runs, the metrics derived from them and the
//! artifacts they produce.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, AgentError, LlmBackend, Localization, ModeCounters, TaskReport, Transcript};
use crate::control::{LocalPort, NetworkPort, Service, TruthSample};
use crate::gain::GainConfig;
use crate::optimizer::{brute_force, default_grid, PureObjective, TwinEnv};
use crate::scenario::{Event, EventKind, NetworkState, Scenario};
use crate::telemetry::{write_csv, Alarm, AlarmKind, TelemetryRecord, DEFAULT_SIGMA_DB};
use crate::twin::study::{lifecycle_study, StageResult};
use crate::twin::TwinParameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleOptions {
    pub sigma_db: f64,
    pub agent: AgentConfig,
    /// Compare every load event against the grid oracle.
    pub brute_force: bool,
    /// Samples per stage for the held-out twin study; 0 skips it.
    pub twin_study_samples: usize,
}

impl Default for LifecycleOptions {
    fn default() -> Self {
        Self {
            sigma_db: DEFAULT_SIGMA_DB,
            agent: AgentConfig::default(),
            brute_force: true,
            twin_study_samples: 300,
        }
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct LifecycleRun {
    pub scenario: Scenario,
    pub records: Vec<TelemetryRecord>,
    pub alarms: Vec<Alarm>,
    pub transcript: Transcript,
    pub reports: Vec<TaskReport>,
    pub counters: ModeCounters,
    pub truth: Vec<TruthSample>,
    pub twin: TwinParameters,
    pub slot_count: usize,
    /// True plant right after each task finished, keyed by task id.
    pub snapshots: Vec<(u64, NetworkState)>,
}

/// Step `agent` until `until`, capturing the plant after every task.
pub fn drive<P, B, F>(agent: &mut Agent<P, B>, until: u64, mut snapshot: F) -> Result<Vec<(u64, NetworkState)>, AgentError>
where
    P: NetworkPort,
    B: LlmBackend,
    F: FnMut(&Agent<P, B>) -> Option<NetworkState>,
{
    let mut out = Vec::new();
    let mut seen = agent.reports().len();
    while agent.now() < until {
        agent.step()?;
        let n = agent.reports().len();
        if n > seen {
            if let Some(state) = snapshot(agent) {
                for r in &agent.reports()[seen..n] {
                    out.push((r.id, state.clone()));
                }
            }
            seen = n;
        }
    }
    Ok(out)
}

/// Collect the artifacts of a finished agent.
pub fn collect<P: NetworkPort, B: LlmBackend>(
    agent: &Agent<P, B>,
    scenario: Scenario,
    truth: Vec<TruthSample>,
    snapshots: Vec<(u64, NetworkState)>,
) -> LifecycleRun {
    LifecycleRun {
        scenario,
        records: agent.records().to_vec(),
        alarms: agent.monitor().alarms().to_vec(),
        transcript: agent.transcript().clone(),
        reports: agent.reports().to_vec(),
        counters: agent.counters().clone(),
        truth,
        twin: agent.twin().params.clone(),
        slot_count: agent.twin().nominal.grid.slot_count,
        snapshots,
    }
}

/// Run `scenario` in-process against `backend`.
pub fn run_local<B: LlmBackend>(scenario: &Scenario, backend: B, options: &LifecycleOptions) -> Result<LifecycleRun, AgentError> {
    let service = Service::new(scenario.clone(), options.sigma_db);
    let mut agent = Agent::new(LocalPort::new(service), backend, options.agent.clone())?;
    let snapshots = drive(&mut agent, scenario.duration, |a| Some(a.port().service().plant().clone()))?;
    let truth = agent.port().service().truth_trace().to_vec();
    Ok(collect(&agent, scenario.clone(), truth, snapshots))
}

/// One load event measured against the grid oracle on the true plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadEventGap {
    pub task: u64,
    pub kind: String,
    pub load: usize,
    pub end_tick: u64,
    /// True min-Q of the configuration the agent left in place.
    pub agent_min_q_db: f64,
    pub oracle_min_q_db: f64,
    pub oracle_gains: Vec<f64>,
    /// `oracle - agent`; negative when the agent beat the grid.
    pub gap_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingMetrics {
    pub span: usize,
    pub start_tick: u64,
    pub forecast_tick: Option<u64>,
    /// Aging already accumulated when the forecast fired.
    pub aging_at_forecast_db: Option<f64>,
    pub localization: Option<Localization>,
    pub pre_aging_min_q_db: Option<f64>,
    pub recovery_tick: Option<u64>,
    pub post_recovery_min_q_db: Option<f64>,
    /// `pre - post`.
    pub deficit_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutMetrics {
    pub span: usize,
    pub cut_tick: u64,
    pub localization: Option<Localization>,
    pub localization_actions: Option<usize>,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    pub tasks: usize,
    pub failed_tasks: usize,
    pub load_events: Vec<LoadEventGap>,
    pub mean_gap_db: Option<f64>,
    pub cuts: Vec<CutMetrics>,
    pub aging: Vec<AgingMetrics>,
    pub twin_study: Vec<StageResult>,
    pub counters: ModeCounters,
    pub final_twin: TwinParameters,
    pub final_min_q_db: Option<f64>,
}

fn truth_at(truth: &[TruthSample], tick: u64) -> Option<&TruthSample> {
    truth.iter().find(|t| t.tick == tick)
}

/// True min-Q of the plant's current configuration and the grid oracle's best.
pub fn oracle_gap(state: &NetworkState) -> Option<(f64, f64, GainConfig)> {
    let env = TwinEnv::ground_truth(state);
    let agent = env.value(&state.link.gain_config()).ok()?;
    let oracle = brute_force(&env, &default_grid(state.link.amplifiers.len())).ok()?;
    Some((agent, oracle.best_value, oracle.best_config))
}

fn first_alarm_task_after(reports: &[TaskReport], tick: u64) -> Option<&TaskReport> {
    reports
        .iter()
        .find(|r| r.start_tick >= tick && matches!(r.trigger, crate::agent::Trigger::Alarm { .. }))
}

impl LifecycleRun {
    pub fn summarize(&self, options: &LifecycleOptions) -> Summary {
        let load_events: Vec<LoadEventGap> = if options.brute_force {
            self.reports
                .iter()
                .filter(|r| matches!(r.kind.as_str(), "establish" | "add" | "drop") && r.success)
                .filter_map(|r| {
                    let (_, state) = self.snapshots.iter().find(|(id, _)| *id == r.id)?;
                    let (agent, oracle, cfg) = oracle_gap(state)?;
                    Some(LoadEventGap {
                        task: r.id,
                        kind: r.kind.clone(),
                        load: state.load(),
                        end_tick: r.end_tick,
                        agent_min_q_db: agent,
                        oracle_min_q_db: oracle,
                        oracle_gains: cfg.gains,
                        gap_db: oracle - agent,
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        let mean_gap_db =
            (!load_events.is_empty()).then(|| load_events.iter().map(|e| e.gap_db).sum::<f64>() / load_events.len() as f64);

        let cuts = self
            .scenario
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::FiberCut { span } => Some((span, e.at_tick)),
                _ => None,
            })
            .map(|(span, cut_tick)| {
                let task = first_alarm_task_after(&self.reports, cut_tick);
                CutMetrics {
                    span,
                    cut_tick,
                    localization: task.and_then(|t| t.localization),
                    localization_actions: task.and_then(|t| t.localization_actions),
                    recovered: task.is_some_and(|t| t.success),
                }
            })
            .collect();

        let aging = self
            .scenario
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::AgingRamp { span, .. } => Some((span, e.at_tick)),
                _ => None,
            })
            .map(|(span, start)| {
                let before = start.checked_sub(1).and_then(|t| truth_at(&self.truth, t));
                let forecast_tick = self
                    .alarms
                    .iter()
                    .find(|a| a.kind == AlarmKind::DegradationForecast && a.tick >= start)
                    .map(|a| a.tick);
                let aging_at_forecast_db = forecast_tick.and_then(|t| {
                    let now = truth_at(&self.truth, t)?;
                    Some(now.extra_loss_db[span] - before?.extra_loss_db[span])
                });
                let task = first_alarm_task_after(&self.reports, start);
                let recovery_tick = task.filter(|t| t.success).map(|t| t.end_tick);
                let post = recovery_tick
                    .and_then(|t| truth_at(&self.truth, t.saturating_sub(1)))
                    .and_then(|s| s.min_q_db);
                let pre = before.and_then(|s| s.min_q_db);
                AgingMetrics {
                    span,
                    start_tick: start,
                    forecast_tick,
                    aging_at_forecast_db,
                    localization: task.and_then(|t| t.localization),
                    pre_aging_min_q_db: pre,
                    recovery_tick,
                    post_recovery_min_q_db: post,
                    deficit_db: pre.zip(post).map(|(a, b)| a - b),
                }
            })
            .collect();

        let twin_study = if options.twin_study_samples > 0 {
            let (span, level) = self
                .scenario
                .events
                .iter()
                .find_map(|e| match e.kind {
                    EventKind::AgingRamp { span, cap_db, .. } => Some((span, cap_db)),
                    _ => None,
                })
                .unwrap_or((2, 6.0));
            lifecycle_study(self.scenario.seed, span, level, options.twin_study_samples).unwrap_or_default()
        } else {
            Vec::new()
        };

        Summary {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            ticks: self.records.len() as u64,
            tasks: self.reports.len(),
            failed_tasks: self.reports.iter().filter(|r| !r.success).count(),
            load_events,
            mean_gap_db,
            cuts,
            aging,
            twin_study,
            counters: self.counters.clone(),
            final_twin: self.twin.clone(),
            final_min_q_db: self.truth.last().and_then(|t| t.min_q_db),
        }
    }

    pub fn telemetry_csv(&self) -> String {
        write_csv(&self.records, self.slot_count)
    }

    pub fn alarms_jsonl(&self) -> String {
        self.alarms
            .iter()
            .map(|a| serde_json::to_string(a).expect("alarm serializes") + "\n")
            .collect()
    }

    /// Per-tick measured and true minimum Q.
    pub fn q_trace_csv(&self) -> String {
        let mut s = String::from("tick,load,measured_min_q_db,true_min_q_db\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |q| format!("{q:.6}"));
        for r in &self.records {
            let truth = truth_at(&self.truth, r.tick);
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.tick,
                truth.map_or(r.active_slots().len(), |t| t.load),
                opt(r.min_real_q()),
                opt(truth.and_then(|t| t.min_q_db))
            );
        }
        s
    }
}

/// Outcome of one seeded failure-injection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionTrial {
    pub seed: u64,
    pub injected_span: usize,
    pub localization: Option<Localization>,
    pub localization_actions: Option<usize>,
    pub task_success: bool,
}

/// Bring-up at tick 0, then a failure on a seed-chosen span at tick 200.
pub fn injection_scenario(seed: u64, aging: bool) -> (Scenario, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x696e_6a65_6374);
    let span = rng.random_range(0..crate::physics::SPAN_COUNT);
    let mut events = vec![Event {
        at_tick: 0,
        kind: EventKind::EstablishBatches { batches: 4 },
    }];
    if aging {
        events.push(Event {
            at_tick: 200,
            kind: EventKind::AgingRamp {
                span,
                rate_db_per_tick: 0.1,
                cap_db: 6.0,
            },
        });
    } else {
        events.push(Event {
            at_tick: 200,
            kind: EventKind::FiberCut { span },
        });
        events.push(Event {
            at_tick: 300,
            kind: EventKind::RepairCut { span },
        });
    }
    let scenario = Scenario {
        name: format!("{}-{seed}", if aging { "aging" } else { "cut" }),
        seed,
        tick_ms: 1,
        duration: 500,
        events,
    };
    (scenario, span)
}

pub fn injection_trial<B: LlmBackend>(seed: u64, aging: bool, backend: B, agent: &AgentConfig) -> Result<InjectionTrial, AgentError> {
    let (scenario, span) = injection_scenario(seed, aging);
    let options = LifecycleOptions {
        agent: agent.clone(),
        brute_force: false,
        twin_study_samples: 0,
        ..LifecycleOptions::default()
    };
    let run = run_local(&scenario, backend, &options)?;
    let task = first_alarm_task_after(&run.reports, 200);
    Ok(InjectionTrial {
        seed,
        injected_span: span,
        localization: task.and_then(|t| t.localization),
        localization_actions: task.and_then(|t| t.localization_actions),
        task_success: task.is_some_and(|t| t.success),
    })
}

/// The optimizer benchmark: the scenario's true plant carrying `load`
/// wavelengths, all gains at 18 dB and tilts at 0.
pub fn benchmark_instance(scenario: &Scenario, load: usize) -> NetworkState {
    let mut state = NetworkState::for_scenario(scenario);
    state
        .apply_wavelength_change(load)
        .expect("benchmark load is a batch multiple");
    let amps = state.link.amplifiers.len();
    state.link.apply_config(&GainConfig::flat(amps, 18.0));
    state
}
