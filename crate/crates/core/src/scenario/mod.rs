//! Lifecycle scenarios: the event timeline, the hidden ground truth drawn from
//! the seed, and the mutable network state the events act on.

mod parse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{LinkTopology, AMPLIFIER_COUNT, SPAN_COUNT};

pub use parse::{load_scenario, ParseError, ScenarioError};

/// Wavelengths per provisioning batch (one real carrier plus four dummies).
pub const BATCH_SIZE: usize = 5;

const CANONICAL: &str = include_str!("../../scenarios/canonical.scn");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    EstablishBatches { batches: usize },
    SetLoad { wavelengths: usize },
    FiberCut { span: usize },
    AgingRamp { span: usize, rate_db_per_tick: f64, cap_db: f64 },
    RepairCut { span: usize },
}

impl EventKind {
    /// Short stable name used in logs and the mode table.
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::EstablishBatches { .. } => "establish",
            EventKind::SetLoad { .. } => "load",
            EventKind::FiberCut { .. } => "cut",
            EventKind::AgingRamp { .. } => "aging",
            EventKind::RepairCut { .. } => "repair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at_tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("span id {0} out of range (0..{SPAN_COUNT})")]
    BadSpan(usize),
    #[error("load {0} is not a multiple of {BATCH_SIZE} in 0..=30")]
    BadLoad(usize),
    #[error("aging rate must be positive and cap non-negative (rate {rate}, cap {cap})")]
    BadRamp { rate: f64, cap: f64 },
}

impl Event {
    pub fn validate(&self) -> Result<(), ValidationError> {
        match self.kind {
            EventKind::EstablishBatches { batches } => check_load(batches * BATCH_SIZE),
            EventKind::SetLoad { wavelengths } => check_load(wavelengths),
            EventKind::FiberCut { span } | EventKind::RepairCut { span } => check_span(span),
            EventKind::AgingRamp {
                span,
                rate_db_per_tick,
                cap_db,
            } => {
                check_span(span)?;
                if !(rate_db_per_tick > 0.0 && cap_db >= 0.0 && cap_db.is_finite()) {
                    return Err(ValidationError::BadRamp {
                        rate: rate_db_per_tick,
                        cap: cap_db,
                    });
                }
                Ok(())
            }
        }
    }
}

fn check_span(span: usize) -> Result<(), ValidationError> {
    if span >= SPAN_COUNT {
        return Err(ValidationError::BadSpan(span));
    }
    Ok(())
}

fn check_load(load: usize) -> Result<(), ValidationError> {
    if load % BATCH_SIZE != 0 || load > 30 {
        return Err(ValidationError::BadLoad(load));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub tick_ms: u64,
    /// Ticks to simulate; defaults to 200 past the last event.
    pub duration: u64,
    pub events: Vec<Event>,
}

impl Scenario {
    /// The built-in lifecycle preset.
    pub fn canonical() -> Self {
        load_scenario(CANONICAL).expect("shipped preset parses")
    }

    pub fn canonical_text() -> &'static str {
        CANONICAL
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn events_at(&self, tick: u64) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.at_tick == tick)
    }
}

/// Hidden plant parameters. Never exposed to the agent or the twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub hidden_extra_loss_db: Vec<f64>,
    pub hidden_nf_db: Vec<f64>,
    /// Accumulated aging per span, dB.
    pub aging_db: Vec<f64>,
}

impl GroundTruth {
    /// Span extra loss U[0, 1.5] dB and amplifier NF U[4.5, 6.5] dB from `seed`.
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6f75_6e64);
        let hidden_extra_loss_db = (0..SPAN_COUNT).map(|_| rng.random_range(0.0..1.5)).collect();
        let hidden_nf_db = (0..AMPLIFIER_COUNT).map(|_| rng.random_range(4.5..6.5)).collect();
        Self {
            hidden_extra_loss_db,
            hidden_nf_db,
            aging_db: vec![0.0; SPAN_COUNT],
        }
    }

    /// Nominal plant: no hidden loss, datasheet NF.
    pub fn nominal() -> Self {
        Self {
            hidden_extra_loss_db: vec![0.0; SPAN_COUNT],
            hidden_nf_db: vec![5.0; AMPLIFIER_COUNT],
            aging_db: vec![0.0; SPAN_COUNT],
        }
    }

    pub fn extra_loss_db(&self, span: usize) -> f64 {
        self.hidden_extra_loss_db[span] + self.aging_db[span]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActiveRamp {
    span: usize,
    rate: f64,
    cap: f64,
    start_db: f64,
    applied_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("invalid target load {0}")]
    InvalidLoad(usize),
}

/// The true plant plus the ramp bookkeeping. Owned by a single executor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub link: LinkTopology,
    pub truth: GroundTruth,
    ramps: Vec<ActiveRamp>,
    next_tick: u64,
    /// When false, `SetLoad` events are returned but left for an operator to apply.
    pub auto_apply_loads: bool,
}

impl NetworkState {
    pub fn new(nominal: LinkTopology, truth: GroundTruth) -> Self {
        let mut state = Self {
            link: nominal,
            truth,
            ramps: Vec::new(),
            next_tick: 0,
            auto_apply_loads: true,
        };
        state.sync_plant();
        state
    }

    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self::new(LinkTopology::default(), GroundTruth::draw(scenario.seed))
    }

    /// The tick the next `step` call must process.
    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    fn sync_plant(&mut self) {
        for (s, span) in self.link.spans.iter_mut().enumerate() {
            span.extra_loss_db = self.truth.extra_loss_db(s);
        }
        for (a, amp) in self.link.amplifiers.iter_mut().enumerate() {
            amp.noise_figure_db = self.truth.hidden_nf_db[a];
        }
    }

    /// Apply every event scheduled at `tick` and advance running aging ramps.
    ///
    /// Ticks must be processed in order; a repeated or skipped tick panics in
    /// debug builds.
    pub fn step(&mut self, scenario: &Scenario, tick: u64) -> Vec<Event> {
        debug_assert_eq!(tick, self.next_tick, "clock must advance one tick at a time");
        self.next_tick = tick + 1;
        let fired: Vec<Event> = scenario.events_at(tick).cloned().collect();
        for event in &fired {
            self.apply(&event.kind);
        }
        self.advance_ramps();
        fired
    }

    /// Apply a single event immediately (used for injected events too).
    pub fn apply(&mut self, kind: &EventKind) {
        match *kind {
            EventKind::EstablishBatches { batches } => {
                let _ = self.apply_wavelength_change(batches * BATCH_SIZE);
            }
            EventKind::SetLoad { wavelengths } => {
                if self.auto_apply_loads {
                    let _ = self.apply_wavelength_change(wavelengths);
                }
            }
            EventKind::FiberCut { span } => self.link.spans[span].is_cut = true,
            EventKind::RepairCut { span } => self.link.spans[span].is_cut = false,
            EventKind::AgingRamp {
                span,
                rate_db_per_tick,
                cap_db,
            } => {
                self.ramps.retain(|r| r.span != span);
                self.ramps.push(ActiveRamp {
                    span,
                    rate: rate_db_per_tick,
                    cap: cap_db,
                    start_db: self.truth.aging_db[span],
                    applied_ticks: 0,
                });
            }
        }
    }

    fn advance_ramps(&mut self) {
        for ramp in &mut self.ramps {
            ramp.applied_ticks += 1;
            let level = (ramp.start_db + ramp.rate * ramp.applied_ticks as f64).min(ramp.cap);
            self.truth.aging_db[ramp.span] = level.max(self.truth.aging_db[ramp.span]);
        }
        let truth = &self.truth;
        self.ramps.retain(|r| truth.aging_db[r.span] < r.cap);
        self.sync_plant();
    }

    pub fn load(&self) -> usize {
        self.link.grid.active_count()
    }

    /// Add or drop whole batches to reach `target` wavelengths.
    ///
    /// Adds fill the lowest free batch first; drops remove the highest occupied
    /// batch. The first slot of every batch carries the real transponder.
    pub fn apply_wavelength_change(&mut self, target: usize) -> Result<Vec<usize>, LoadError> {
        let grid = &mut self.link.grid;
        let batches = grid.slot_count / BATCH_SIZE;
        if target % BATCH_SIZE != 0 || target > batches * BATCH_SIZE {
            return Err(LoadError::InvalidLoad(target));
        }
        let occupied = |grid: &crate::physics::ChannelGrid, b: usize| grid.active[b * BATCH_SIZE];
        let mut changed = Vec::new();
        let mut current = grid.active_count();
        while current < target {
            let b = (0..batches).find(|&b| !occupied(grid, b)).expect("free batch exists");
            for k in 0..BATCH_SIZE {
                let slot = b * BATCH_SIZE + k;
                grid.active[slot] = true;
                grid.is_real[slot] = k == 0;
                changed.push(slot);
            }
            current += BATCH_SIZE;
        }
        while current > target {
            let b = (0..batches).rev().find(|&b| occupied(grid, b)).expect("occupied batch exists");
            for k in 0..BATCH_SIZE {
                let slot = b * BATCH_SIZE + k;
                grid.active[slot] = false;
                grid.is_real[slot] = false;
                changed.push(slot);
            }
            current -= BATCH_SIZE;
        }
        changed.sort_unstable();
        Ok(changed)
    }
}
