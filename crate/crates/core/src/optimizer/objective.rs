//! Evaluation environments for the min-Q objective.

use thiserror::Error;

use crate::gain::GainConfig;
use crate::physics::{ChannelGrid, LinkSnapshot, LinkTopology};
use crate::scenario::NetworkState;
use crate::telemetry::{Sampler, TelemetryRecord};
use crate::twin::{predict, TwinParameters};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("no transponder-carrying channel is active")]
    NoActiveChannels,
    #[error("span {0} is cut; objective undefined")]
    CutLink(usize),
    #[error("configuration rejected: {0}")]
    Rejected(String),
}

/// An environment that may have side effects (applies the config, consumes time).
pub trait Objective {
    fn evaluate(&mut self, config: &GainConfig) -> Result<f64, ObjectiveError>;
}

/// A side-effect-free environment; safe to call from many threads.
pub trait PureObjective: Sync {
    fn value(&self, config: &GainConfig) -> Result<f64, ObjectiveError>;
}

pub fn min_real_q(snapshot: &LinkSnapshot) -> Result<f64, ObjectiveError> {
    if let Some(span) = snapshot.cut_span {
        return Err(ObjectiveError::CutLink(span));
    }
    if !snapshot.channels.iter().any(|c| c.is_real) {
        return Err(ObjectiveError::NoActiveChannels);
    }
    snapshot.min_real_q().ok_or(ObjectiveError::NoActiveChannels)
}

/// Noise-free evaluation on a parameterized copy of the link.
#[derive(Debug, Clone)]
pub struct TwinEnv {
    pub nominal: LinkTopology,
    pub params: TwinParameters,
    pub grid: ChannelGrid,
}

impl TwinEnv {
    pub fn new(nominal: LinkTopology, params: TwinParameters, grid: ChannelGrid) -> Self {
        Self { nominal, params, grid }
    }

    /// The true plant of `state`, evaluated without measurement noise.
    pub fn ground_truth(state: &NetworkState) -> Self {
        let link = &state.link;
        Self {
            nominal: link.clone(),
            params: TwinParameters {
                extra_loss_db: link.spans.iter().map(|s| s.extra_loss_db).collect(),
                nf_db: link.amplifiers.iter().map(|a| a.noise_figure_db).collect(),
            },
            grid: link.grid.clone(),
        }
    }
}

impl PureObjective for TwinEnv {
    fn value(&self, config: &GainConfig) -> Result<f64, ObjectiveError> {
        min_real_q(&predict(&self.params, &self.nominal, config, &self.grid))
    }
}

impl Objective for TwinEnv {
    fn evaluate(&mut self, config: &GainConfig) -> Result<f64, ObjectiveError> {
        self.value(config)
    }
}

/// Measured evaluation on a private copy of the plant: every call applies the
/// configuration, advances one tick and reads the noisy telemetry.
#[derive(Debug, Clone)]
pub struct SimulatorEnv {
    pub state: NetworkState,
    sampler: Sampler,
    tick: u64,
    pub records: Vec<TelemetryRecord>,
}

impl SimulatorEnv {
    pub fn new(state: NetworkState, seed: u64, sigma_db: f64) -> Self {
        Self {
            state,
            sampler: Sampler::new(seed, sigma_db),
            tick: 0,
            records: Vec::new(),
        }
    }
}

impl Objective for SimulatorEnv {
    fn evaluate(&mut self, config: &GainConfig) -> Result<f64, ObjectiveError> {
        config
            .validate()
            .map_err(|e| ObjectiveError::Rejected(e.to_string()))?;
        if let Some(s) = self.state.link.spans.iter().position(|s| s.is_cut) {
            return Err(ObjectiveError::CutLink(s));
        }
        self.state.link.apply_config(config);
        let rec = self.sampler.sample(&self.state.link, self.tick);
        self.tick += 1;
        let q = rec.min_real_q().ok_or(ObjectiveError::NoActiveChannels);
        self.records.push(rec);
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::GroundTruth;

    #[test]
    fn twin_env_is_pure_and_min_aggregates() {
        let mut state = NetworkState::new(LinkTopology::default(), GroundTruth::draw(1));
        state.apply_wavelength_change(20).unwrap();
        let env = TwinEnv::ground_truth(&state);
        let cfg = GainConfig::flat(6, 18.0);
        let v = env.value(&cfg).unwrap();
        assert_eq!(v, env.value(&cfg).unwrap());
        let snap = predict(&env.params, &env.nominal, &cfg, &env.grid);
        let qs: Vec<f64> = snap.channels.iter().filter(|c| c.is_real).map(|c| c.q_factor_db.unwrap()).collect();
        assert_eq!(qs.len(), 4);
        assert_eq!(v, qs.iter().copied().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn single_channel_objective_is_its_q() {
        let mut state = NetworkState::new(LinkTopology::default(), GroundTruth::nominal());
        state.link.grid.active[7] = true;
        state.link.grid.is_real[7] = true;
        let env = TwinEnv::ground_truth(&state);
        let cfg = GainConfig::flat(6, 20.0);
        let snap = predict(&env.params, &env.nominal, &cfg, &env.grid);
        assert_eq!(env.value(&cfg).unwrap(), snap.channels[0].q_factor_db.unwrap());
    }

    #[test]
    fn errors_for_empty_and_cut() {
        let state = NetworkState::new(LinkTopology::default(), GroundTruth::nominal());
        let env = TwinEnv::ground_truth(&state);
        assert_eq!(env.value(&GainConfig::flat(6, 18.0)), Err(ObjectiveError::NoActiveChannels));
        let mut cut = state.clone();
        cut.apply_wavelength_change(5).unwrap();
        cut.link.spans[1].is_cut = true;
        let mut sim = SimulatorEnv::new(cut, 1, 0.1);
        assert_eq!(sim.evaluate(&GainConfig::flat(6, 18.0)), Err(ObjectiveError::CutLink(1)));
    }
}
