//! Held-out accuracy study: nominal ("known parameters") twin versus a twin
//! calibrated on telemetry, across lifecycle stages of the same plant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, rmse, FitOptions, TwinError, TwinParameters};
use crate::gain::GainConfig;
use crate::physics::LinkTopology;
use crate::scenario::{GroundTruth, NetworkState, BATCH_SIZE};
use crate::telemetry::{Sampler, TelemetryRecord, DEFAULT_SIGMA_DB};

/// Telemetry taken under random loads and random gain/tilt settings.
pub fn random_dataset(state: &NetworkState, n: usize, seed: u64, sigma_db: f64) -> Vec<TelemetryRecord> {
    let mut state = state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = Sampler::new(seed, sigma_db);
    let amps = state.link.amplifiers.len();
    (0..n)
        .map(|t| {
            let load = BATCH_SIZE * rng.random_range(1..=6);
            state
                .apply_wavelength_change(load)
                .expect("batch multiple within grid");
            let cfg = GainConfig {
                gains: (0..amps).map(|_| rng.random_range(14.0..24.0)).collect(),
                tilts: (0..amps).map(|_| rng.random_range(-1.5..1.5)).collect(),
            };
            state.link.apply_config(&cfg);
            sampler.sample(&state.link, t as u64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: String,
    pub nominal_rmse_db: f64,
    pub fitted_rmse_db: f64,
    /// `1 - fitted/nominal`.
    pub improvement: f64,
    pub fitted: TwinParameters,
    pub truth: TwinParameters,
    pub converged: bool,
}

/// Stage name and its ground truth.
pub fn lifecycle_stages(seed: u64, aged_span: usize, aging_db: f64) -> Vec<(String, GroundTruth)> {
    let base = GroundTruth::draw(seed);
    let mut aged = base.clone();
    aged.aging_db[aged_span] = aging_db;
    vec![
        ("pre-cut".into(), base.clone()),
        ("post-cut".into(), base),
        ("post-aging".into(), aged),
    ]
}

pub fn truth_parameters(truth: &GroundTruth) -> TwinParameters {
    TwinParameters {
        extra_loss_db: (0..truth.hidden_extra_loss_db.len())
            .map(|s| truth.extra_loss_db(s))
            .collect(),
        nf_db: truth.hidden_nf_db.clone(),
    }
}

/// Fit on `train_size` samples, score both twins on `test_size` held-out samples.
pub fn run_stage(
    name: &str,
    truth: &GroundTruth,
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<StageResult, TwinError> {
    let nominal = LinkTopology::default();
    let state = NetworkState::new(nominal.clone(), truth.clone());
    let train = random_dataset(&state, train_size, seed.wrapping_mul(2).wrapping_add(1), DEFAULT_SIGMA_DB);
    let test = random_dataset(&state, test_size, seed.wrapping_mul(2).wrapping_add(2), DEFAULT_SIGMA_DB);
    let start = TwinParameters::default();
    let report = fit(&start, &nominal, &train, &FitOptions::default())?;
    let nominal_rmse_db = rmse(&start, &nominal, &test)?;
    let fitted_rmse_db = rmse(&report.parameters, &nominal, &test)?;
    Ok(StageResult {
        stage: name.to_string(),
        nominal_rmse_db,
        fitted_rmse_db,
        improvement: 1.0 - fitted_rmse_db / nominal_rmse_db,
        fitted: report.parameters,
        truth: truth_parameters(truth),
        converged: report.converged,
    })
}

/// The three-stage study on one scenario seed.
pub fn lifecycle_study(seed: u64, aged_span: usize, aging_db: f64, samples: usize) -> Result<Vec<StageResult>, TwinError> {
    lifecycle_stages(seed, aged_span, aging_db)
        .iter()
        .enumerate()
        .map(|(i, (name, truth))| run_stage(name, truth, samples, samples, seed.wrapping_mul(31).wrapping_add(i as u64)))
        .collect()
}
