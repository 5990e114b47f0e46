//! Digital twin: the propagation model with the unobservable plant parameters
//! (per-span excess loss, per-amplifier noise figure) replaced by estimates
//! calibrated from telemetry.

mod fit;
pub mod study;

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain::GainConfig;
use crate::physics::{
    gsnr_db, run_chain, snapshot_from_chain, ChannelGrid, Dual, LinkSnapshot, LinkTopology, PlantParams, Real,
    AMPLIFIER_COUNT, SPAN_COUNT,
};
use crate::telemetry::TelemetryRecord;

pub use fit::{fit, sync, FitOptions};

/// Number of estimated parameters: span losses first, then amplifier NFs.
pub const PARAM_COUNT: usize = SPAN_COUNT + AMPLIFIER_COUNT;
pub const NF_MIN_DB: f64 = 3.0;
pub const NF_MAX_DB: f64 = 10.0;
pub const NOMINAL_NF_DB: f64 = 5.0;
/// Upper clamp on estimated excess loss; far beyond any plausible aging.
pub const EXTRA_LOSS_MAX_DB: f64 = 30.0;
pub const SCHEMA_VERSION: u32 = 1;

pub(crate) type ParamVec = SVector<f64, PARAM_COUNT>;
pub(crate) type ParamMat = SMatrix<f64, PARAM_COUNT, PARAM_COUNT>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinParameters {
    pub extra_loss_db: Vec<f64>,
    pub nf_db: Vec<f64>,
}

impl Default for TwinParameters {
    /// Datasheet values: no excess loss, nominal NF.
    fn default() -> Self {
        Self {
            extra_loss_db: vec![0.0; SPAN_COUNT],
            nf_db: vec![NOMINAL_NF_DB; AMPLIFIER_COUNT],
        }
    }
}

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("not enough usable records: {have} (need {need})")]
    InsufficientData { have: usize, need: usize },
    #[error("normal equations stayed singular after damping retries")]
    SingularUpdate,
    #[error("dataset has no Q observations")]
    EmptyDataset,
    #[error("twin state: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unsupported twin schema version {0}")]
    SchemaVersion(u32),
}

#[derive(Serialize, Deserialize)]
struct TwinFile {
    schema_version: u32,
    parameters: TwinParameters,
}

impl TwinParameters {
    pub(crate) fn to_vector(&self) -> ParamVec {
        ParamVec::from_iterator(self.extra_loss_db.iter().chain(&self.nf_db).copied())
    }

    pub(crate) fn from_vector(v: &ParamVec) -> Self {
        Self {
            extra_loss_db: v.iter().take(SPAN_COUNT).copied().collect(),
            nf_db: v.iter().skip(SPAN_COUNT).copied().collect(),
        }
    }

    /// Project into the admissible box.
    pub fn clamped(&self) -> Self {
        Self {
            extra_loss_db: self
                .extra_loss_db
                .iter()
                .map(|x| x.clamp(0.0, EXTRA_LOSS_MAX_DB))
                .collect(),
            nf_db: self.nf_db.iter().map(|x| x.clamp(NF_MIN_DB, NF_MAX_DB)).collect(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.extra_loss_db.iter().all(|&x| x >= 0.0) && self.nf_db.iter().all(|x| (NF_MIN_DB..=NF_MAX_DB).contains(x))
    }

    pub fn plant(&self) -> PlantParams<f64> {
        PlantParams {
            extra_loss_db: self.extra_loss_db.clone(),
            noise_figure_db: self.nf_db.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TwinFile {
            schema_version: SCHEMA_VERSION,
            parameters: self.clone(),
        })
        .expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, TwinError> {
        let file: TwinFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(TwinError::SchemaVersion(file.schema_version));
        }
        Ok(file.parameters)
    }
}

/// Relative weights of the two residual families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualWeights {
    pub power: f64,
    pub q: f64,
}

impl Default for ResidualWeights {
    fn default() -> Self {
        Self { power: 1.0, q: 1.0 }
    }
}

/// `nominal` with the occupancy of `record` (active and real slots).
pub fn link_for_record(nominal: &LinkTopology, record: &TelemetryRecord) -> LinkTopology {
    let mut link = nominal.clone();
    link.grid = grid_with(&nominal.grid, record.channels.iter().map(|c| (c.slot, c.is_real)));
    link
}

pub fn grid_with(base: &ChannelGrid, occupancy: impl IntoIterator<Item = (usize, bool)>) -> ChannelGrid {
    let mut grid = ChannelGrid {
        active: vec![false; base.slot_count],
        is_real: vec![false; base.slot_count],
        ..base.clone()
    };
    for (slot, real) in occupancy {
        grid.active[slot] = true;
        grid.is_real[slot] = real;
    }
    grid
}

/// Twin prediction for `config` on the occupancy in `grid`.
pub fn predict(params: &TwinParameters, nominal: &LinkTopology, config: &GainConfig, grid: &ChannelGrid) -> LinkSnapshot {
    let mut link = nominal.clone();
    link.grid = grid.clone();
    for span in &mut link.spans {
        span.is_cut = false;
    }
    let out = run_chain(&link, &link.launch_vector(), config, &params.plant());
    snapshot_from_chain(&link, &out)
}

/// Whether a record can be compared with the twin (no dark spans).
pub fn usable(record: &TelemetryRecord) -> bool {
    record.all_osc_alive() && !record.channels.is_empty()
}

fn dbm<T: Real>(w: T) -> T {
    w.lin_to_db() + T::constant(30.0)
}

/// Predicted minus observed, for one record, in a fixed order: amplifier
/// input/output powers, then Q of each real channel that reported one.
pub(crate) fn record_residuals<T: Real>(
    nominal: &LinkTopology,
    record: &TelemetryRecord,
    params: &PlantParams<T>,
    weights: &ResidualWeights,
) -> Vec<T> {
    let link = link_for_record(nominal, record);
    let out = run_chain(&link, &link.launch_vector(), &record.config, params);
    let mut r = Vec::with_capacity(2 * record.amplifiers.len() + 6);
    for (k, obs) in record.amplifiers.iter().enumerate() {
        r.push((dbm(out.amp_input[k]) - T::constant(obs.input_dbm)).scale(weights.power));
        r.push((dbm(out.amp_output[k]) - T::constant(obs.output_dbm)).scale(weights.power));
    }
    for c in record.channels.iter().filter(|c| c.is_real) {
        let Some(q_obs) = c.q_db else { continue };
        let i = c.slot;
        if let Some(g) = gsnr_db(out.signal[i], out.ase[i], out.nli[i], link.gsnr_cap_db) {
            let q = g - T::constant(link.q_offset_db);
            r.push((q - T::constant(q_obs)).scale(weights.q));
        }
    }
    r
}

fn dual_params(theta: &ParamVec) -> PlantParams<Dual<PARAM_COUNT>> {
    PlantParams {
        extra_loss_db: (0..SPAN_COUNT).map(|i| Dual::variable(theta[i], i)).collect(),
        noise_figure_db: (0..AMPLIFIER_COUNT)
            .map(|k| Dual::variable(theta[SPAN_COUNT + k], SPAN_COUNT + k))
            .collect(),
    }
}

/// Stacked residual vector over usable records.
pub fn residuals(
    params: &TwinParameters,
    nominal: &LinkTopology,
    records: &[TelemetryRecord],
    weights: &ResidualWeights,
) -> Vec<f64> {
    let plant = params.plant();
    let per: Vec<Vec<f64>> = records
        .par_iter()
        .filter(|r| usable(r))
        .map(|r| record_residuals(nominal, r, &plant, weights))
        .collect();
    per.concat()
}

/// Residuals and their analytic Jacobian (rows match [`residuals`]).
pub fn jacobian(
    params: &TwinParameters,
    nominal: &LinkTopology,
    records: &[TelemetryRecord],
    weights: &ResidualWeights,
) -> (Vec<f64>, Vec<[f64; PARAM_COUNT]>) {
    let plant = dual_params(&params.to_vector());
    let per: Vec<Vec<Dual<PARAM_COUNT>>> = records
        .par_iter()
        .filter(|r| usable(r))
        .map(|r| record_residuals(nominal, r, &plant, weights))
        .collect();
    let flat: Vec<Dual<PARAM_COUNT>> = per.concat();
    (flat.iter().map(|d| d.re).collect(), flat.iter().map(|d| d.eps).collect())
}

/// Q-RMSE of the twin over every real-channel Q observation in `dataset`.
pub fn rmse(params: &TwinParameters, nominal: &LinkTopology, dataset: &[TelemetryRecord]) -> Result<f64, TwinError> {
    let weights = ResidualWeights { power: 0.0, q: 1.0 };
    let plant = params.plant();
    let per: Vec<Vec<f64>> = dataset
        .par_iter()
        .filter(|r| usable(r))
        .map(|r| {
            let res = record_residuals(nominal, r, &plant, &weights);
            res[2 * r.amplifiers.len()..].to_vec()
        })
        .collect();
    let q: Vec<f64> = per.concat();
    if q.is_empty() {
        return Err(TwinError::EmptyDataset);
    }
    Ok((q.iter().map(|e| e * e).sum::<f64>() / q.len() as f64).sqrt())
}

/// Stateful wrapper used by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalTwin {
    pub nominal: LinkTopology,
    pub params: TwinParameters,
    pub weights: ResidualWeights,
}

impl DigitalTwin {
    pub fn new(nominal: LinkTopology) -> Self {
        Self {
            nominal,
            params: TwinParameters::default(),
            weights: ResidualWeights::default(),
        }
    }

    pub fn predict(&self, config: &GainConfig, grid: &ChannelGrid) -> LinkSnapshot {
        predict(&self.params, &self.nominal, config, grid)
    }

    pub fn fit(&mut self, records: &[TelemetryRecord]) -> Result<fit::FitReport, TwinError> {
        let report = fit(&self.params, &self.nominal, records, &FitOptions {
            weights: self.weights,
            ..FitOptions::default()
        })?;
        self.params = report.parameters.clone();
        Ok(report)
    }

    pub fn sync(&mut self, record: &TelemetryRecord) {
        self.params = sync(&self.params, &self.nominal, record, &self.weights);
    }

    pub fn rmse(&self, dataset: &[TelemetryRecord]) -> Result<f64, TwinError> {
        rmse(&self.params, &self.nominal, dataset)
    }
}

pub use fit::FitReport;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{GroundTruth, NetworkState};
    use crate::telemetry::Sampler;

    fn truth_params(t: &GroundTruth) -> TwinParameters {
        TwinParameters {
            extra_loss_db: (0..SPAN_COUNT).map(|s| t.extra_loss_db(s)).collect(),
            nf_db: t.hidden_nf_db.clone(),
        }
    }

    #[test]
    fn truth_twin_reproduces_noiseless_telemetry() {
        let mut state = NetworkState::new(LinkTopology::default(), GroundTruth::draw(9));
        state.apply_wavelength_change(20).unwrap();
        let rec = Sampler::noiseless().sample(&state.link, 0);
        let params = truth_params(&state.truth);
        let r = residuals(&params, &LinkTopology::default(), &[rec.clone()], &ResidualWeights::default());
        assert!(r.iter().all(|e| e.abs() < 1e-9), "{r:?}");
        assert!(rmse(&params, &LinkTopology::default(), &[rec.clone()]).unwrap() < 1e-9);
        assert!(rmse(&TwinParameters::default(), &LinkTopology::default(), &[rec]).unwrap() > 0.05);
    }

    #[test]
    fn json_is_versioned() {
        let p = TwinParameters::default();
        let text = p.to_json();
        assert!(text.contains("\"schema_version\": 1"));
        assert_eq!(TwinParameters::from_json(&text).unwrap(), p);
        let bad = text.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(TwinParameters::from_json(&bad), Err(TwinError::SchemaVersion(2))));
    }

    #[test]
    fn empty_dataset_rmse_is_an_error() {
        assert!(matches!(
            rmse(&TwinParameters::default(), &LinkTopology::default(), &[]),
            Err(TwinError::EmptyDataset)
        ));
    }
}
