//! Calibration: projected Levenberg–Marquardt over a dataset, and a single
//! damped Gauss–Newton step for online tracking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    jacobian, residuals, usable, ParamMat, ParamVec, ResidualWeights, TwinError, TwinParameters, PARAM_COUNT,
};
use crate::physics::LinkTopology;
use crate::telemetry::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weights: ResidualWeights,
    pub max_iterations: usize,
    /// Convergence threshold on the parameter step 2-norm, dB.
    pub step_tolerance: f64,
    pub min_records: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weights: ResidualWeights::default(),
            max_iterations: 200,
            step_tolerance: 1e-4,
            min_records: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub initial_rmse: f64,
    /// RMS of the weighted residuals at the returned parameters.
    pub residual_rmse: f64,
    pub parameters: TwinParameters,
    /// `parameters - start`, per parameter.
    pub parameter_deltas: TwinParameters,
    pub converged: bool,
    /// Objective `½‖r‖²` after each accepted iteration, starting point first.
    pub cost_trace: Vec<f64>,
}

fn normal_equations(r: &[f64], j: &[[f64; PARAM_COUNT]]) -> (ParamMat, ParamVec) {
    let mut jtj = ParamMat::zeros();
    let mut jtr = ParamVec::zeros();
    for (ri, row) in r.iter().zip(j) {
        for a in 0..PARAM_COUNT {
            jtr[a] += row[a] * ri;
            for b in a..PARAM_COUNT {
                jtj[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..PARAM_COUNT {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    (jtj, jtr)
}

fn damped_solve(jtj: &ParamMat, jtr: &ParamVec, lambda: f64) -> Option<ParamVec> {
    let mut a = *jtj;
    for i in 0..PARAM_COUNT {
        a[(i, i)] += lambda * jtj[(i, i)].max(1e-9) + 1e-12;
    }
    a.cholesky().map(|c| c.solve(&(-jtr)))
}

fn project(v: &ParamVec) -> ParamVec {
    TwinParameters::from_vector(v).clamped().to_vector()
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|e| e * e).sum::<f64>()
}

fn rms(r: &[f64]) -> f64 {
    if r.is_empty() {
        0.0
    } else {
        (2.0 * cost(r) / r.len() as f64).sqrt()
    }
}

/// Least-squares calibration of the twin against `records`.
///
/// Records with a dark span are ignored. With fewer than two distinct gain
/// configurations the noise figures are not identifiable; the report then
/// says `converged: false` and the parameters are returned unchanged.
pub fn fit(
    start: &TwinParameters,
    nominal: &LinkTopology,
    records: &[TelemetryRecord],
    options: &FitOptions,
) -> Result<FitReport, TwinError> {
    let data: Vec<TelemetryRecord> = records.iter().filter(|r| usable(r)).cloned().collect();
    if data.len() < options.min_records.max(1) {
        return Err(TwinError::InsufficientData {
            have: data.len(),
            need: options.min_records.max(1),
        });
    }
    let configs: BTreeSet<_> = data
        .iter()
        .map(|r| {
            let (g, t, _) = r.fingerprint();
            (g, t)
        })
        .collect();
    let start = start.clamped();
    let w = &options.weights;
    let r0 = residuals(&start, nominal, &data, w);
    let initial_rmse = rms(&r0);
    if configs.len() < 2 {
        return Ok(FitReport {
            iterations: 0,
            initial_rmse,
            residual_rmse: initial_rmse,
            parameter_deltas: TwinParameters::from_vector(&ParamVec::zeros()),
            parameters: start,
            converged: false,
            cost_trace: vec![cost(&r0)],
        });
    }

    let mut theta = start.to_vector();
    let (mut r, mut j) = jacobian(&start, nominal, &data, w);
    let mut current = cost(&r);
    let (mut jtj, mut jtr) = normal_equations(&r, &j);
    let mut trace = vec![current];
    let mut lambda = 1e-3;
    let mut failures = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iterations {
        iterations += 1;
        let Some(delta) = damped_solve(&jtj, &jtr, lambda) else {
            failures += 1;
            if failures > 10 {
                return Err(TwinError::SingularUpdate);
            }
            lambda *= 10.0;
            continue;
        };
        failures = 0;
        let candidate = project(&(theta + delta));
        let step = (candidate - theta).norm();
        if step < options.step_tolerance {
            converged = true;
            break;
        }
        let params = TwinParameters::from_vector(&candidate);
        let r_new = residuals(&params, nominal, &data, w);
        let c_new = cost(&r_new);
        if c_new < current {
            theta = candidate;
            (r, j) = jacobian(&params, nominal, &data, w);
            current = cost(&r);
            (jtj, jtr) = normal_equations(&r, &j);
            trace.push(current);
            lambda = (lambda / 3.0).max(1e-10);
        } else {
            lambda *= 4.0;
            if lambda > 1e12 {
                // No descent direction left inside the box.
                converged = true;
                break;
            }
        }
    }

    let parameters = TwinParameters::from_vector(&theta);
    Ok(FitReport {
        iterations,
        initial_rmse,
        residual_rmse: rms(&r),
        parameter_deltas: TwinParameters::from_vector(&(theta - start.to_vector())),
        parameters,
        converged,
        cost_trace: trace,
    })
}

/// Largest per-parameter change a single sync step may make, dB.
pub const SYNC_MAX_STEP_DB: f64 = 0.2;
/// Marquardt damping of the sync step; 1.0 halves well-determined directions.
pub const SYNC_DAMPING: f64 = 1.0;

/// One damped Gauss–Newton step toward agreement with `record`.
pub fn sync(
    params: &TwinParameters,
    nominal: &LinkTopology,
    record: &TelemetryRecord,
    weights: &ResidualWeights,
) -> TwinParameters {
    if !usable(record) {
        return params.clone();
    }
    let (r, j) = jacobian(params, nominal, std::slice::from_ref(record), weights);
    let (jtj, jtr) = normal_equations(&r, &j);
    let Some(delta) = damped_solve(&jtj, &jtr, SYNC_DAMPING) else {
        return params.clone();
    };
    let step = delta.map(|d| d.clamp(-SYNC_MAX_STEP_DB, SYNC_MAX_STEP_DB));
    TwinParameters::from_vector(&project(&(params.to_vector() + step)))
}
