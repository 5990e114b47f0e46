//! Gain/tilt optimizers over a min-Q objective: exhaustive grid oracle,
//! Gaussian-process Bayesian optimization, and cyclic coordinate ascent.

mod bayes;
mod brute;
mod coordinate;
pub mod gp;
mod objective;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain::GainConfig;

pub use bayes::{bayes_opt, expected_improvement, latin_hypercube, BayesOptions, SearchSpace};
pub use brute::{brute_force, default_grid, DEFAULT_GRID_DB, MAX_GRID_POINTS};
pub use coordinate::{coordinate_ascent, CoordinateAscent, CoordinateOptions};
pub use gp::GpError;
pub use objective::{min_real_q, Objective, ObjectiveError, PureObjective, SimulatorEnv, TwinEnv};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("grid has {points} points (limit {MAX_GRID_POINTS})")]
    GridTooLarge { points: u128 },
    #[error("grid is empty for amplifier {0}")]
    EmptyGrid(usize),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("budget {budget} must exceed the initial design size {n_init}")]
    InvalidBudget { budget: usize, n_init: usize },
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub config: GainConfig,
    /// Minimum Q over real channels, dB.
    pub value: f64,
    /// Evaluation index within the run.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub method: String,
    pub best_config: GainConfig,
    pub best_value: f64,
    pub trace: Vec<ObjectiveSample>,
    pub evaluations: usize,
    /// Not part of any reproducible artifact.
    #[serde(skip)]
    pub wall_time: std::time::Duration,
}

impl OptimizerReport {
    pub(crate) fn from_trace(method: &str, trace: Vec<ObjectiveSample>, wall_time: std::time::Duration) -> Self {
        let best = trace
            .iter()
            .fold(None::<&ObjectiveSample>, |best, s| match best {
                Some(b) if b.value > s.value || (b.value == s.value && b.config <= s.config) => Some(b),
                _ => Some(s),
            })
            .expect("at least one evaluation");
        Self {
            method: method.to_string(),
            best_config: best.config.clone(),
            best_value: best.value,
            evaluations: trace.len(),
            trace,
            wall_time,
        }
    }

    /// Best value seen after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.trace
            .iter()
            .map(|s| {
                best = best.max(s.value);
                best
            })
            .collect()
    }

    /// `eval,gain_0..,tilt_0..,value` rows; an optional trailing
    /// `#gap_to_oracle_db=<v>` line.
    pub fn trace_csv(&self, gap_to_oracle_db: Option<f64>) -> String {
        let n = self.best_config.len();
        let mut out = String::from("eval");
        for k in 0..n {
            let _ = write!(out, ",gain_{k}");
        }
        for k in 0..n {
            let _ = write!(out, ",tilt_{k}");
        }
        out.push_str(",value\n");
        for s in &self.trace {
            let _ = write!(out, "{}", s.index);
            for v in s.config.gains.iter().chain(&s.config.tilts) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", s.value);
        }
        if let Some(gap) = gap_to_oracle_db {
            let _ = writeln!(out, "#gap_to_oracle_db={gap}");
        }
        out
    }
}
