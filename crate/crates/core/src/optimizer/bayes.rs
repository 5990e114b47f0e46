//! Bayesian optimization with a GP surrogate and expected improvement.

use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gp::{GpConfig, GpModel};
use super::{Objective, ObjectiveSample, OptimizerError, OptimizerReport};
use crate::gain::{GainConfig, GAIN_MAX_DB, GAIN_MIN_DB, TILT_MAX_DB, TILT_MIN_DB};

/// Box-bounded search space mapped onto `[0,1]^d`.
///
/// Dimensions are the amplifier gains, optionally followed by the tilts;
/// tilts not searched stay at `fixed_tilt_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub amplifiers: usize,
    pub gain_range: (f64, f64),
    pub tilt_range: Option<(f64, f64)>,
    pub fixed_tilt_db: f64,
}

impl SearchSpace {
    /// Gains over the full amplifier range, tilts fixed at 0.
    pub fn gains(amplifiers: usize) -> Self {
        Self {
            amplifiers,
            gain_range: (GAIN_MIN_DB, GAIN_MAX_DB),
            tilt_range: None,
            fixed_tilt_db: 0.0,
        }
    }

    pub fn gains_and_tilts(amplifiers: usize) -> Self {
        Self {
            tilt_range: Some((TILT_MIN_DB, TILT_MAX_DB)),
            ..Self::gains(amplifiers)
        }
    }

    pub fn dims(&self) -> usize {
        self.amplifiers * if self.tilt_range.is_some() { 2 } else { 1 }
    }

    pub fn to_config(&self, u: &[f64]) -> GainConfig {
        let n = self.amplifiers;
        let (glo, ghi) = self.gain_range;
        let gains = u[..n].iter().map(|x| glo + x * (ghi - glo)).collect();
        let tilts = match self.tilt_range {
            Some((tlo, thi)) => u[n..2 * n].iter().map(|x| tlo + x * (thi - tlo)).collect(),
            None => vec![self.fixed_tilt_db; n],
        };
        GainConfig { gains, tilts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesOptions {
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
    /// Kernel length-scale in normalized coordinates.
    pub length_scale: f64,
    /// Observation noise standard deviation, dB.
    pub noise_sd: f64,
    pub candidates: usize,
    pub refine_iterations: usize,
    /// EI exploration margin in standardized units.
    pub xi: f64,
}

impl Default for BayesOptions {
    fn default() -> Self {
        Self {
            budget: 50,
            n_init: 10,
            seed: 0,
            length_scale: 0.3,
            noise_sd: 0.1,
            candidates: 1000,
            refine_iterations: 20,
            xi: 0.0,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Expected improvement over `incumbent` for a Gaussian with `mean`, `variance`.
pub fn expected_improvement(mean: f64, variance: f64, incumbent: f64, xi: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    let gain = mean - incumbent - xi;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// `n` points in `[0,1]^d`, one per stratum along every axis.
pub fn latin_hypercube(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[j] = (strata[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

fn maximize_ei(model: &GpModel, incumbent: f64, d: usize, opts: &BayesOptions, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ei = |u: &[f64]| {
        let (m, v) = model.predict_standardized(u);
        expected_improvement(m, v, incumbent, opts.xi)
    };
    let candidates: Vec<Vec<f64>> = (0..opts.candidates)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let scores: Vec<f64> = candidates.par_iter().map(|c| ei(c)).collect();
    let mut best_i = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_i] {
            best_i = i;
        }
    }
    let mut best = candidates[best_i].clone();
    let mut best_score = scores[best_i];
    let mut step = 0.05;
    for _ in 0..opts.refine_iterations {
        let mut improved = false;
        for j in 0..d {
            for dir in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[j] = (trial[j] + dir * step).clamp(0.0, 1.0);
                let s = ei(&trial);
                if s > best_score {
                    best = trial;
                    best_score = s;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Sequential GP-EI maximization of `env` within `space`.
pub fn bayes_opt<E: Objective>(env: &mut E, space: &SearchSpace, opts: &BayesOptions) -> Result<OptimizerReport, OptimizerError> {
    if opts.budget <= opts.n_init || opts.n_init == 0 {
        return Err(OptimizerError::InvalidBudget {
            budget: opts.budget,
            n_init: opts.n_init,
        });
    }
    let start = Instant::now();
    let d = space.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut xs = latin_hypercube(opts.n_init, d, &mut rng);
    let mut ys = Vec::with_capacity(opts.budget);
    let mut trace = Vec::with_capacity(opts.budget);
    let record = |u: &[f64], trace: &mut Vec<ObjectiveSample>, env: &mut E| -> Result<f64, OptimizerError> {
        let config = space.to_config(u);
        let value = env.evaluate(&config)?;
        trace.push(ObjectiveSample {
            config,
            value,
            index: trace.len(),
        });
        Ok(value)
    };
    for u in &xs {
        ys.push(record(u, &mut trace, env)?);
    }
    let gp = GpConfig {
        length_scale: opts.length_scale,
        noise_var: opts.noise_sd * opts.noise_sd,
    };
    while trace.len() < opts.budget {
        let model = GpModel::fit(&xs, &ys, gp)?;
        let incumbent = ys
            .iter()
            .map(|&y| model.standardize(y))
            .fold(f64::NEG_INFINITY, f64::max);
        let next = maximize_ei(&model, incumbent, d, opts, &mut rng);
        ys.push(record(&next, &mut trace, env)?);
        xs.push(next);
    }
    Ok(OptimizerReport::from_trace("bo", trace, start.elapsed()))
}
