//! Exact Gaussian-process regression with a fixed squared-exponential kernel.
//!
//! Targets are standardized internally (zero mean, unit variance); the
//! kernel's signal variance is 1 in standardized units, so the prior mean is
//! the sample average and the prior variance the sample variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("GP needs at least one sample")]
    NoSamples,
    #[error("kernel matrix not positive definite even with jitter {jitter:e}")]
    NumericalFailure { jitter: f64 },
}

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpConfig {
    pub length_scale: f64,
    /// Observation noise variance in target units (dB²).
    pub noise_var: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.3,
            noise_var: 0.1 * 0.1,
        }
    }
}

pub fn kernel(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2 / (length_scale * length_scale)).exp()
}

#[derive(Debug, Clone)]
pub struct GpModel {
    xs: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    config: GpConfig,
    /// Jitter that was needed for the factorization.
    pub jitter: f64,
}

impl GpModel {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], config: GpConfig) -> Result<Self, GpError> {
        let n = xs.len();
        if n == 0 {
            return Err(GpError::NoSamples);
        }
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let noise = config.noise_var / (y_scale * y_scale);
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel(&xs[i], &xs[j], config.length_scale) + if i == j { noise } else { 0.0 }
        });
        let mut jitter = 0.0;
        let chol = loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(c) = kj.cholesky() {
                break c;
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            if jitter > JITTER_MAX * 1.000_001 {
                return Err(GpError::NumericalFailure { jitter: JITTER_MAX });
            }
        };
        let y = DVector::from_iterator(n, ys.iter().map(|y| (y - y_mean) / y_scale));
        let alpha = chol.solve(&y);
        Ok(Self {
            xs: xs.to_vec(),
            chol,
            alpha,
            y_mean,
            y_scale,
            config,
            jitter,
        })
    }

    /// Posterior mean and latent variance at `q`, in target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(q);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    /// Posterior mean and variance in standardized units.
    pub fn predict_standardized(&self, q: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|x| kernel(x, q, self.config.length_scale)));
        let mean = ks.dot(&self.alpha);
        let mut v = ks.clone();
        // Only the lower triangle of `l_dirty` is read.
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let var = (1.0 - v.norm_squared()).max(0.0);
        (mean, var)
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn prior_variance(&self) -> f64 {
        self.y_scale * self.y_scale
    }

    /// Standardize a target value.
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }
}

/// Posterior `(mean, variance)` at each query point.
pub fn gp_regress(
    samples: &[(Vec<f64>, f64)],
    queries: &[Vec<f64>],
    config: GpConfig,
) -> Result<Vec<(f64, f64)>, GpError> {
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.0.clone()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let model = GpModel::fit(&xs, &ys, config)?;
    Ok(queries.iter().map(|q| model.predict(q)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(l: f64) -> GpConfig {
        GpConfig {
            length_scale: l,
            noise_var: 0.0,
        }
    }

    #[test]
    fn interpolates_samples() {
        let samples = vec![(vec![0.1], 3.0), (vec![0.5], 5.0), (vec![0.9], 4.0)];
        let out = gp_regress(&samples, &[vec![0.5], vec![0.9]], noiseless(0.3)).unwrap();
        assert!((out[0].0 - 5.0).abs() < 1e-6);
        assert!(out[0].1 < 1e-6);
        assert!((out[1].0 - 4.0).abs() < 1e-6);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let samples = vec![(vec![0.1], 3.0), (vec![0.5], 5.0), (vec![0.9], 4.0)];
        let model = GpModel::fit(
            &samples.iter().map(|s| s.0.clone()).collect::<Vec<_>>(),
            &[3.0, 5.0, 4.0],
            GpConfig::default(),
        )
        .unwrap();
        let (m, v) = model.predict(&[50.0]);
        assert!((m - 4.0).abs() < 1e-12);
        assert!((v - model.prior_variance()).abs() < 1e-12);
    }

    #[test]
    fn three_point_system_matches_cramer() {
        // Independent solve of the standardized 3x3 system by Cramer's rule.
        let x = [0.0, 0.4, 1.0];
        let y = [1.0, 2.0, 0.5];
        let l = 0.5;
        let noise_raw = 0.01;
        let mean = (y[0] + y[1] + y[2]) / 3.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        let s = var.sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / s).collect();
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * l * l)).exp();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = k(x[i], x[j]) + if i == j { noise_raw / var } else { 0.0 };
            }
        }
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(m);
        let alpha: Vec<f64> = (0..3)
            .map(|c| {
                let mut mc = m;
                for r in 0..3 {
                    mc[r][c] = ys[r];
                }
                det(mc) / d
            })
            .collect();
        let q = 0.7;
        let expected = mean + s * (0..3).map(|i| k(q, x[i]) * alpha[i]).sum::<f64>();

        let samples: Vec<_> = x.iter().zip(&y).map(|(&a, &b)| (vec![a], b)).collect();
        let out = gp_regress(
            &samples,
            &[vec![q]],
            GpConfig {
                length_scale: l,
                noise_var: noise_raw,
            },
        )
        .unwrap();
        assert!((out[0].0 - expected).abs() < 1e-10, "{} vs {expected}", out[0].0);
    }

    #[test]
    fn duplicate_points_need_jitter() {
        let xs = vec![vec![0.2, 0.2], vec![0.2, 0.2]];
        let model = GpModel::fit(&xs, &[1.0, 1.0], noiseless(0.3)).unwrap();
        assert!(model.jitter > 0.0);
        assert!(matches!(GpModel::fit(&[], &[], GpConfig::default()), Err(GpError::NoSamples)));
    }
}
