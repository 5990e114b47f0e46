//! Exhaustive grid search, parallel over grid points.

use std::time::Instant;

use rayon::prelude::*;

use super::{ObjectiveSample, OptimizerError, OptimizerReport, PureObjective};
use crate::gain::GainConfig;

pub const DEFAULT_GRID_DB: [f64; 5] = [14.0, 16.0, 18.0, 20.0, 22.0];
pub const MAX_GRID_POINTS: u128 = 1_000_000;

/// `DEFAULT_GRID_DB` for each of `amplifiers` amplifiers.
pub fn default_grid(amplifiers: usize) -> Vec<Vec<f64>> {
    vec![DEFAULT_GRID_DB.to_vec(); amplifiers]
}

/// Evaluate every gain combination (tilts fixed at 0).
///
/// Each amplifier's value list is treated as a set: sorted and deduplicated,
/// so the trace is in lexicographic config order and ties resolve to the
/// lexicographically smallest configuration.
pub fn brute_force<E: PureObjective>(env: &E, grid_per_amp: &[Vec<f64>]) -> Result<OptimizerReport, OptimizerError> {
    let start = Instant::now();
    let axes: Vec<Vec<f64>> = grid_per_amp
        .iter()
        .map(|axis| {
            let mut a = axis.clone();
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        })
        .collect();
    if let Some(k) = axes.iter().position(|a| a.is_empty()) {
        return Err(OptimizerError::EmptyGrid(k));
    }
    let points = axes.iter().map(|a| a.len() as u128).product::<u128>();
    if points > MAX_GRID_POINTS {
        return Err(OptimizerError::GridTooLarge { points });
    }
    let n = axes.len();
    let config_at = |mut index: usize| {
        let mut gains = vec![0.0; n];
        for k in (0..n).rev() {
            let len = axes[k].len();
            gains[k] = axes[k][index % len];
            index /= len;
        }
        GainConfig {
            gains,
            tilts: vec![0.0; n],
        }
    };
    let values: Vec<Result<f64, _>> = (0..points as usize)
        .into_par_iter()
        .map(|i| env.value(&config_at(i)))
        .collect();
    let mut trace = Vec::with_capacity(values.len());
    for (index, v) in values.into_iter().enumerate() {
        trace.push(ObjectiveSample {
            config: config_at(index),
            value: v?,
            index,
        });
    }
    Ok(OptimizerReport::from_trace("brute", trace, start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::ObjectiveError;

    struct Bowl(Vec<f64>);
    impl PureObjective for Bowl {
        fn value(&self, c: &GainConfig) -> Result<f64, ObjectiveError> {
            Ok(-c.gains.iter().zip(&self.0).map(|(g, t)| (g - t).powi(2)).sum::<f64>())
        }
    }

    #[test]
    fn nine_point_grid_matches_enumeration() {
        // Independent enumeration: (16,16)=-8.5 (16,18)=-2.5 (16,20)=-4.5
        // (18,16)=-6.5 (18,18)=-0.5 (18,20)=-2.5 (20,16)=-12.5 ...
        let env = Bowl(vec![17.5, 18.0]);
        let r = brute_force(&env, &[vec![16.0, 18.0, 20.0], vec![16.0, 18.0, 20.0]]).unwrap();
        assert_eq!(r.evaluations, 9);
        assert_eq!(r.best_config.gains, vec![18.0, 18.0]);
        assert_eq!(r.best_value, -0.25);
        assert_eq!(r.trace[1].config.gains, vec![16.0, 18.0]);
        assert_eq!(r.trace[1].value, -2.25);
    }

    #[test]
    fn ties_go_to_smallest_config() {
        let env = Bowl(vec![17.0]);
        let r = brute_force(&env, &[vec![18.0, 16.0]]).unwrap();
        assert_eq!(r.best_config.gains, vec![16.0]);
    }

    #[test]
    fn limits() {
        let env = Bowl(vec![0.0; 7]);
        let big = vec![(0..8).map(f64::from).collect::<Vec<_>>(); 7];
        assert!(matches!(brute_force(&env, &big), Err(OptimizerError::GridTooLarge { points: 2_097_152 })));
        assert!(matches!(brute_force(&env, &[vec![1.0], vec![]]), Err(OptimizerError::EmptyGrid(1))));
        let one = brute_force(&Bowl(vec![0.0]), &[vec![14.0]]).unwrap();
        assert_eq!(one.best_config.gains, vec![14.0]);
    }
}
