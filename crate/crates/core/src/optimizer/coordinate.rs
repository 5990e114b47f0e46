//! Cyclic coordinate ascent, written as a propose/observe state machine so
//! that an external driver (such as a scripted agent policy) can step it one
//! evaluation at a time and reproduce exactly the same trace.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Objective, ObjectiveSample, OptimizerError, OptimizerReport};
use crate::gain::{GainConfig, GAIN_MAX_DB, GAIN_MIN_DB, TILT_MAX_DB, TILT_MIN_DB};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateOptions {
    pub step_db: f64,
    pub min_step_db: f64,
    pub max_sweeps: usize,
    /// Probe tilts after gains in every sweep.
    pub include_tilts: bool,
}

impl Default for CoordinateOptions {
    fn default() -> Self {
        Self {
            step_db: 0.5,
            min_step_db: 0.125,
            max_sweeps: 10,
            include_tilts: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Init,
    TryPlus,
    TryMinus,
    Continue(f64),
}

#[derive(Debug, Clone)]
pub struct CoordinateAscent {
    options: CoordinateOptions,
    current: GainConfig,
    current_value: f64,
    step: f64,
    sweep: usize,
    coord: usize,
    phase: Phase,
    improved: bool,
    pending: Option<GainConfig>,
    done: bool,
    trace: Vec<ObjectiveSample>,
}

impl CoordinateAscent {
    pub fn new(init: GainConfig, options: CoordinateOptions) -> Self {
        Self {
            options,
            current: init,
            current_value: f64::NEG_INFINITY,
            step: options.step_db,
            sweep: 0,
            coord: 0,
            phase: Phase::Init,
            improved: false,
            pending: None,
            done: false,
            trace: Vec::new(),
        }
    }

    fn dims(&self) -> usize {
        self.current.len() * if self.options.include_tilts { 2 } else { 1 }
    }

    fn moved(&self, dir: f64) -> GainConfig {
        let n = self.current.len();
        let mut c = self.current.clone();
        if self.coord < n {
            let g = &mut c.gains[self.coord];
            *g = (*g + dir * self.step).clamp(GAIN_MIN_DB, GAIN_MAX_DB);
        } else {
            let t = &mut c.tilts[self.coord - n];
            *t = (*t + dir * self.step).clamp(TILT_MIN_DB, TILT_MAX_DB);
        }
        c
    }

    /// The next configuration to evaluate, or `None` once converged.
    pub fn propose(&mut self) -> Option<GainConfig> {
        if self.done {
            return None;
        }
        if let Some(p) = &self.pending {
            return Some(p.clone());
        }
        loop {
            let dir = match self.phase {
                Phase::Init => {
                    self.pending = Some(self.current.clone());
                    return self.pending.clone();
                }
                Phase::TryPlus => 1.0,
                Phase::TryMinus => -1.0,
                Phase::Continue(d) => d,
            };
            let candidate = self.moved(dir);
            if candidate != self.current {
                self.pending = Some(candidate.clone());
                return Some(candidate);
            }
            self.reject();
            if self.done {
                return None;
            }
        }
    }

    /// Result of evaluating the last proposal; `None` counts as a failure.
    pub fn observe(&mut self, value: Option<f64>) {
        let Some(config) = self.pending.take() else {
            return;
        };
        let v = value.unwrap_or(f64::NEG_INFINITY);
        if let Some(value) = value {
            self.trace.push(ObjectiveSample {
                config: config.clone(),
                value,
                index: self.trace.len(),
            });
        }
        match self.phase {
            Phase::Init => {
                self.current_value = v;
                self.phase = Phase::TryPlus;
            }
            Phase::TryPlus | Phase::TryMinus | Phase::Continue(_) if v > self.current_value => {
                let dir = match self.phase {
                    Phase::TryMinus => -1.0,
                    Phase::Continue(d) => d,
                    _ => 1.0,
                };
                self.current = config;
                self.current_value = v;
                self.improved = true;
                self.phase = Phase::Continue(dir);
            }
            _ => self.reject(),
        }
    }

    fn reject(&mut self) {
        match self.phase {
            Phase::TryPlus => self.phase = Phase::TryMinus,
            _ => self.next_coordinate(),
        }
    }

    fn next_coordinate(&mut self) {
        self.phase = Phase::TryPlus;
        self.coord += 1;
        if self.coord < self.dims() {
            return;
        }
        self.coord = 0;
        self.sweep += 1;
        if !self.improved {
            self.step *= 0.5;
        }
        self.improved = false;
        if self.step < self.options.min_step_db || self.sweep >= self.options.max_sweeps {
            self.done = true;
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn best(&self) -> (&GainConfig, f64) {
        (&self.current, self.current_value)
    }

    pub fn trace(&self) -> &[ObjectiveSample] {
        &self.trace
    }

    pub fn into_report(self, method: &str, wall_time: std::time::Duration) -> OptimizerReport {
        OptimizerReport::from_trace(method, self.trace, wall_time)
    }
}

/// Run coordinate ascent from `init` to convergence.
pub fn coordinate_ascent<E: Objective>(
    env: &mut E,
    init: &GainConfig,
    options: &CoordinateOptions,
) -> Result<OptimizerReport, OptimizerError> {
    let start = Instant::now();
    let mut machine = CoordinateAscent::new(init.clone(), *options);
    while let Some(config) = machine.propose() {
        let value = env.evaluate(&config)?;
        machine.observe(Some(value));
    }
    Ok(machine.into_report("coord", start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::ObjectiveError;

    struct Peak(Vec<f64>);
    impl Objective for Peak {
        fn evaluate(&mut self, c: &GainConfig) -> Result<f64, ObjectiveError> {
            Ok(-c.gains.iter().zip(&self.0).map(|(g, p)| (g - p).abs()).sum::<f64>()
                - c.tilts.iter().map(|t| t.abs()).sum::<f64>())
        }
    }

    #[test]
    fn optimum_start_accepts_nothing() {
        let init = GainConfig::flat(3, 18.0);
        let r = coordinate_ascent(&mut Peak(vec![18.0; 3]), &init, &CoordinateOptions::default()).unwrap();
        assert_eq!(r.best_config, init);
        assert_eq!(r.best_value, 0.0);
        // 1 + 3 sweeps (0.5, 0.25, 0.125) x 6 coordinates x 2 probes
        assert_eq!(r.evaluations, 1 + 3 * 6 * 2);
    }

    #[test]
    fn climbs_and_refines() {
        let r = coordinate_ascent(
            &mut Peak(vec![19.25, 16.5]),
            &GainConfig::flat(2, 18.0),
            &CoordinateOptions {
                include_tilts: false,
                ..CoordinateOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r.best_config.gains, vec![19.25, 16.5]);
        assert!(r.best_so_far().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn bounds_skip_noop_probes() {
        let r = coordinate_ascent(
            &mut Peak(vec![30.0]),
            &GainConfig::flat(1, 25.0),
            &CoordinateOptions {
                include_tilts: false,
                ..CoordinateOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r.best_config.gains, vec![25.0]);
        assert!(r.trace.iter().all(|s| s.config.gains[0] <= 25.0));
        // only the downward probe is evaluated in each of the three sweeps
        assert_eq!(r.evaluations, 4);
    }

    #[test]
    fn sweep_limit_stops_long_climbs() {
        let r = coordinate_ascent(
            &mut Peak(vec![10.0]),
            &GainConfig::flat(1, 25.0),
            &CoordinateOptions {
                include_tilts: false,
                max_sweeps: 2,
                ..CoordinateOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r.best_config.gains, vec![10.0]);
    }
}
