//! Amplifier gain/tilt settings: the variable every optimizer searches over.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GAIN_MIN_DB: f64 = 10.0;
pub const GAIN_MAX_DB: f64 = 25.0;
pub const TILT_MIN_DB: f64 = -3.0;
pub const TILT_MAX_DB: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GainConfigError {
    #[error("gain and tilt vectors differ in length ({gains} vs {tilts})")]
    LengthMismatch { gains: usize, tilts: usize },
    #[error("amplifier {index}: gain {value} dB outside [{GAIN_MIN_DB}, {GAIN_MAX_DB}]")]
    GainOutOfRange { index: usize, value: f64 },
    #[error("amplifier {index}: tilt {value} dB outside [{TILT_MIN_DB}, {TILT_MAX_DB}]")]
    TiltOutOfRange { index: usize, value: f64 },
}

/// Per-amplifier gain and tilt, in amplifier chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainConfig {
    pub gains: Vec<f64>,
    pub tilts: Vec<f64>,
}

impl GainConfig {
    pub fn new(gains: Vec<f64>, tilts: Vec<f64>) -> Result<Self, GainConfigError> {
        let config = Self { gains, tilts };
        config.validate()?;
        Ok(config)
    }

    /// All amplifiers at `gain_db`, zero tilt.
    pub fn flat(amplifiers: usize, gain_db: f64) -> Self {
        Self {
            gains: vec![gain_db; amplifiers],
            tilts: vec![0.0; amplifiers],
        }
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn validate(&self) -> Result<(), GainConfigError> {
        if self.gains.len() != self.tilts.len() {
            return Err(GainConfigError::LengthMismatch {
                gains: self.gains.len(),
                tilts: self.tilts.len(),
            });
        }
        for (index, &value) in self.gains.iter().enumerate() {
            if !(GAIN_MIN_DB..=GAIN_MAX_DB).contains(&value) {
                return Err(GainConfigError::GainOutOfRange { index, value });
            }
        }
        for (index, &value) in self.tilts.iter().enumerate() {
            if !(TILT_MIN_DB..=TILT_MAX_DB).contains(&value) {
                return Err(GainConfigError::TiltOutOfRange { index, value });
            }
        }
        Ok(())
    }

    pub fn with_gains(&self, gains: &[f64]) -> Self {
        Self {
            gains: gains.to_vec(),
            tilts: self.tilts.clone(),
        }
    }

    /// Same settings with every value clamped into its bounds.
    pub fn clamped(&self) -> Self {
        Self {
            gains: self
                .gains
                .iter()
                .map(|g| g.clamp(GAIN_MIN_DB, GAIN_MAX_DB))
                .collect(),
            tilts: self
                .tilts
                .iter()
                .map(|t| t.clamp(TILT_MIN_DB, TILT_MAX_DB))
                .collect(),
        }
    }

    pub fn total_gain_db(&self) -> f64 {
        self.gains.iter().sum()
    }
}

impl Eq for GainConfig {}

impl PartialOrd for GainConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic over gains, then tilts; used for deterministic tie-breaking.
impl Ord for GainConfig {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.gains.iter().chain(self.tilts.iter());
        let rhs = other.gains.iter().chain(other.tilts.iter());
        for (a, b) in lhs.zip(rhs) {
            match a.total_cmp(b) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        self.len().cmp(&other.len())
    }
}
