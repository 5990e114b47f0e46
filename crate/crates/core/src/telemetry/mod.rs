//! Monitoring and analysis: noisy telemetry sampling, Q-drop and
//! loss-of-signal detection, linear power-degradation forecasting, and the
//! CSV export used for twin datasets.

mod csv;
mod detect;
mod monitor;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gain::GainConfig;
use crate::physics::{transmit, w_to_dbm, LinkTopology, POWER_FLOOR_DBM};

pub use self::csv::{header as csv_header, parse_csv, write_csv, CsvError, CSV_HEADER};
pub use detect::{
    detect_los, detect_q_drop, forecast_power, ols, LIT_INPUT_DBM, LOS_INPUT_DBM, Alarm, AlarmDetail, AlarmKind, ForecastError,
    ForecastResult, QDropParams,
};
pub use monitor::{normalized_power_db, Monitor, MonitorConfig};

/// Default ring-buffer capacity.
pub const BUFFER_CAPACITY: usize = 10_000;

/// Default measurement noise on every reported power and Q value, dB.
pub const DEFAULT_SIGMA_DB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpReading {
    pub input_dbm: f64,
    pub output_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelReading {
    pub slot: usize,
    pub is_real: bool,
    pub power_dbm: f64,
    /// Present on transponder-carrying channels with light.
    pub q_db: Option<f64>,
}

/// One tick of measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub tick: u64,
    /// Configuration the plant was running when sampled.
    pub config: GainConfig,
    pub amplifiers: Vec<AmpReading>,
    pub osc_alive: Vec<bool>,
    pub channels: Vec<ChannelReading>,
}

impl TelemetryRecord {
    pub fn all_osc_alive(&self) -> bool {
        self.osc_alive.iter().all(|&a| a)
    }

    pub fn active_slots(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.slot).collect()
    }

    pub fn real_q(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.channels
            .iter()
            .filter(|c| c.is_real)
            .filter_map(|c| c.q_db.map(|q| (c.slot, q)))
    }

    pub fn min_real_q(&self) -> Option<f64> {
        self.real_q().map(|(_, q)| q).reduce(f64::min)
    }

    /// Configuration plus occupancy: records sharing a fingerprint were taken
    /// under identical operator-controlled conditions.
    pub fn fingerprint(&self) -> (Vec<u64>, Vec<u64>, Vec<(usize, bool)>) {
        (
            self.config.gains.iter().map(|g| g.to_bits()).collect(),
            self.config.tilts.iter().map(|t| t.to_bits()).collect(),
            self.channels.iter().map(|c| (c.slot, c.is_real)).collect(),
        )
    }
}

/// Projection applied to a subscription stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFilter {
    /// Keep only these amplifiers (all when `None`).
    pub amplifiers: Option<Vec<usize>>,
    /// Drop per-channel readings.
    #[serde(default)]
    pub omit_channels: bool,
}

impl TelemetryFilter {
    /// The filtered view as JSON; amplifier entries carry their index.
    pub fn project(&self, record: &TelemetryRecord) -> serde_json::Value {
        let amps: Vec<serde_json::Value> = record
            .amplifiers
            .iter()
            .enumerate()
            .filter(|(i, _)| self.amplifiers.as_ref().is_none_or(|keep| keep.contains(i)))
            .map(|(i, a)| serde_json::json!({"index": i, "input_dbm": a.input_dbm, "output_dbm": a.output_dbm}))
            .collect();
        let mut out = serde_json::json!({
            "tick": record.tick,
            "amplifiers": amps,
        });
        if self.amplifiers.is_none() {
            out["config"] = serde_json::to_value(&record.config).expect("config serializes");
            out["osc_alive"] = serde_json::to_value(&record.osc_alive).expect("bools serialize");
        }
        if !self.omit_channels {
            out["channels"] = serde_json::to_value(&record.channels).expect("channels serialize");
        }
        out
    }
}

/// Turns plant state into noisy records from a single seeded stream.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Sampler {
    pub fn new(seed: u64, sigma_db: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7465_6c65_6d65),
            noise: (sigma_db > 0.0).then(|| Normal::new(0.0, sigma_db).expect("finite sigma")),
        }
    }

    pub fn noiseless() -> Self {
        Self::new(0, 0.0)
    }

    fn jitter(&mut self, v: f64) -> f64 {
        match &self.noise {
            Some(n) => v + n.sample(&mut self.rng),
            None => v,
        }
    }

    fn jitter_power(&mut self, dbm: f64) -> f64 {
        self.jitter(dbm).max(POWER_FLOOR_DBM)
    }

    /// Measure the plant as currently configured in `link`.
    pub fn sample(&mut self, link: &LinkTopology, tick: u64) -> TelemetryRecord {
        let config = link.gain_config();
        let snap = transmit(link, &link.launch_vector(), &config);
        let amplifiers = snap
            .amplifier_ports
            .iter()
            .map(|p| AmpReading {
                input_dbm: self.jitter_power(w_to_dbm(p.input_w)),
                output_dbm: self.jitter_power(w_to_dbm(p.output_w)),
            })
            .collect();
        let channels = snap
            .channels
            .iter()
            .map(|c| {
                let power_dbm = self.jitter_power(w_to_dbm(c.received_power_w));
                let q_db = match (c.is_real, c.q_factor_db) {
                    (true, Some(q)) => Some(self.jitter(q)),
                    _ => None,
                };
                ChannelReading {
                    slot: c.slot,
                    is_real: c.is_real,
                    power_dbm,
                    q_db,
                }
            })
            .collect();
        TelemetryRecord {
            tick,
            config,
            amplifiers,
            osc_alive: link.spans.iter().map(|s| !s.is_cut).collect(),
            channels,
        }
    }
}

/// Bounded FIFO of the most recent records.
#[derive(Debug, Clone)]
pub struct RingBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T: Clone> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            items: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &T> + ExactSizeIterator {
        self.items.iter()
    }

    pub fn last(&self) -> Option<&T> {
        self.items.back()
    }

    /// Owned copy of the most recent `n` items, oldest first.
    pub fn tail(&self, n: usize) -> Vec<T> {
        let skip = self.items.len().saturating_sub(n);
        self.items.iter().skip(skip).cloned().collect()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.items.iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{GroundTruth, NetworkState};

    fn state(load: usize) -> NetworkState {
        let mut s = NetworkState::new(LinkTopology::default(), GroundTruth::draw(3));
        s.apply_wavelength_change(load).unwrap();
        s
    }

    #[test]
    fn noiseless_sample_matches_transmit() {
        let s = state(20);
        let rec = Sampler::noiseless().sample(&s.link, 4);
        let snap = transmit(&s.link, &s.link.launch_vector(), &s.link.gain_config());
        for (r, c) in rec.channels.iter().zip(&snap.channels) {
            assert_eq!(r.power_dbm, w_to_dbm(c.received_power_w));
            if c.is_real {
                assert_eq!(r.q_db, c.q_factor_db);
            } else {
                assert_eq!(r.q_db, None);
            }
        }
        assert_eq!(rec.amplifiers[3].input_dbm, w_to_dbm(snap.amplifier_ports[3].input_w));
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let s = state(20);
        let a: Vec<_> = {
            let mut sm = Sampler::new(11, 0.1);
            (0..3).map(|t| sm.sample(&s.link, t)).collect()
        };
        let b: Vec<_> = {
            let mut sm = Sampler::new(11, 0.1);
            (0..3).map(|t| sm.sample(&s.link, t)).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a[0].channels, a[1].channels);
    }

    #[test]
    fn cut_shows_dead_osc_and_dark_input() {
        let mut s = state(20);
        s.link.spans[1].is_cut = true;
        let rec = Sampler::new(1, 0.1).sample(&s.link, 0);
        assert_eq!(rec.osc_alive, vec![true, false, true, true]);
        assert_eq!(rec.amplifiers[2].input_dbm, POWER_FLOOR_DBM);
        assert!(rec.min_real_q().is_none());
    }

    #[test]
    fn ring_buffer_keeps_latest() {
        let mut rb = RingBuffer::new(3);
        for i in 0..5 {
            rb.push(i);
        }
        assert_eq!(rb.to_vec(), vec![2, 3, 4]);
        assert_eq!(rb.tail(2), vec![3, 4]);
        assert_eq!(rb.tail(10).len(), 3);
    }

    #[test]
    fn filter_projects_single_amplifier() {
        let s = state(5);
        let rec = Sampler::noiseless().sample(&s.link, 0);
        let filter = TelemetryFilter {
            amplifiers: Some(vec![2]),
            omit_channels: true,
        };
        let v = filter.project(&rec);
        assert_eq!(v["amplifiers"].as_array().unwrap().len(), 1);
        assert_eq!(v["amplifiers"][0]["index"], 2);
        assert!(v.get("channels").is_none());
        assert!(v.get("config").is_none());
    }
}
