//! Stateful alarm generation with deduplication.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::detect::{detect_los, detect_q_drop, forecast_power, Alarm, AlarmDetail, AlarmKind, ForecastResult, QDropParams};
use super::{RingBuffer, TelemetryRecord, BUFFER_CAPACITY};
use crate::physics::{channel_gain_db, ChannelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub q_drop: QDropParams,
    pub forecast_window: usize,
    pub forecast_horizon: f64,
    pub trigger_loss_db: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            q_drop: QDropParams::default(),
            forecast_window: 50,
            forecast_horizon: 100.0,
            trigger_loss_db: 5.0,
        }
    }
}

/// Received power with the configured amplifier gains removed, averaged over
/// active channels: launch minus accumulated span loss. Unlike raw received
/// power it is continuous across gain changes, so the forecast sees only the
/// plant. `None` while any span is dark.
pub fn normalized_power_db(record: &TelemetryRecord, grid: &ChannelGrid) -> Option<f64> {
    if !record.all_osc_alive() || record.channels.is_empty() {
        return None;
    }
    let cfg = &record.config;
    let sum: f64 = record
        .channels
        .iter()
        .map(|c| {
            let f = grid.frequency(c.slot);
            let gain: f64 = cfg
                .gains
                .iter()
                .zip(&cfg.tilts)
                .map(|(&g, &t)| channel_gain_db(g, t, f, grid))
                .sum();
            c.power_dbm - gain
        })
        .sum();
    Some(sum / record.channels.len() as f64)
}

/// Monitoring and analysis state: record buffer, forecast series, and which
/// alarm conditions are currently raised.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub config: MonitorConfig,
    grid: ChannelGrid,
    buffer: RingBuffer<TelemetryRecord>,
    series: Vec<(f64, f64)>,
    series_key: Vec<usize>,
    q_drop_raised: bool,
    los_raised: BTreeSet<usize>,
    forecast_raised: bool,
    last_forecast: Option<ForecastResult>,
    history: Vec<Alarm>,
}

impl Monitor {
    pub fn new(grid: ChannelGrid, config: MonitorConfig) -> Self {
        Self {
            config,
            grid,
            buffer: RingBuffer::new(BUFFER_CAPACITY),
            series: Vec::new(),
            series_key: Vec::new(),
            q_drop_raised: false,
            los_raised: BTreeSet::new(),
            forecast_raised: false,
            last_forecast: None,
            history: Vec::new(),
        }
    }

    pub fn buffer(&self) -> &RingBuffer<TelemetryRecord> {
        &self.buffer
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.history
    }

    pub fn last_forecast(&self) -> Option<ForecastResult> {
        self.last_forecast
    }

    /// Append a record and return alarms newly raised by it.
    pub fn ingest(&mut self, record: TelemetryRecord) -> Vec<Alarm> {
        let mut raised = Vec::new();

        let los = detect_los(&record);
        let now: BTreeSet<usize> = los.iter().filter_map(|a| a.detail.span).collect();
        for alarm in los {
            if !self.los_raised.contains(&alarm.detail.span.unwrap_or(usize::MAX)) {
                raised.push(alarm);
            }
        }
        self.los_raised = now;

        self.update_series(&record);
        self.buffer.push(record);
        let tail = self.buffer.tail(self.config.q_drop.recent + self.config.q_drop.baseline);

        match detect_q_drop(&tail, &self.config.q_drop) {
            Some(alarm) if !self.q_drop_raised => {
                self.q_drop_raised = true;
                raised.push(alarm);
            }
            Some(_) => {}
            None => self.q_drop_raised = false,
        }

        let tick = self.buffer.last().map_or(0, |r| r.tick);
        match forecast_power(
            &self.series,
            self.config.forecast_window,
            self.config.forecast_horizon,
            self.config.trigger_loss_db,
        ) {
            Ok(f) => {
                self.last_forecast = Some(f);
                if f.triggered && !self.forecast_raised {
                    raised.push(Alarm {
                        kind: AlarmKind::DegradationForecast,
                        tick,
                        detail: AlarmDetail {
                            span: None,
                            slot: None,
                            magnitude_db: f.predicted_loss_db,
                            note: format!(
                                "received power trending {:.3} dB/tick; {:.1} dB loss expected within {} ticks",
                                f.slope, f.predicted_loss_db, self.config.forecast_horizon
                            ),
                        },
                    });
                }
                self.forecast_raised = f.triggered;
            }
            Err(_) => self.forecast_raised = false,
        }

        self.history.extend(raised.iter().cloned());
        raised
    }

    fn update_series(&mut self, record: &TelemetryRecord) {
        let key = record.active_slots();
        if key != self.series_key {
            self.series.clear();
            self.series_key = key;
        }
        if let Some(v) = normalized_power_db(record, &self.grid) {
            self.series.push((record.tick as f64, v));
            let keep = self.config.forecast_window.max(2);
            if self.series.len() > 4 * keep {
                self.series.drain(..self.series.len() - keep);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::LinkTopology;
    use crate::scenario::{GroundTruth, NetworkState};
    use crate::telemetry::Sampler;

    fn run(state: &mut NetworkState, monitor: &mut Monitor, ticks: std::ops::Range<u64>, sampler: &mut Sampler) -> Vec<Alarm> {
        let mut out = Vec::new();
        for t in ticks {
            out.extend(monitor.ingest(sampler.sample(&state.link, t)));
        }
        out
    }

    #[test]
    fn persisting_cut_raises_one_los() {
        let mut state = NetworkState::new(LinkTopology::default(), GroundTruth::draw(1));
        state.apply_wavelength_change(20).unwrap();
        let mut monitor = Monitor::new(state.link.grid.clone(), MonitorConfig::default());
        let mut sampler = Sampler::new(1, 0.1);
        assert!(run(&mut state, &mut monitor, 0..60, &mut sampler).is_empty());
        state.link.spans[0].is_cut = true;
        let alarms = run(&mut state, &mut monitor, 60..120, &mut sampler);
        assert_eq!(alarms.len(), 1);
        assert_eq!(alarms[0].kind, AlarmKind::LossOfSignal);
        assert_eq!(alarms[0].detail.span, Some(0));
        state.link.spans[0].is_cut = false;
        assert!(run(&mut state, &mut monitor, 120..130, &mut sampler).is_empty());
        state.link.spans[0].is_cut = true;
        assert_eq!(run(&mut state, &mut monitor, 130..140, &mut sampler).len(), 1);
    }

    #[test]
    fn normalized_power_ignores_gain_changes() {
        let mut state = NetworkState::new(LinkTopology::default(), GroundTruth::draw(2));
        state.apply_wavelength_change(15).unwrap();
        let mut sampler = Sampler::noiseless();
        let a = normalized_power_db(&sampler.sample(&state.link, 0), &state.link.grid).unwrap();
        state.link.amplifiers[2].gain_db = 23.0;
        state.link.amplifiers[4].tilt_db = 1.5;
        let b = normalized_power_db(&sampler.sample(&state.link, 1), &state.link.grid).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} {b}");
    }
}
