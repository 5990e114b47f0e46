//! Stateless detectors over telemetry records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlarmKind {
    QDrop,
    LossOfSignal,
    DegradationForecast,
}

impl AlarmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlarmKind::QDrop => "q_drop",
            AlarmKind::LossOfSignal => "loss_of_signal",
            AlarmKind::DegradationForecast => "degradation_forecast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlarmDetail {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
    /// Q drop, predicted loss, or dark-port power depending on the kind.
    pub magnitude_db: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub kind: AlarmKind,
    pub tick: u64,
    pub detail: AlarmDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QDropParams {
    pub threshold_db: f64,
    /// Samples in the median window.
    pub recent: usize,
    /// Samples in the rolling baseline preceding the median window.
    pub baseline: usize,
    /// Baseline samples required before the detector arms.
    pub min_baseline: usize,
}

impl Default for QDropParams {
    fn default() -> Self {
        Self {
            threshold_db: 1.0,
            recent: 5,
            baseline: 50,
            min_baseline: 5,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Compare each real channel's recent median Q with its rolling baseline.
///
/// Only the trailing run of records taken under the same configuration and
/// occupancy as the latest record is considered, so operator-initiated
/// changes never look like a fault.
pub fn detect_q_drop(records: &[TelemetryRecord], params: &QDropParams) -> Option<Alarm> {
    let last = records.last()?;
    if records.len() < 2 || !last.all_osc_alive() {
        return None;
    }
    let key = last.fingerprint();
    let horizon = params.recent + params.baseline;
    let segment: Vec<&TelemetryRecord> = records
        .iter()
        .rev()
        .take(horizon)
        .take_while(|r| r.all_osc_alive() && r.fingerprint() == key)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if segment.len() < params.recent + params.min_baseline {
        return None;
    }
    let split = segment.len() - params.recent;
    let mut worst: Option<(usize, f64)> = None;
    for (slot, _) in last.real_q() {
        let series: Vec<f64> = segment
            .iter()
            .filter_map(|r| r.channels.iter().find(|c| c.slot == slot).and_then(|c| c.q_db))
            .collect();
        if series.len() != segment.len() {
            continue;
        }
        let base = &series[..split];
        let baseline = base.iter().sum::<f64>() / base.len() as f64;
        let mut recent = series[split..].to_vec();
        let drop = baseline - median(&mut recent);
        if drop >= params.threshold_db && worst.is_none_or(|(_, d)| drop > d) {
            worst = Some((slot, drop));
        }
    }
    worst.map(|(slot, drop)| Alarm {
        kind: AlarmKind::QDrop,
        tick: last.tick,
        detail: AlarmDetail {
            span: None,
            slot: Some(slot),
            magnitude_db: drop,
            note: format!("slot {slot} Q down {drop:.2} dB from baseline"),
        },
    })
}

/// Dark amplifier input threshold, dBm.
pub const LOS_INPUT_DBM: f64 = -50.0;
/// Input level that counts as carrying real signal, dBm.
pub const LIT_INPUT_DBM: f64 = -40.0;
/// Upstream output level above which a dark downstream input is suspicious, dBm.
pub const LOS_UPSTREAM_DBM: f64 = -20.0;

/// Spans with a dead supervisory channel or a dark far-end amplifier input
/// while the near end is still launching power.
///
/// The power rule only applies when the near-end amplifier itself has light
/// at its input; otherwise amplified noise from an already-dark stage would
/// be mistaken for a second break.
pub fn detect_los(record: &TelemetryRecord) -> Vec<Alarm> {
    let amps = &record.amplifiers;
    let mut out = Vec::new();
    for (s, &alive) in record.osc_alive.iter().enumerate() {
        let (Some(up), Some(down)) = (amps.get(s), amps.get(s + 1)) else {
            continue;
        };
        let power_rule = down.input_dbm < LOS_INPUT_DBM
            && up.output_dbm >= LOS_UPSTREAM_DBM
            && up.input_dbm >= LIT_INPUT_DBM;
        if !alive || power_rule {
            let note = if alive {
                format!("span {s}: far-end input {:.1} dBm", down.input_dbm)
            } else {
                format!("span {s}: OSC lost")
            };
            out.push(Alarm {
                kind: AlarmKind::LossOfSignal,
                tick: record.tick,
                detail: AlarmDetail {
                    span: Some(s),
                    slot: None,
                    magnitude_db: down.input_dbm,
                    note,
                },
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// dB per tick.
    pub slope: f64,
    /// Fitted value at tick 0, dB.
    pub intercept: f64,
    pub predicted_loss_db: f64,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("forecast needs {need} samples, have {have}")]
    InsufficientData { have: usize, need: usize },
}

/// Ordinary least squares fit `y = slope·x + intercept`.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Linear extrapolation of the last `window` `(tick, dB)` points.
pub fn forecast_power(
    series: &[(f64, f64)],
    window: usize,
    horizon: f64,
    trigger_loss_db: f64,
) -> Result<ForecastResult, ForecastError> {
    if series.len() < window || window < 2 {
        return Err(ForecastError::InsufficientData {
            have: series.len(),
            need: window.max(2),
        });
    }
    let tail = &series[series.len() - window..];
    let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1).collect();
    let (slope, intercept) = ols(&xs, &ys);
    let predicted_loss_db = if slope < 0.0 { -slope * horizon } else { 0.0 };
    Ok(ForecastResult {
        slope,
        intercept,
        predicted_loss_db,
        triggered: predicted_loss_db >= trigger_loss_db,
    })
}
