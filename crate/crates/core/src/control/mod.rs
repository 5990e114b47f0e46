//! Controller surface: device configuration tree, the single-owner service
//! that runs the clock, line-delimited JSON wire protocol, TCP server and
//! client, and the [`NetworkPort`] abstraction the agent drives.

mod client;
mod log;
mod port;
pub mod protocol;
mod server;
mod service;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain::GainConfig;
use crate::physics::{Amplifier, ChannelGrid, LinkTopology, Span};

pub use client::RemotePort;
pub use log::{LogEntry, LogRange, OperationLog, Severity};
pub use port::{LocalPort, NetworkPort};
pub use server::{serve, ServerHandle};
pub use service::{
    FaultInjection, Outgoing, Service, TruthSample, SOURCE_CONTROLLER, SOURCE_DEVICE, SOURCE_OPERATOR, SUBSCRIBER_BACKLOG,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("config version conflict: expected {expected}, current {actual}")]
    Conflict { expected: u64, actual: u64 },
    #[error("subscription {0} closed after backlog overflow")]
    BacklogOverflow(u64),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("transport: {0}")]
    Transport(String),
}

impl ControlError {
    /// Wire error code.
    pub fn code(&self) -> i64 {
        match self {
            ControlError::Validation(_) => 400,
            ControlError::UnknownMethod(_) => 404,
            ControlError::Conflict { .. } => 409,
            ControlError::BacklogOverflow(_) => 410,
            ControlError::Internal(_) | ControlError::Transport(_) => 500,
        }
    }

    pub fn from_code(code: i64, message: String) -> Self {
        match code {
            400 => ControlError::Validation(message),
            404 => ControlError::UnknownMethod(message),
            409 => ControlError::Internal(format!("conflict: {message}")),
            410 => ControlError::Internal(format!("gone: {message}")),
            _ => ControlError::Internal(message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpSetting {
    pub gain_db: f64,
    pub tilt_db: f64,
}

/// Datasheet view of a span; hidden excess loss is not part of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanDatasheet {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub beta2_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub slot_count: usize,
    pub spacing_hz: f64,
    pub anchor_hz: f64,
    pub channel_bandwidth_hz: f64,
    pub active: Vec<usize>,
    pub real: Vec<usize>,
}

/// The full device tree at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub tick: u64,
    pub version: u64,
    pub amplifiers: Vec<AmpSetting>,
    pub spans: Vec<SpanDatasheet>,
    pub grid: GridInfo,
    pub launch_power_dbm: f64,
}

/// Datasheet noise figure assumed for every amplifier.
pub const DATASHEET_NF_DB: f64 = 5.0;

impl DeviceConfig {
    pub fn from_link(link: &LinkTopology, tick: u64, version: u64) -> Self {
        let grid = &link.grid;
        Self {
            tick,
            version,
            amplifiers: link
                .amplifiers
                .iter()
                .map(|a| AmpSetting {
                    gain_db: a.gain_db,
                    tilt_db: a.tilt_db,
                })
                .collect(),
            spans: link
                .spans
                .iter()
                .map(|s| SpanDatasheet {
                    length_km: s.length_km,
                    attenuation_db_per_km: s.attenuation_db_per_km,
                    beta2_ps2_per_km: s.beta2_ps2_per_km,
                    gamma_per_w_km: s.gamma_per_w_km,
                })
                .collect(),
            grid: GridInfo {
                slot_count: grid.slot_count,
                spacing_hz: grid.spacing,
                anchor_hz: grid.anchor_frequency,
                channel_bandwidth_hz: grid.channel_bandwidth,
                active: grid.active_slots().collect(),
                real: grid.real_slots().collect(),
            },
            launch_power_dbm: link.launch_power_dbm,
        }
    }

    pub fn gain_config(&self) -> GainConfig {
        GainConfig {
            gains: self.amplifiers.iter().map(|a| a.gain_db).collect(),
            tilts: self.amplifiers.iter().map(|a| a.tilt_db).collect(),
        }
    }

    pub fn channel_grid(&self) -> ChannelGrid {
        let mut grid = ChannelGrid::empty(self.grid.slot_count);
        grid.spacing = self.grid.spacing_hz;
        grid.anchor_frequency = self.grid.anchor_hz;
        grid.channel_bandwidth = self.grid.channel_bandwidth_hz;
        for &s in &self.grid.active {
            grid.active[s] = true;
        }
        for &s in &self.grid.real {
            grid.is_real[s] = true;
        }
        grid
    }

    /// What the operator knows about the plant: datasheet spans, datasheet NF.
    pub fn nominal_link(&self) -> LinkTopology {
        LinkTopology {
            spans: self
                .spans
                .iter()
                .map(|s| Span {
                    length_km: s.length_km,
                    attenuation_db_per_km: s.attenuation_db_per_km,
                    extra_loss_db: 0.0,
                    beta2_ps2_per_km: s.beta2_ps2_per_km,
                    gamma_per_w_km: s.gamma_per_w_km,
                    is_cut: false,
                })
                .collect(),
            amplifiers: self
                .amplifiers
                .iter()
                .map(|a| Amplifier {
                    gain_db: a.gain_db,
                    tilt_db: a.tilt_db,
                    noise_figure_db: DATASHEET_NF_DB,
                })
                .collect(),
            grid: self.channel_grid(),
            launch_power_dbm: self.launch_power_dbm,
            ..LinkTopology::default()
        }
    }

    pub fn load(&self) -> usize {
        self.grid.active.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Change {
    SetGain { amplifier: usize, db: f64 },
    SetTilt { amplifier: usize, db: f64 },
    SetLoad { wavelengths: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEdit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_version: Option<u64>,
    pub changes: Vec<Change>,
}

impl ConfigEdit {
    /// Set every gain (and tilt) to `config`.
    pub fn apply_config(config: &GainConfig) -> Self {
        let mut changes = Vec::with_capacity(2 * config.len());
        for (k, (&g, &t)) in config.gains.iter().zip(&config.tilts).enumerate() {
            changes.push(Change::SetGain { amplifier: k, db: g });
            changes.push(Change::SetTilt { amplifier: k, db: t });
        }
        Self {
            expected_version: None,
            changes,
        }
    }

    pub fn set_load(wavelengths: usize) -> Self {
        Self {
            expected_version: None,
            changes: vec![Change::SetLoad { wavelengths }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub version: u64,
    pub applied: Vec<Change>,
    pub changed_slots: Vec<usize>,
}
