//! Desk-scale autonomous optical link: GN-model physics, lifecycle scenarios,
//! telemetry analytics, a calibrated digital twin, gain optimizers, an
//! LLM-style planning agent and a line-delimited JSON control plane.

pub mod gain;
pub mod physics;
pub mod scenario;
pub mod telemetry;
pub mod optimizer;
pub mod twin;
pub mod control;
pub mod agent;
pub mod lifecycle;
