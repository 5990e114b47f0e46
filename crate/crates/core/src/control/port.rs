//! What the agent needs from a network, in-process or over the wire.

use super::log::{LogEntry, LogRange};
use super::service::Service;
use super::{ConfigEdit, ControlError, DeviceConfig, EditResult};
use crate::telemetry::TelemetryRecord;

/// Controller operations used by the agent.
pub trait NetworkPort {
    fn get_config(&mut self) -> Result<DeviceConfig, ControlError>;
    fn edit_config(&mut self, edit: &ConfigEdit) -> Result<EditResult, ControlError>;
    /// Move the clock `ticks` steps and return the records produced, in order.
    fn advance(&mut self, ticks: u64) -> Result<Vec<TelemetryRecord>, ControlError>;
    fn get_logs(&mut self, range: &LogRange) -> Result<Vec<LogEntry>, ControlError>;
    fn now(&mut self) -> Result<u64, ControlError>;
}

/// Direct calls into an owned [`Service`].
#[derive(Debug)]
pub struct LocalPort {
    service: Service,
}

impl LocalPort {
    pub fn new(service: Service) -> Self {
        Self { service }
    }

    pub fn service(&self) -> &Service {
        &self.service
    }

    pub fn service_mut(&mut self) -> &mut Service {
        &mut self.service
    }

    pub fn into_inner(self) -> Service {
        self.service
    }
}

impl NetworkPort for LocalPort {
    fn get_config(&mut self) -> Result<DeviceConfig, ControlError> {
        Ok(self.service.get_config())
    }

    fn edit_config(&mut self, edit: &ConfigEdit) -> Result<EditResult, ControlError> {
        self.service.edit_config(edit)
    }

    fn advance(&mut self, ticks: u64) -> Result<Vec<TelemetryRecord>, ControlError> {
        Ok((0..ticks).map(|_| self.service.tick()).collect())
    }

    fn get_logs(&mut self, range: &LogRange) -> Result<Vec<LogEntry>, ControlError> {
        Ok(self.service.get_logs(range))
    }

    fn now(&mut self) -> Result<u64, ControlError> {
        Ok(self.service.now())
    }
}

impl<P: NetworkPort + ?Sized> NetworkPort for &mut P {
    fn get_config(&mut self) -> Result<DeviceConfig, ControlError> {
        (**self).get_config()
    }
    fn edit_config(&mut self, edit: &ConfigEdit) -> Result<EditResult, ControlError> {
        (**self).edit_config(edit)
    }
    fn advance(&mut self, ticks: u64) -> Result<Vec<TelemetryRecord>, ControlError> {
        (**self).advance(ticks)
    }
    fn get_logs(&mut self, range: &LogRange) -> Result<Vec<LogEntry>, ControlError> {
        (**self).get_logs(range)
    }
    fn now(&mut self) -> Result<u64, ControlError> {
        (**self).now()
    }
}
