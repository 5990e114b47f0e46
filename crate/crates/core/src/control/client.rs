//! Wire client implementing [`NetworkPort`].

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use serde::de::DeserializeOwned;
use serde_json::Value;

use super::log::{LogEntry, LogRange};
use super::port::NetworkPort;
use super::protocol::{decode_response, encode, Call};
use super::{ConfigEdit, ControlError, DeviceConfig, EditResult};
use crate::telemetry::{TelemetryFilter, TelemetryRecord};

/// A session that subscribes to full telemetry on connect and collects
/// stream items while waiting for responses.
#[derive(Debug)]
pub struct RemotePort {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    subscription: u64,
    records: VecDeque<TelemetryRecord>,
}

fn transport(e: impl std::fmt::Display) -> ControlError {
    ControlError::Transport(e.to_string())
}

impl RemotePort {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ControlError> {
        let stream = TcpStream::connect(addr).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let writer = stream.try_clone().map_err(transport)?;
        let mut port = Self {
            reader: BufReader::new(stream),
            writer,
            next_id: 1,
            subscription: 0,
            records: VecDeque::new(),
        };
        let id = port.next_id;
        port.call(Call::SubscribeTelemetry(TelemetryFilter::default()))?;
        port.subscription = id;
        Ok(port)
    }

    /// Send one call and wait for its response.
    pub fn call(&mut self, call: Call) -> Result<Value, ControlError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = encode(&call.to_request(id));
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(transport)?;
        loop {
            let mut buf = String::new();
            let n = self.reader.read_line(&mut buf).map_err(transport)?;
            if n == 0 {
                return Err(transport("connection closed"));
            }
            let resp = decode_response(buf.trim_end()).map_err(transport)?;
            if resp.id == id {
                return resp.into_result();
            }
            if self.subscription != 0 && resp.id == self.subscription {
                let mut v = resp.into_result()?;
                let record: TelemetryRecord = serde_json::from_value(v["record"].take()).map_err(transport)?;
                self.records.push_back(record);
            }
        }
    }

    fn typed<T: DeserializeOwned>(&mut self, call: Call) -> Result<T, ControlError> {
        let v = self.call(call)?;
        serde_json::from_value(v).map_err(transport)
    }

    /// Records received but not yet handed out by `advance`.
    pub fn pending_records(&self) -> usize {
        self.records.len()
    }
}

impl NetworkPort for RemotePort {
    fn get_config(&mut self) -> Result<DeviceConfig, ControlError> {
        self.typed(Call::GetConfig)
    }

    fn edit_config(&mut self, edit: &ConfigEdit) -> Result<EditResult, ControlError> {
        self.typed(Call::EditConfig(edit.clone()))
    }

    fn advance(&mut self, ticks: u64) -> Result<Vec<TelemetryRecord>, ControlError> {
        let v = self.call(Call::AdvanceClock { ticks })?;
        let now = v["tick"].as_u64().ok_or_else(|| transport("advance-clock without tick"))?;
        let mut out: Vec<TelemetryRecord> = self.records.drain(..).collect();
        // Records from other clock drivers before this call are not ours.
        let first = now.saturating_sub(ticks);
        out.retain(|r| r.tick >= first);
        if out.len() as u64 != ticks {
            return Err(transport(format!("expected {ticks} records, got {}", out.len())));
        }
        Ok(out)
    }

    fn get_logs(&mut self, range: &LogRange) -> Result<Vec<LogEntry>, ControlError> {
        let mut v = self.call(Call::GetLogs(*range))?;
        serde_json::from_value(v["entries"].take()).map_err(transport)
    }

    fn now(&mut self) -> Result<u64, ControlError> {
        Ok(self.get_config()?.tick)
    }
}
