//! Newline-delimited JSON messages and the typed calls they carry.
//!
//! ```text
//! {"id":1,"method":"get-config","params":{}}
//! {"id":1,"result":{...}}
//! {"id":2,"error":{"code":404,"message":"unknown method `x`"}}
//! ```

use std::sync::mpsc::SyncSender;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::log::LogRange;
use super::service::{Outgoing, Service};
use super::{ConfigEdit, ControlError};
use crate::scenario::EventKind;
use crate::telemetry::TelemetryFilter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: u64,
    pub method: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Result(Value),
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl Response {
    pub fn ok(id: u64, result: Value) -> Self {
        Self {
            id,
            outcome: Outcome::Result(result),
        }
    }

    pub fn err(id: u64, e: &ControlError) -> Self {
        Self {
            id,
            outcome: Outcome::Error(ErrorBody {
                code: e.code(),
                message: e.to_string(),
            }),
        }
    }

    pub fn into_result(self) -> Result<Value, ControlError> {
        match self.outcome {
            Outcome::Result(v) => Ok(v),
            Outcome::Error(e) => Err(ControlError::from_code(e.code, e.message)),
        }
    }
}

#[derive(Debug, Error)]
#[error("malformed message: {0}")]
pub struct DecodeError(#[from] serde_json::Error);

/// Serialize without the trailing newline.
pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

pub fn decode_request(line: &str) -> Result<Request, DecodeError> {
    Ok(serde_json::from_str(line)?)
}

pub fn decode_response(line: &str) -> Result<Response, DecodeError> {
    Ok(serde_json::from_str(line)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Advance {
    ticks: u64,
}

/// Typed form of every supported method.
#[derive(Debug, Clone, PartialEq)]
pub enum Call {
    GetConfig,
    EditConfig(ConfigEdit),
    SubscribeTelemetry(TelemetryFilter),
    InjectEvent(EventKind),
    GetLogs(LogRange),
    /// Lockstep clock control for deterministic remote runs.
    AdvanceClock { ticks: u64 },
}

impl Call {
    pub fn method(&self) -> &'static str {
        match self {
            Call::GetConfig => "get-config",
            Call::EditConfig(_) => "edit-config",
            Call::SubscribeTelemetry(_) => "subscribe-telemetry",
            Call::InjectEvent(_) => "inject-event",
            Call::GetLogs(_) => "get-logs",
            Call::AdvanceClock { .. } => "advance-clock",
        }
    }

    pub fn to_request(&self, id: u64) -> Request {
        let params = match self {
            Call::GetConfig => json!({}),
            Call::EditConfig(e) => to_value(e),
            Call::SubscribeTelemetry(f) => to_value(f),
            Call::InjectEvent(k) => to_value(k),
            Call::GetLogs(r) => to_value(r),
            Call::AdvanceClock { ticks } => to_value(&Advance { ticks: *ticks }),
        };
        Request {
            id,
            method: self.method().to_string(),
            params,
        }
    }

    pub fn from_request(req: &Request) -> Result<Self, ControlError> {
        let params = req.params.clone();
        let bad = |e: serde_json::Error| ControlError::Validation(format!("bad params: {e}"));
        Ok(match req.method.as_str() {
            "get-config" => Call::GetConfig,
            "edit-config" => Call::EditConfig(serde_json::from_value(params).map_err(bad)?),
            "subscribe-telemetry" => Call::SubscribeTelemetry(serde_json::from_value(params).map_err(bad)?),
            "inject-event" => Call::InjectEvent(serde_json::from_value(params).map_err(bad)?),
            "get-logs" => Call::GetLogs(serde_json::from_value(params).map_err(bad)?),
            "advance-clock" => {
                let a: Advance = serde_json::from_value(params).map_err(bad)?;
                Call::AdvanceClock { ticks: a.ticks }
            }
            other => return Err(ControlError::UnknownMethod(other.to_string())),
        })
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("params serialize")
}

/// Execute one request against the service.
///
/// `sink` receives stream items for subscriptions; without one, subscribing
/// is rejected.
pub fn dispatch(service: &mut Service, req: &Request, sink: Option<&SyncSender<Outgoing>>) -> Response {
    let outcome = Call::from_request(req).and_then(|call| execute(service, call, req.id, sink));
    match outcome {
        Ok(v) => Response::ok(req.id, v),
        Err(e) => Response::err(req.id, &e),
    }
}

fn execute(
    service: &mut Service,
    call: Call,
    id: u64,
    sink: Option<&SyncSender<Outgoing>>,
) -> Result<Value, ControlError> {
    Ok(match call {
        Call::GetConfig => to_value(&service.get_config()),
        Call::EditConfig(edit) => to_value(&service.edit_config(&edit)?),
        Call::SubscribeTelemetry(filter) => {
            let sink = sink.ok_or_else(|| ControlError::Validation("session cannot stream".into()))?;
            let sub = service.subscribe(filter, id, sink.clone());
            json!({"subscription": sub, "from_tick": service.now()})
        }
        Call::InjectEvent(kind) => {
            let at = service.inject_event(kind)?;
            json!({"accepted": true, "at_tick": at})
        }
        Call::GetLogs(range) => json!({"entries": service.get_logs(&range)}),
        Call::AdvanceClock { ticks } => {
            for _ in 0..ticks {
                service.tick();
            }
            json!({"tick": service.now()})
        }
    })
}

/// Stream item line for a subscription started by request `tag`.
pub fn stream_line(tag: u64, record: &Value) -> String {
    encode(&Response::ok(tag, json!({ "record": record })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn unknown_method_is_404_and_echoes_id() {
        let mut svc = Service::new(Scenario::canonical(), 0.1);
        let req = decode_request(r#"{"id":41,"method":"reboot","params":{}}"#).unwrap();
        let resp = dispatch(&mut svc, &req, None);
        assert_eq!(
            encode(&resp),
            r#"{"id":41,"error":{"code":404,"message":"unknown method `reboot`"}}"#
        );
    }

    #[test]
    fn calls_round_trip_through_requests() {
        let calls = [
            Call::GetConfig,
            Call::EditConfig(ConfigEdit::set_load(20)),
            Call::SubscribeTelemetry(TelemetryFilter {
                amplifiers: Some(vec![2]),
                omit_channels: true,
            }),
            Call::InjectEvent(EventKind::FiberCut { span: 3 }),
            Call::GetLogs(LogRange::ticks(3, 9)),
            Call::AdvanceClock { ticks: 5 },
        ];
        for (i, call) in calls.iter().enumerate() {
            let line = encode(&call.to_request(i as u64));
            let back = Call::from_request(&decode_request(&line).unwrap()).unwrap();
            assert_eq!(&back, call, "{line}");
        }
    }
}
