use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};

use adon::control::protocol::{decode_request, decode_response, encode, Call};
use adon::control::{
    serve, Change, ConfigEdit, ControlError, LocalPort, LogRange, NetworkPort, RemotePort, Service, Severity,
};
use adon::gain::GainConfig;
use adon::scenario::{EventKind, Scenario};
use proptest::prelude::*;
use serde_json::Value;

const CORPUS: &str = include_str!("golden/protocol_corpus.jsonl");

#[test]
fn golden_corpus_round_trips_byte_for_byte() {
    for line in CORPUS.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let again = if v.get("method").is_some() {
            encode(&decode_request(line).unwrap())
        } else {
            encode(&decode_response(line).unwrap())
        };
        assert_eq!(again, line);
    }
}

#[test]
fn malformed_requests_are_rejected() {
    for bad in [
        r#"{"id":1,"method":"get-config"}"#,
        r#"{"id":-1,"method":"get-config","params":{}}"#,
        r#"{"id":1,"method":"get-config","params":{},"extra":0}"#,
        "not json",
    ] {
        assert!(decode_request(bad).is_err(), "{bad}");
    }
}

fn remote_pair() -> (Arc<Mutex<Service>>, adon::control::ServerHandle) {
    let svc = Arc::new(Mutex::new(Service::new(Scenario::canonical(), 0.1)));
    let handle = serve(Arc::clone(&svc), "127.0.0.1:0", None).unwrap();
    (svc, handle)
}

#[test]
fn remote_and_local_ports_see_identical_records() {
    let (_svc, handle) = remote_pair();
    let mut remote = RemotePort::connect(handle.addr()).unwrap();
    let mut local = LocalPort::new(Service::new(Scenario::canonical(), 0.1));

    let edit = ConfigEdit::apply_config(&GainConfig::flat(6, 19.5));
    for port in [&mut remote as &mut dyn NetworkPort, &mut local] {
        port.advance(3).unwrap();
        port.edit_config(&edit).unwrap();
    }
    let a = remote.advance(40).unwrap();
    let b = local.advance(40).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.first().unwrap().tick, 3);
    assert_eq!(remote.get_config().unwrap(), local.get_config().unwrap());
    assert_eq!(
        remote.get_logs(&LogRange::all()).unwrap(),
        local.get_logs(&LogRange::all()).unwrap()
    );
    drop(remote);
    handle.shutdown();
}

fn raw_session(addr: std::net::SocketAddr) -> (BufReader<TcpStream>, TcpStream) {
    let s = TcpStream::connect(addr).unwrap();
    (BufReader::new(s.try_clone().unwrap()), s)
}

fn send(w: &mut TcpStream, call: Call, id: u64) {
    let line = encode(&call.to_request(id)) + "\n";
    w.write_all(line.as_bytes()).unwrap();
}

fn read_until(r: &mut BufReader<TcpStream>, id: u64, stream_id: u64, stream: &mut Vec<Value>) -> Value {
    loop {
        let mut buf = String::new();
        r.read_line(&mut buf).unwrap();
        let v: Value = serde_json::from_str(&buf).unwrap();
        if v["id"] == stream_id && v["result"].get("record").is_some() {
            stream.push(v["result"]["record"].clone());
        } else if v["id"] == id {
            return v;
        }
    }
}

#[test]
fn fan_out_is_complete_ordered_and_projected() {
    let (_svc, handle) = remote_pair();
    let (mut r1, mut w1) = raw_session(handle.addr());
    let (mut r2, mut w2) = raw_session(handle.addr());
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    send(&mut w1, Call::SubscribeTelemetry(Default::default()), 1);
    read_until(&mut r1, 1, 1, &mut s1);
    let filter = adon::telemetry::TelemetryFilter {
        amplifiers: Some(vec![2]),
        omit_channels: true,
    };
    send(&mut w2, Call::SubscribeTelemetry(filter), 7);
    read_until(&mut r2, 7, 7, &mut s2);

    send(&mut w1, Call::AdvanceClock { ticks: 100 }, 2);
    read_until(&mut r1, 2, 1, &mut s1);
    // Session 2 only sees the stream; a round trip flushes it.
    send(&mut w2, Call::GetConfig, 8);
    read_until(&mut r2, 8, 7, &mut s2);

    let ticks = |s: &[Value]| s.iter().map(|r| r["tick"].as_u64().unwrap()).collect::<Vec<_>>();
    assert_eq!(ticks(&s1), (0..100).collect::<Vec<_>>());
    assert_eq!(ticks(&s2), ticks(&s1));
    for rec in &s2 {
        let amps = rec["amplifiers"].as_array().unwrap();
        assert_eq!(amps.len(), 1);
        assert_eq!(amps[0]["index"], 2);
        assert!(rec.get("channels").is_none());
    }
    drop((r1, w1, r2, w2));
    handle.shutdown();
}

#[test]
fn cut_logs_carry_los_before_any_agent_action() {
    let mut port = LocalPort::new(Service::new(Scenario::canonical(), 0.1));
    port.advance(10).unwrap();
    port.service_mut().inject_event(EventKind::FiberCut { span: 3 }).unwrap();
    port.advance(2).unwrap();
    port.edit_config(&ConfigEdit::apply_config(&GainConfig::flat(6, 18.0))).unwrap();
    let logs = port.get_logs(&LogRange::ticks(10, 20)).unwrap();
    let los = logs.iter().position(|e| e.severity == Severity::Critical).unwrap();
    let edit = logs.iter().position(|e| e.source == "controller").unwrap();
    assert!(los < edit);
    assert_eq!(logs[los].payload["span"], 3);
    assert!(port.get_logs(&LogRange::ticks(20, 10)).unwrap().is_empty());
}

#[test]
fn edits_are_accepted_on_a_dark_link() {
    let mut port = LocalPort::new(Service::new(Scenario::canonical(), 0.1));
    port.advance(1).unwrap();
    port.service_mut().inject_event(EventKind::FiberCut { span: 0 }).unwrap();
    let rec = port.advance(1).unwrap();
    assert!(!rec[0].osc_alive[0]);
    port.edit_config(&ConfigEdit {
        expected_version: None,
        changes: vec![Change::SetGain { amplifier: 4, db: 21.0 }],
    })
    .unwrap();
    assert_eq!(port.get_config().unwrap().amplifiers[4].gain_db, 21.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn failed_edits_leave_config_hash_equal(
        gains in prop::collection::vec(5.0f64..30.0, 6),
        fail_at in prop::option::of(0usize..13),
    ) {
        let mut svc = Service::new(Scenario::canonical(), 0.1);
        svc.tick();
        let before = serde_json::to_string(&svc.get_config()).unwrap();
        let logs_before = svc.log().len();
        svc.fault.fail_next_edit_after = fail_at;
        let mut edit = ConfigEdit::apply_config(&GainConfig::flat(6, 18.0));
        for (k, g) in gains.iter().enumerate() {
            edit.changes[2 * k] = Change::SetGain { amplifier: k, db: *g };
        }
        match svc.edit_config(&edit) {
            Ok(_) => {
                prop_assert!(fail_at.is_none());
                prop_assert!(gains.iter().all(|g| (10.0..=25.0).contains(g)));
            }
            Err(e) => {
                prop_assert!(matches!(e, ControlError::Validation(_) | ControlError::Internal(_)));
                prop_assert_eq!(serde_json::to_string(&svc.get_config()).unwrap(), before);
                prop_assert_eq!(svc.log().len(), logs_before);
            }
        }
    }

    #[test]
    fn log_queries_are_strictly_ordered(from in 0u64..60, len in 0u64..60, since in 0u64..20) {
        let mut port = LocalPort::new(Service::new(Scenario::canonical(), 0.1));
        port.advance(20).unwrap();
        for k in 0..3 {
            port.edit_config(&ConfigEdit::apply_config(&GainConfig::flat(6, 17.0 + k as f64))).unwrap();
            port.advance(10).unwrap();
        }
        let range = LogRange { from_tick: from, to_tick: Some(from + len), since_seq: since };
        let got = port.get_logs(&range).unwrap();
        prop_assert!(got.windows(2).all(|w| (w[0].tick, w[0].seq) < (w[1].tick, w[1].seq)));
        prop_assert!(got.iter().all(|e| e.tick >= from && e.tick <= from + len && e.seq >= since));
    }
}
