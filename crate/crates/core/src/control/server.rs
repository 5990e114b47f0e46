//! TCP front end: one reader and one writer thread per session.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::protocol::{decode_request, dispatch, encode, stream_line, Outcome, Response};
use super::service::{Outgoing, Service, SUBSCRIBER_BACKLOG};
use super::ControlError;

/// Running server; dropping it does not stop it, call [`ServerHandle::shutdown`].
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    clock: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        if let Some(h) = self.clock.take() {
            let _ = h.join();
        }
    }
}

/// Serve `service` on `addr`.
///
/// With `clock = Some(period)` a background thread ticks the service at that
/// period until the scenario ends; otherwise the clock only moves on
/// `advance-clock` requests.
pub fn serve(
    service: Arc<Mutex<Service>>,
    addr: impl ToSocketAddrs,
    clock: Option<Duration>,
) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));

    let clock = clock.map(|period| {
        let service = Arc::clone(&service);
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                {
                    let mut svc = service.lock().expect("service lock");
                    if svc.is_finished() {
                        break;
                    }
                    svc.tick();
                }
                thread::sleep(period);
            }
        })
    });

    let accept = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let service = Arc::clone(&service);
                thread::spawn(move || {
                    if let Err(e) = session(service, stream) {
                        log::debug!("session ended: {e}");
                    }
                });
            }
        })
    };

    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
        clock,
    })
}

fn session(service: Arc<Mutex<Service>>, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let writer_stream = stream.try_clone()?;
    // Room for a full subscriber backlog plus in-flight responses.
    let (tx, rx) = sync_channel::<Outgoing>(SUBSCRIBER_BACKLOG + 64);
    let writer = thread::spawn(move || write_loop(writer_stream, rx));

    let mut subscriptions = Vec::new();
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = match decode_request(&line) {
            Ok(req) => {
                let mut svc = service.lock().expect("service lock");
                let resp = dispatch(&mut svc, &req, Some(&tx));
                if let Outcome::Result(v) = &resp.outcome {
                    if req.method == "subscribe-telemetry" {
                        subscriptions.extend(v["subscription"].as_u64());
                    }
                }
                resp
            }
            Err(e) => Response::err(0, &ControlError::Validation(e.to_string())),
        };
        if tx.send(Outgoing::Line(encode(&response))).is_err() {
            break;
        }
    }
    {
        let mut svc = service.lock().expect("service lock");
        for id in subscriptions {
            svc.unsubscribe(id);
        }
    }
    drop(tx);
    let _ = writer.join();
    Ok(())
}

fn write_loop(mut stream: TcpStream, rx: Receiver<Outgoing>) {
    for item in rx {
        let line = match item {
            Outgoing::Line(l) => l,
            Outgoing::Record { tag, record } => stream_line(tag, &record),
        };
        if stream
            .write_all(line.as_bytes())
            .and_then(|_| stream.write_all(b"\n"))
            .is_err()
        {
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}
