//! Telemetry CSV: one row per tick, columns in a fixed order.
//!
//! `tick, gain_0.., tilt_0.., amp{k}_in_dbm, amp{k}_out_dbm.., osc_{s}..,`
//! then per slot `ch{i}_kind` (`-` idle, `d` dummy, `r` real),
//! `ch{i}_power_dbm`, `ch{i}_q_db`. Empty cells mean "not applicable".
//! Floats use the shortest representation that round-trips exactly.

use std::fmt::Write as _;

use thiserror::Error;

use super::{AmpReading, ChannelReading, TelemetryRecord};
use crate::gain::GainConfig;
use crate::physics::{AMPLIFIER_COUNT, SPAN_COUNT};

/// Header for the default 6-amplifier, 4-span, 30-slot link.
pub static CSV_HEADER: std::sync::LazyLock<String> =
    std::sync::LazyLock::new(|| header(AMPLIFIER_COUNT, SPAN_COUNT, 30));

#[derive(Debug, Clone, PartialEq, Error)]
#[error("telemetry csv line {line}: {message}")]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

pub fn header(amps: usize, spans: usize, slots: usize) -> String {
    let mut cols = vec!["tick".to_string()];
    cols.extend((0..amps).map(|k| format!("gain_{k}")));
    cols.extend((0..amps).map(|k| format!("tilt_{k}")));
    for k in 0..amps {
        cols.push(format!("amp{k}_in_dbm"));
        cols.push(format!("amp{k}_out_dbm"));
    }
    cols.extend((0..spans).map(|s| format!("osc_{s}")));
    for i in 0..slots {
        cols.push(format!("ch{i}_kind"));
        cols.push(format!("ch{i}_power_dbm"));
        cols.push(format!("ch{i}_q_db"));
    }
    cols.join(",")
}

/// Serialize records sharing one link shape; `slots` is the grid size.
pub fn write_csv(records: &[TelemetryRecord], slots: usize) -> String {
    let (amps, spans) = records
        .first()
        .map_or((AMPLIFIER_COUNT, SPAN_COUNT), |r| (r.amplifiers.len(), r.osc_alive.len()));
    let mut out = header(amps, spans, slots);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.tick);
        for v in r.config.gains.iter().chain(&r.config.tilts) {
            let _ = write!(out, ",{v}");
        }
        for a in &r.amplifiers {
            let _ = write!(out, ",{},{}", a.input_dbm, a.output_dbm);
        }
        for &alive in &r.osc_alive {
            out.push_str(if alive { ",1" } else { ",0" });
        }
        let mut by_slot = r.channels.iter().peekable();
        for i in 0..slots {
            match by_slot.next_if(|c| c.slot == i) {
                Some(c) => {
                    let kind = if c.is_real { "r" } else { "d" };
                    let _ = write!(out, ",{kind},{},", c.power_dbm);
                    if let Some(q) = c.q_db {
                        let _ = write!(out, "{q}");
                    }
                }
                None => out.push_str(",-,,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TelemetryRecord>, CsvError> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(CsvError {
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = head.split(',').collect();
    let count = |prefix: &str, suffix: &str| {
        cols.iter()
            .filter(|c| c.starts_with(prefix) && c.ends_with(suffix))
            .count()
    };
    let amps = count("gain_", "");
    let spans = count("osc_", "");
    let slots = count("ch", "_kind");
    if head != header(amps, spans, slots) {
        return Err(CsvError {
            line: 1,
            message: "header does not match the telemetry layout".into(),
        });
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CsvError {
            line: line_no,
            message,
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(err(format!("expected {} cells, found {}", cols.len(), cells.len())));
        }
        let num = |i: usize| -> Result<f64, CsvError> {
            cells[i]
                .parse::<f64>()
                .map_err(|_| err(format!("column `{}`: bad number `{}`", cols[i], cells[i])))
        };
        let tick = cells[0]
            .parse::<u64>()
            .map_err(|_| err(format!("bad tick `{}`", cells[0])))?;
        let mut i = 1;
        let mut take = |n: usize| {
            let start = i;
            i += n;
            start
        };
        let g0 = take(amps);
        let t0 = take(amps);
        let a0 = take(2 * amps);
        let o0 = take(spans);
        let c0 = take(3 * slots);
        let config = GainConfig {
            gains: (0..amps).map(|k| num(g0 + k)).collect::<Result<_, _>>()?,
            tilts: (0..amps).map(|k| num(t0 + k)).collect::<Result<_, _>>()?,
        };
        let amplifiers = (0..amps)
            .map(|k| {
                Ok(AmpReading {
                    input_dbm: num(a0 + 2 * k)?,
                    output_dbm: num(a0 + 2 * k + 1)?,
                })
            })
            .collect::<Result<_, CsvError>>()?;
        let osc_alive = (0..spans)
            .map(|s| match cells[o0 + s] {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(err(format!("bad osc flag `{other}`"))),
            })
            .collect::<Result<_, _>>()?;
        let mut channels = Vec::new();
        for slot in 0..slots {
            let base = c0 + 3 * slot;
            let is_real = match cells[base] {
                "-" => continue,
                "d" => false,
                "r" => true,
                other => return Err(err(format!("bad channel kind `{other}`"))),
            };
            let q_db = if cells[base + 2].is_empty() {
                None
            } else {
                Some(num(base + 2)?)
            };
            channels.push(ChannelReading {
                slot,
                is_real,
                power_dbm: num(base + 1)?,
                q_db,
            });
        }
        records.push(TelemetryRecord {
            tick,
            config,
            amplifiers,
            osc_alive,
            channels,
        });
    }
    Ok(records)
}
