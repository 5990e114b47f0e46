//! Plain-text link description: one `key = value` per line, `#` comments.
//!
//! ```text
//! launch_power_dbm = -20
//! span.*.length_km = 110
//! span.2.attenuation_db_per_km = 0.21
//! amp.0.noise_figure_db = 5.5
//! grid.slot_count = 30
//! ```

use thiserror::Error;

use super::{Amplifier, ChannelGrid, LinkTopology, Span};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkFileError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("line {line}: index {index} out of range for `{key}`")]
    BadIndex { line: usize, key: String, index: usize },
    #[error("resulting link is inconsistent: {0}")]
    Invalid(String),
}

/// Parse a link file on top of the default topology.
pub fn parse_link_file(text: &str) -> Result<LinkTopology, LinkFileError> {
    let mut link = LinkTopology::default();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(LinkFileError::Syntax { line: line_no })?;
        apply_key(&mut link, key, value, line_no)?;
    }
    if !link.is_valid() {
        return Err(LinkFileError::Invalid(
            "spans/amplifiers/grid violate topology invariants".into(),
        ));
    }
    Ok(link)
}

fn apply_key(link: &mut LinkTopology, key: &str, value: &str, line: usize) -> Result<(), LinkFileError> {
    let num = || -> Result<f64, LinkFileError> {
        value.parse::<f64>().map_err(|_| LinkFileError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        })
    };
    let unknown = || LinkFileError::UnknownKey {
        line,
        key: key.to_string(),
    };
    let parts: Vec<&str> = key.split('.').collect();
    match parts.as_slice() {
        ["launch_power_dbm"] => link.launch_power_dbm = num()?,
        ["q_offset_db"] => link.q_offset_db = num()?,
        ["gsnr_cap_db"] => link.gsnr_cap_db = num()?,
        ["constants", "planck"] => link.constants.planck = num()?,
        ["constants", "reference_bandwidth_hz"] => link.constants.reference_bandwidth = num()?,
        ["grid", field] => {
            let v = num()?;
            let grid = &mut link.grid;
            match *field {
                "slot_count" => {
                    let count = v as usize;
                    let mut fresh = ChannelGrid::empty(count);
                    fresh.spacing = grid.spacing;
                    fresh.anchor_frequency = grid.anchor_frequency;
                    fresh.channel_bandwidth = grid.channel_bandwidth;
                    *grid = fresh;
                }
                "spacing_hz" => grid.spacing = v,
                "anchor_hz" => grid.anchor_frequency = v,
                "channel_bandwidth_hz" => grid.channel_bandwidth = v,
                _ => return Err(unknown()),
            }
        }
        ["span", index, field] => {
            let v = num()?;
            let targets = indices(index, link.spans.len(), key, line)?;
            for i in targets {
                set_span(&mut link.spans[i], field, v).ok_or_else(unknown)?;
            }
        }
        ["amp", index, field] => {
            let v = num()?;
            let targets = indices(index, link.amplifiers.len(), key, line)?;
            for i in targets {
                set_amp(&mut link.amplifiers[i], field, v).ok_or_else(unknown)?;
            }
        }
        _ => return Err(unknown()),
    }
    Ok(())
}

fn indices(index: &str, len: usize, key: &str, line: usize) -> Result<Vec<usize>, LinkFileError> {
    if index == "*" {
        return Ok((0..len).collect());
    }
    let i: usize = index.parse().map_err(|_| LinkFileError::BadValue {
        line,
        key: key.to_string(),
        value: index.to_string(),
    })?;
    if i >= len {
        return Err(LinkFileError::BadIndex {
            line,
            key: key.to_string(),
            index: i,
        });
    }
    Ok(vec![i])
}

fn set_span(span: &mut Span, field: &str, v: f64) -> Option<()> {
    match field {
        "length_km" => span.length_km = v,
        "attenuation_db_per_km" => span.attenuation_db_per_km = v,
        "extra_loss_db" => span.extra_loss_db = v,
        "beta2_ps2_per_km" => span.beta2_ps2_per_km = v,
        "gamma_per_w_km" => span.gamma_per_w_km = v,
        _ => return None,
    }
    Some(())
}

fn set_amp(amp: &mut Amplifier, field: &str, v: f64) -> Option<()> {
    match field {
        "gain_db" => amp.gain_db = v,
        "tilt_db" => amp.tilt_db = v,
        "noise_figure_db" => amp.noise_figure_db = v,
        _ => return None,
    }
    Some(())
}
