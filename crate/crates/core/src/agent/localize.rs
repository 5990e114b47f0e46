//! Failure evidence, the span localization rule, and recovery planning.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::backend::field;
use super::plan::{Plan, PlanStep};
use crate::control::DeviceConfig;
use crate::gain::GAIN_MIN_DB;
use crate::telemetry::{Alarm, TelemetryRecord};
use crate::twin::TwinParameters;

/// Excess of measured over datasheet span loss that counts as aging, dB.
pub const AGING_EXCESS_DB: f64 = 2.0;
/// Highest gain a recovery plan will request, leaving 1 dB of headroom.
pub const RECOVERY_GAIN_CAP_DB: f64 = 24.0;
/// Records averaged per span reading.
pub const EVIDENCE_RECORDS: usize = 5;
/// Far-end input below which a lit span counts as dark, dBm.
const DARK_INPUT_DBM: f64 = crate::telemetry::LOS_INPUT_DBM;
const LIT_OUTPUT_DBM: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Cut,
    Aging,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Cut => "cut",
            FailureKind::Aging => "aging",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cut" => Some(FailureKind::Cut),
            "aging" => Some(FailureKind::Aging),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub span: usize,
    pub kind: FailureKind,
    /// Measured minus datasheet loss at the time of the claim.
    pub excess_db: f64,
}

/// Averaged optical readings around one span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanEvidence {
    pub span: usize,
    pub osc_alive: bool,
    /// Upstream amplifier output, dBm.
    pub out_dbm: f64,
    /// Downstream amplifier input, dBm.
    pub in_dbm: f64,
    /// Attenuation times length.
    pub datasheet_db: f64,
}

impl SpanEvidence {
    pub fn measured_loss_db(&self) -> f64 {
        self.out_dbm - self.in_dbm
    }

    pub fn excess_db(&self) -> f64 {
        self.measured_loss_db() - self.datasheet_db
    }

    pub fn render(&self) -> String {
        format!(
            "SPAN {} osc={} out_dbm={:.3} in_dbm={:.3} datasheet_db={:.3}",
            self.span,
            if self.osc_alive { "alive" } else { "dead" },
            self.out_dbm,
            self.in_dbm,
            self.datasheet_db
        )
    }

    fn dark_signature(&self) -> bool {
        !self.osc_alive || (self.in_dbm < DARK_INPUT_DBM && self.out_dbm >= LIT_OUTPUT_DBM)
    }
}

/// Per-span readings averaged over the latest records that share the newest
/// record's OSC state and configuration.
pub fn span_evidence(records: &[TelemetryRecord], device: &DeviceConfig) -> Vec<SpanEvidence> {
    let Some(latest) = records.last() else {
        return Vec::new();
    };
    let same: Vec<&TelemetryRecord> = records
        .iter()
        .rev()
        .filter(|r| r.osc_alive == latest.osc_alive && r.config == latest.config)
        .take(EVIDENCE_RECORDS)
        .collect();
    let n = same.len() as f64;
    device
        .spans
        .iter()
        .enumerate()
        .filter(|(s, _)| s + 1 < latest.amplifiers.len())
        .map(|(s, sp)| SpanEvidence {
            span: s,
            osc_alive: latest.osc_alive.get(s).copied().unwrap_or(true),
            out_dbm: same.iter().map(|r| r.amplifiers[s].output_dbm).sum::<f64>() / n,
            in_dbm: same.iter().map(|r| r.amplifiers[s + 1].input_dbm).sum::<f64>() / n,
            datasheet_db: sp.attenuation_db_per_km * sp.length_km,
        })
        .collect()
}

/// Inverse of [`SpanEvidence::render`] over every `SPAN` line in `text`.
pub fn parse_span_lines(text: &str) -> Vec<SpanEvidence> {
    text.lines()
        .filter_map(|l| {
            let rest = l.trim().strip_prefix("SPAN ")?;
            let span = rest.split_whitespace().next()?.parse().ok()?;
            Some(SpanEvidence {
                span,
                osc_alive: field(rest, "osc")? == "alive",
                out_dbm: field(rest, "out_dbm")?.parse().ok()?,
                in_dbm: field(rest, "in_dbm")?.parse().ok()?,
                datasheet_db: field(rest, "datasheet_db")?.parse().ok()?,
            })
        })
        .collect()
}

/// First span, in chain order, that is dark or lossier than its datasheet
/// by more than [`AGING_EXCESS_DB`].
pub fn localization_rule(spans: &[SpanEvidence]) -> Option<Localization> {
    spans.iter().find_map(|s| {
        if !s.osc_alive {
            Some(Localization {
                span: s.span,
                kind: FailureKind::Cut,
                excess_db: s.excess_db(),
            })
        } else if s.excess_db() > AGING_EXCESS_DB {
            Some(Localization {
                span: s.span,
                kind: FailureKind::Aging,
                excess_db: s.excess_db(),
            })
        } else {
            None
        }
    })
}

/// Reject claims the telemetry contradicts.
pub fn cross_check(claim: &Localization, spans: &[SpanEvidence]) -> Result<(), String> {
    let s = spans
        .iter()
        .find(|s| s.span == claim.span)
        .ok_or_else(|| format!("no span {}", claim.span))?;
    match claim.kind {
        FailureKind::Cut if !s.dark_signature() => {
            Err(format!("span {} shows no loss-of-signal signature", s.span))
        }
        FailureKind::Aging if !s.osc_alive => Err(format!("span {} is dark, not aged", s.span)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceChunk {
    pub doc_id: String,
    pub score: f64,
    pub excerpt: String,
}

/// Everything handed to the localizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub tick: u64,
    pub alarms: Vec<Alarm>,
    pub log_lines: Vec<String>,
    pub chunks: Vec<EvidenceChunk>,
    pub spans: Vec<SpanEvidence>,
}

impl Evidence {
    pub fn render(&self) -> String {
        let mut s = format!("TICK {}\n", self.tick);
        for a in &self.alarms {
            let _ = write!(s, "ALARM {} tick={}", a.kind.name(), a.tick);
            if let Some(span) = a.detail.span {
                let _ = write!(s, " span={span}");
            }
            let _ = writeln!(s, " note={}", a.detail.note.replace(char::is_whitespace, "_"));
        }
        for l in &self.log_lines {
            let _ = writeln!(s, "LOG {l}");
        }
        for c in &self.chunks {
            let _ = writeln!(
                s,
                "DOC {} score={:.4} {}",
                c.doc_id,
                c.score,
                c.excerpt.split_whitespace().collect::<Vec<_>>().join(" ")
            );
        }
        for sp in &self.spans {
            s.push_str(&sp.render());
            s.push('\n');
        }
        s
    }
}

/// Recovery steps for an accepted localization.
///
/// Aging raises the amplifier after the span by the loss not yet explained by
/// the twin, capped at [`RECOVERY_GAIN_CAP_DB`], then tracks the span and
/// re-optimizes. A cut waits for the repair before touching any gain.
pub fn generate_recovery(
    loc: &Localization,
    twin: &TwinParameters,
    device: &DeviceConfig,
    spans: &[SpanEvidence],
) -> Plan {
    let steps = match loc.kind {
        FailureKind::Cut => vec![
            PlanStep::new("wait-for-repair", &[], "no gain change helps a dark span"),
            PlanStep::new("optimize-power", &[], "re-optimize once light is back"),
            PlanStep::new("sync-twin", &[], "align the twin after the repair"),
        ],
        FailureKind::Aging => {
            let amp = loc.span + 1;
            let measured = spans
                .iter()
                .find(|s| s.span == loc.span)
                .map_or(loc.excess_db, SpanEvidence::excess_db);
            let known = twin.extra_loss_db.get(loc.span).copied().unwrap_or(0.0);
            let excess = (measured - known).max(0.0);
            let current = device.amplifiers[amp].gain_db;
            let target = (current + excess).clamp(GAIN_MIN_DB, RECOVERY_GAIN_CAP_DB.max(current));
            vec![
                PlanStep::new(
                    "adjust-gain",
                    &[amp.to_string(), format!("{target}")],
                    &format!("compensate {excess:.2} dB of new loss on span {}", loc.span),
                ),
                PlanStep::new("track-aging", &[loc.span.to_string()], "follow the degrading span"),
                PlanStep::new("optimize-power", &[], "refine all gains on the updated twin"),
                PlanStep::new("sync-twin", &[], "align the twin with the recovered state"),
            ]
        }
    };
    Plan {
        steps,
        origin: "recovery".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::LinkTopology;

    fn span(s: usize, alive: bool, loss: f64) -> SpanEvidence {
        SpanEvidence {
            span: s,
            osc_alive: alive,
            out_dbm: 1.0,
            in_dbm: 1.0 - loss,
            datasheet_db: 22.0,
        }
    }

    #[test]
    fn rule_and_render_round_trip() {
        let spans = vec![span(0, true, 22.4), span(1, true, 23.1), span(2, true, 28.0), span(3, true, 22.0)];
        let text: String = spans.iter().map(|s| s.render() + "\n").collect();
        let parsed = parse_span_lines(&text);
        assert_eq!(parsed.len(), 4);
        let loc = localization_rule(&parsed).unwrap();
        assert_eq!((loc.span, loc.kind), (2, FailureKind::Aging));
        assert!(localization_rule(&spans[..2]).is_none());
        let cut = vec![span(0, true, 22.0), span(1, false, 80.0)];
        assert_eq!(localization_rule(&cut).unwrap().kind, FailureKind::Cut);
    }

    #[test]
    fn cut_claim_needs_los_signature() {
        let spans = vec![span(0, true, 22.0), span(1, false, 80.0)];
        let wrong = Localization {
            span: 0,
            kind: FailureKind::Cut,
            excess_db: 0.0,
        };
        assert!(cross_check(&wrong, &spans).is_err());
        assert!(cross_check(&Localization { span: 1, ..wrong }, &spans).is_ok());
        assert!(cross_check(&Localization { span: 7, ..wrong }, &spans).is_err());
    }

    #[test]
    fn aging_recovery_raises_downstream_gain_with_cap() {
        let mut link = LinkTopology::default();
        for a in &mut link.amplifiers {
            a.gain_db = 18.0;
        }
        let device = DeviceConfig::from_link(&link, 0, 0);
        let twin = TwinParameters {
            extra_loss_db: vec![0.3, 0.4, 0.5, 0.2],
            ..TwinParameters::default()
        };
        // span 2 carries its known 0.5 dB plus 6 dB of aging
        let spans = vec![span(2, true, 22.0 + 0.5 + 6.0)];
        let loc = localization_rule(&spans).unwrap();
        let plan = generate_recovery(&loc, &twin, &device, &spans);
        assert_eq!(plan.steps[0].tool, "adjust-gain");
        assert_eq!(plan.steps[0].args, vec!["3".to_string(), "24".to_string()]);
        let small = vec![span(2, true, 22.0 + 0.5 + 2.5)];
        let plan = generate_recovery(&localization_rule(&small).unwrap(), &twin, &device, &small);
        assert_eq!(plan.steps[0].args[1].parse::<f64>().unwrap(), 20.5);
        let cut = Localization {
            span: 1,
            kind: FailureKind::Cut,
            excess_db: 50.0,
        };
        assert_eq!(generate_recovery(&cut, &twin, &device, &[]).steps[0].tool, "wait-for-repair");
    }
}
