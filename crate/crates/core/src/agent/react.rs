//! Thought-action-observation loop that lets a backend tune gains directly.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backend::{format_gains, parse_gains, LlmBackend, Prompt, PromptKind};
use super::grammar::parse_action;
use super::AgentError;
use crate::gain::{GainConfig, GAIN_MAX_DB, GAIN_MIN_DB};
use crate::optimizer::{Objective, ObjectiveSample, OptimizerReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactOptions {
    /// Valid actions allowed before stopping.
    pub max_iters: usize,
    /// Consecutive malformed answers tolerated.
    pub max_strikes: usize,
}

impl Default for ReactOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            max_strikes: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReactEnd {
    Finished,
    IterLimit,
}

/// One backend answer and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactTurn {
    pub raw: String,
    pub action: Option<String>,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactOutcome {
    pub report: OptimizerReport,
    pub turns: Vec<ReactTurn>,
    pub end: ReactEnd,
}

const ALLOWED: [&str; 2] = [
    "set_gains <g1,...,gN>  -- evaluate these gains (dB, comma separated)",
    "finish  -- stop and keep the best configuration seen",
];

/// Drive `env` with actions chosen by `backend`, starting from `init`.
///
/// Tilts stay at their initial values. Out-of-bounds gains are reported back
/// and never evaluated.
pub fn react_optimize<E, B>(
    env: &mut E,
    backend: &mut B,
    init: &GainConfig,
    options: &ReactOptions,
) -> Result<ReactOutcome, AgentError>
where
    E: Objective + ?Sized,
    B: LlmBackend + ?Sized,
{
    let start = Instant::now();
    let n = init.len();
    let mut context = format!(
        "BOUNDS gain_min={GAIN_MIN_DB} gain_max={GAIN_MAX_DB} amplifiers={n}\nINIT gains={}\n",
        format_gains(&init.gains)
    );
    let allowed: Vec<String> = ALLOWED.iter().map(|s| s.to_string()).collect();
    let mut trace: Vec<ObjectiveSample> = Vec::new();
    let mut turns = Vec::new();
    let mut strikes = 0;
    let mut iters = 0;
    let mut end = ReactEnd::IterLimit;
    let mut observed = 0;

    while iters < options.max_iters {
        let prompt = Prompt::new(PromptKind::React, context.clone(), allowed.clone());
        let raw = backend.complete(&prompt).map_err(|e| AgentError::Backend(e.to_string()))?;
        let parsed = parse_action(&raw).map_err(|e| e.to_string()).and_then(|ta| {
            let a = ta.action;
            match (a.name.as_str(), a.args.as_slice()) {
                ("finish", []) => Ok(None),
                ("set_gains", [list]) => match parse_gains(list) {
                    Some(g) if g.len() == n && g.iter().all(|v| v.is_finite()) => Ok(Some(g)),
                    _ => Err(format!("set_gains needs {n} numbers")),
                },
                _ => Err(format!("unknown action `{}`", a.render())),
            }
        });
        let gains = match parsed {
            Ok(g) => g,
            Err(why) => {
                strikes += 1;
                turns.push(ReactTurn {
                    raw: raw.clone(),
                    action: None,
                    observation: format!("malformed: {why}"),
                });
                if strikes >= options.max_strikes {
                    return Err(AgentError::MalformedAction(raw));
                }
                let _ = writeln!(context, "ERROR malformed action: {why}");
                continue;
            }
        };
        strikes = 0;
        iters += 1;
        let Some(gains) = gains else {
            turns.push(ReactTurn {
                raw,
                action: Some("finish".into()),
                observation: "finished".into(),
            });
            end = ReactEnd::Finished;
            break;
        };
        let action = format!("set_gains {}", format_gains(&gains));
        let observation = if let Some((k, g)) = gains
            .iter()
            .enumerate()
            .find(|(_, g)| !(GAIN_MIN_DB..=GAIN_MAX_DB).contains(*g))
        {
            format!("gains={} rejected=amplifier_{k}_gain_{g}_outside_bounds", format_gains(&gains))
        } else {
            let config = init.with_gains(&gains);
            match env.evaluate(&config) {
                Ok(v) => {
                    trace.push(ObjectiveSample {
                        config,
                        value: v,
                        index: trace.len(),
                    });
                    format!("gains={} min_q={v}", format_gains(&gains))
                }
                Err(e) => format!("gains={} error={}", format_gains(&gains), e.to_string().replace(' ', "_")),
            }
        };
        let _ = writeln!(context, "OBSERVATION {observed} {observation}");
        observed += 1;
        turns.push(ReactTurn {
            raw,
            action: Some(action),
            observation,
        });
    }

    if trace.is_empty() {
        let v = env.evaluate(init)?;
        trace.push(ObjectiveSample {
            config: init.clone(),
            value: v,
            index: 0,
        });
    }
    let mut report = OptimizerReport::from_trace("react", trace, start.elapsed());
    report.wall_time = start.elapsed();
    Ok(ReactOutcome { report, turns, end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::backend::{FnBackend, ScriptedPolicy};
    use crate::optimizer::{coordinate_ascent, CoordinateOptions, ObjectiveError};

    struct Bowl;
    impl Objective for Bowl {
        fn evaluate(&mut self, c: &GainConfig) -> Result<f64, ObjectiveError> {
            Ok(-c.gains.iter().enumerate().map(|(i, g)| (g - 15.0 - i as f64).powi(2)).sum::<f64>())
        }
    }

    #[test]
    fn scripted_policy_reproduces_coordinate_ascent() {
        let init = GainConfig::flat(4, 18.0);
        let opts = CoordinateOptions {
            include_tilts: false,
            ..CoordinateOptions::default()
        };
        let reference = coordinate_ascent(&mut Bowl, &init, &opts).unwrap();
        let out = react_optimize(
            &mut Bowl,
            &mut ScriptedPolicy::new(opts),
            &init,
            &ReactOptions {
                max_iters: 10_000,
                ..ReactOptions::default()
            },
        )
        .unwrap();
        assert_eq!(out.end, ReactEnd::Finished);
        assert_eq!(out.report.trace, reference.trace);
        assert_eq!(out.report.best_config, reference.best_config);
    }

    #[test]
    fn immediate_finish_reports_init() {
        let init = GainConfig::flat(2, 18.0);
        let out = react_optimize(&mut Bowl, &mut FnBackend(|_: &Prompt| "ACTION: finish".to_string()), &init, &ReactOptions::default())
            .unwrap();
        assert_eq!(out.report.best_config, init);
        assert_eq!(out.report.evaluations, 1);
    }

    #[test]
    fn bounds_violations_are_not_applied_and_garbage_aborts() {
        let init = GainConfig::flat(2, 18.0);
        let mut answers = vec!["ACTION: set_gains 26,18".to_string(), "ACTION: finish".to_string()].into_iter();
        let out = react_optimize(
            &mut Bowl,
            &mut FnBackend(move |_: &Prompt| answers.next().unwrap()),
            &init,
            &ReactOptions::default(),
        )
        .unwrap();
        assert!(out.turns[0].observation.contains("rejected"));
        assert_eq!(out.report.evaluations, 1);

        let err = react_optimize(&mut Bowl, &mut FnBackend(|_: &Prompt| "hello".to_string()), &init, &ReactOptions::default());
        assert!(matches!(err, Err(AgentError::MalformedAction(_))));
    }

    #[test]
    fn iteration_limit_is_normal_completion() {
        let init = GainConfig::flat(3, 18.0);
        let out = react_optimize(&mut Bowl, &mut ScriptedPolicy::default(), &init, &ReactOptions::default()).unwrap();
        assert_eq!(out.end, ReactEnd::IterLimit);
        assert_eq!(out.report.evaluations, 20);
    }
}
