//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! name canonical
//! seed 7
//! tick_ms 1
//! duration 1800
//! 0    establish 4
//! 300  cut 0
//! 1200 aging 2 0.1 6.0
//! ```

use thiserror::Error;

use super::{Event, EventKind, Scenario, ValidationError};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: ValidationError,
    },
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push(Token {
                    text: &line[s..i],
                    column: s + 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: s + 1,
        });
    }
    out
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario = Scenario {
        name: "unnamed".into(),
        seed: 0,
        tick_ms: 1,
        duration: 0,
        events: Vec::new(),
    };
    let mut duration = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        let Some(head) = tokens.first() else { continue };
        let err = |tok: &Token, message: String| ParseError {
            line,
            column: tok.column,
            message,
        };
        let arity = |want: usize| -> Result<(), ParseError> {
            if tokens.len() != want {
                let tok = tokens.get(want).unwrap_or(&tokens[tokens.len() - 1]);
                return Err(err(tok, format!("expected {} fields, found {}", want, tokens.len())));
            }
            Ok(())
        };
        let int = |tok: &Token| -> Result<u64, ParseError> {
            tok.text
                .parse::<u64>()
                .map_err(|_| err(tok, format!("expected a non-negative integer, found `{}`", tok.text)))
        };
        let real = |tok: &Token| -> Result<f64, ParseError> {
            tok.text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(tok, format!("expected a number, found `{}`", tok.text)))
        };
        match head.text {
            "name" => {
                arity(2)?;
                scenario.name = tokens[1].text.to_string();
            }
            "seed" => {
                arity(2)?;
                scenario.seed = int(&tokens[1])?;
            }
            "tick_ms" => {
                arity(2)?;
                scenario.tick_ms = int(&tokens[1])?;
            }
            "duration" => {
                arity(2)?;
                duration = Some(int(&tokens[1])?);
            }
            _ => {
                let at_tick = int(head)?;
                let kind_tok = tokens
                    .get(1)
                    .ok_or_else(|| err(head, "missing event kind".into()))?;
                let kind = match kind_tok.text {
                    "establish" => {
                        arity(3)?;
                        EventKind::EstablishBatches {
                            batches: int(&tokens[2])? as usize,
                        }
                    }
                    "load" => {
                        arity(3)?;
                        EventKind::SetLoad {
                            wavelengths: int(&tokens[2])? as usize,
                        }
                    }
                    "cut" => {
                        arity(3)?;
                        EventKind::FiberCut {
                            span: int(&tokens[2])? as usize,
                        }
                    }
                    "repair" => {
                        arity(3)?;
                        EventKind::RepairCut {
                            span: int(&tokens[2])? as usize,
                        }
                    }
                    "aging" => {
                        arity(5)?;
                        EventKind::AgingRamp {
                            span: int(&tokens[2])? as usize,
                            rate_db_per_tick: real(&tokens[3])?,
                            cap_db: real(&tokens[4])?,
                        }
                    }
                    other => return Err(err(kind_tok, format!("unknown event kind `{other}`")).into()),
                };
                let event = Event { at_tick, kind };
                event
                    .validate()
                    .map_err(|source| ScenarioError::Validation { line, source })?;
                scenario.events.push(event);
            }
        }
    }
    scenario.events.sort_by_key(|e| e.at_tick);
    let last = scenario.events.last().map_or(0, |e| e.at_tick);
    scenario.duration = duration.unwrap_or(last + 200);
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_a_valid_noop() {
        let s = load_scenario("# nothing\n\n").unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn events_are_sorted() {
        let s = load_scenario("50 repair 1\n10 cut 1\n").unwrap();
        assert_eq!(s.events[0].at_tick, 10);
        assert_eq!(s.duration, 250);
    }

    #[test]
    fn load_must_be_batch_multiple() {
        assert_eq!(
            load_scenario("0 load 17").unwrap_err(),
            ScenarioError::Validation {
                line: 1,
                source: ValidationError::BadLoad(17)
            }
        );
        assert!(matches!(
            load_scenario("0 cut 4"),
            Err(ScenarioError::Validation {
                source: ValidationError::BadSpan(4),
                ..
            })
        ));
        assert!(matches!(
            load_scenario("0 aging 1 -0.1 3"),
            Err(ScenarioError::Validation { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = load_scenario("seed 1\n10  explode 3\n").unwrap_err();
        assert_eq!(
            e,
            ScenarioError::Parse(ParseError {
                line: 2,
                column: 5,
                message: "unknown event kind `explode`".into()
            })
        );
        let e = load_scenario("x cut 0").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse(ParseError { line: 1, column: 1, .. })));
        let e = load_scenario("1 aging 0 fast 3").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse(ParseError { column: 11, .. })));
    }
}
