//! Strict line grammar for backend output.
//!
//! ```text
//! THOUGHT: free text
//! ACTION: <name> <arg> <arg> ...
//! ```

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("no ACTION line")]
    Empty,
    #[error("line {line}: expected `THOUGHT:` or `ACTION:`")]
    UnknownLine { line: usize },
    #[error("line {line}: bad action name `{name}`")]
    BadName { line: usize, name: String },
    #[error("line {line}: non-printable argument")]
    BadArgument { line: usize },
    #[error("expected exactly one ACTION, found {0}")]
    TooManyActions(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub name: String,
    pub args: Vec<String>,
}

impl Action {
    pub fn new(name: &str, args: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn render(&self) -> String {
        if self.args.is_empty() {
            format!("ACTION: {}", self.name)
        } else {
            format!("ACTION: {} {}", self.name, self.args.join(" "))
        }
    }
}

/// An action with the thought that preceded it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct ThoughtAction {
    pub thought: Option<String>,
    pub action: Action,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

/// Parse every line; blank lines are ignored.
pub fn parse_steps(text: &str) -> Result<Vec<ThoughtAction>, GrammarError> {
    let mut out = Vec::new();
    let mut thought: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("THOUGHT:") {
            thought = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("ACTION:") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or("");
            if !valid_name(name) {
                return Err(GrammarError::BadName {
                    line: line_no,
                    name: name.to_string(),
                });
            }
            let args: Vec<String> = parts.map(str::to_string).collect();
            if args.iter().any(|a| !a.chars().all(|c| c.is_ascii_graphic())) {
                return Err(GrammarError::BadArgument { line: line_no });
            }
            out.push(ThoughtAction {
                thought: thought.take(),
                action: Action {
                    name: name.to_string(),
                    args,
                },
            });
        } else {
            return Err(GrammarError::UnknownLine { line: line_no });
        }
    }
    if out.is_empty() {
        return Err(GrammarError::Empty);
    }
    Ok(out)
}

/// Exactly one action, optionally with a thought.
pub fn parse_action(text: &str) -> Result<ThoughtAction, GrammarError> {
    let mut steps = parse_steps(text)?;
    if steps.len() != 1 {
        return Err(GrammarError::TooManyActions(steps.len()));
    }
    Ok(steps.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_thought_action_pairs() {
        let steps = parse_steps("THOUGHT: look\nACTION: retrieve-docs fiber loss\n\nACTION: sync-twin\n").unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].thought.as_deref(), Some("look"));
        assert_eq!(steps[0].action, Action::new("retrieve-docs", &["fiber", "loss"]));
        assert_eq!(steps[1].thought, None);
        assert_eq!(steps[1].action.render(), "ACTION: sync-twin");
    }

    #[test]
    fn rejects_malformed_text() {
        assert_eq!(parse_steps(""), Err(GrammarError::Empty));
        assert_eq!(parse_steps("sure, here you go"), Err(GrammarError::UnknownLine { line: 1 }));
        assert!(matches!(parse_steps("ACTION: Set_Gains 1"), Err(GrammarError::BadName { .. })));
        assert!(matches!(parse_steps("ACTION:"), Err(GrammarError::BadName { .. })));
        assert_eq!(
            parse_action("ACTION: a\nACTION: b"),
            Err(GrammarError::TooManyActions(2))
        );
    }
}
