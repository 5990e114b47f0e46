//! Plans, the tool registry they are validated against, and stored workflows.

use serde::{Deserialize, Serialize};

use super::grammar::ThoughtAction;

/// Upper bound on plan length.
pub const MAX_PLAN_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgKind {
    Int,
    Real,
    /// Free words; consumes the rest of the line.
    Words,
}

/// Registry entry: tool name and argument schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: &'static str,
    pub required: &'static [(&'static str, ArgKind)],
    pub optional: &'static [(&'static str, ArgKind)],
    pub summary: &'static str,
}

impl ToolSpec {
    pub fn signature(&self) -> String {
        let mut s = self.name.to_string();
        for (n, k) in self.required {
            s.push_str(&format!(" <{n}:{}>", kind_name(*k)));
        }
        for (n, k) in self.optional {
            s.push_str(&format!(" [{n}:{}]", kind_name(*k)));
        }
        format!("{s}  -- {}", self.summary)
    }

    fn check(&self, args: &[String]) -> Result<(), String> {
        let words = self
            .required
            .iter()
            .chain(self.optional)
            .any(|(_, k)| *k == ArgKind::Words);
        let max = self.required.len() + self.optional.len();
        if args.len() < self.required.len() || (!words && args.len() > max) {
            return Err(format!("`{}` takes {}..={} arguments, got {}", self.name, self.required.len(), max, args.len()));
        }
        for ((n, kind), a) in self.required.iter().chain(self.optional).zip(args) {
            let ok = match kind {
                ArgKind::Int => a.parse::<u64>().is_ok(),
                ArgKind::Real => a.parse::<f64>().is_ok_and(f64::is_finite),
                ArgKind::Words => true,
            };
            if !ok {
                return Err(format!("`{}`: argument {n} = `{a}` is not {}", self.name, kind_name(*kind)));
            }
        }
        Ok(())
    }
}

fn kind_name(k: ArgKind) -> &'static str {
    match k {
        ArgKind::Int => "int",
        ArgKind::Real => "real",
        ArgKind::Words => "words",
    }
}

pub const TOOLS: &[ToolSpec] = &[
    ToolSpec {
        name: "retrieve-docs",
        required: &[("query", ArgKind::Words)],
        optional: &[],
        summary: "search manuals and datasheets",
    },
    ToolSpec {
        name: "localize-failure",
        required: &[],
        optional: &[],
        summary: "find the failed span and failure kind",
    },
    ToolSpec {
        name: "generate-recovery",
        required: &[],
        optional: &[],
        summary: "replace the remaining steps with a recovery plan",
    },
    ToolSpec {
        name: "optimize-power",
        required: &[],
        optional: &[],
        summary: "coordinate ascent on the twin, apply the best gains",
    },
    ToolSpec {
        name: "sync-twin",
        required: &[],
        optional: &[],
        summary: "align twin parameters with the latest telemetry",
    },
    ToolSpec {
        name: "fit-twin",
        required: &[],
        optional: &[],
        summary: "calibrate the twin on recent telemetry",
    },
    ToolSpec {
        name: "probe-configs",
        required: &[],
        optional: &[("delta_db", ArgKind::Real)],
        summary: "step each amplifier gain up and down for one tick",
    },
    ToolSpec {
        name: "set-load",
        required: &[("wavelengths", ArgKind::Int)],
        optional: &[],
        summary: "add or drop channels to reach a load",
    },
    ToolSpec {
        name: "adjust-gain",
        required: &[("amplifier", ArgKind::Int), ("gain_db", ArgKind::Real)],
        optional: &[],
        summary: "set one amplifier gain",
    },
    ToolSpec {
        name: "wait-for-repair",
        required: &[],
        optional: &[("max_ticks", ArgKind::Int)],
        summary: "block until every span is lit again",
    },
    ToolSpec {
        name: "track-aging",
        required: &[("span", ArgKind::Int)],
        optional: &[],
        summary: "follow a degrading span and compensate until it settles",
    },
    ToolSpec {
        name: "observe",
        required: &[("ticks", ArgKind::Int)],
        optional: &[],
        summary: "let the clock run while monitoring",
    },
    ToolSpec {
        name: "react-optimize",
        required: &[],
        optional: &[("max_iters", ArgKind::Int)],
        summary: "tune gains directly on the live link in a reasoning loop",
    },
];

pub fn tool(name: &str) -> Option<&'static ToolSpec> {
    TOOLS.iter().find(|t| t.name == name)
}

pub fn tool_signatures() -> Vec<String> {
    TOOLS.iter().map(ToolSpec::signature).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub tool: String,
    pub args: Vec<String>,
    pub rationale: String,
}

impl PlanStep {
    pub fn new(tool: &str, args: &[String], rationale: &str) -> Self {
        Self {
            tool: tool.to_string(),
            args: args.to_vec(),
            rationale: rationale.to_string(),
        }
    }

    /// Check against the registry.
    pub fn validate(&self) -> Result<(), String> {
        tool(&self.tool)
            .ok_or_else(|| format!("unknown tool `{}`", self.tool))?
            .check(&self.args)
    }

    pub fn render(&self) -> String {
        if self.args.is_empty() {
            self.tool.clone()
        } else {
            format!("{} {}", self.tool, self.args.join(" "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    /// `workflow:<name>`, `backend` or `recovery`.
    pub origin: String,
}

impl Plan {
    pub fn empty(origin: &str) -> Self {
        Self {
            steps: Vec::new(),
            origin: origin.to_string(),
        }
    }

    /// Validate parsed backend output.
    pub fn from_actions(actions: &[ThoughtAction], origin: &str) -> Result<Self, String> {
        if actions.len() > MAX_PLAN_STEPS {
            return Err(format!("plan has {} steps (limit {MAX_PLAN_STEPS})", actions.len()));
        }
        let steps: Vec<PlanStep> = actions
            .iter()
            .map(|ta| PlanStep {
                tool: ta.action.name.clone(),
                args: ta.action.args.clone(),
                rationale: ta.thought.clone().unwrap_or_default(),
            })
            .collect();
        for s in &steps {
            s.validate()?;
        }
        Ok(Self {
            steps,
            origin: origin.to_string(),
        })
    }
}

/// Pre-defined workflows for rule-centric operation.
#[derive(Debug, Clone, Default)]
pub struct WorkflowStore;

impl WorkflowStore {
    pub const NAMES: [&'static str; 3] = ["link-bring-up", "wavelength-change", "failure-recovery"];

    /// The workflow for `name`, with `{wavelengths}` substituted.
    pub fn fetch(&self, name: &str, wavelengths: Option<usize>) -> Option<Plan> {
        let s = |tool: &str, args: Vec<String>, why: &str| PlanStep::new(tool, &args, why);
        let calibrate_and_optimize = || {
            vec![
                s("probe-configs", vec![], "excite each amplifier to refresh calibration data"),
                s("fit-twin", vec![], "calibrate the twin on recent telemetry"),
                s("optimize-power", vec![], "search gains on the twin and apply the best"),
                s("sync-twin", vec![], "align the twin with the new state"),
            ]
        };
        let steps = match name {
            "link-bring-up" => calibrate_and_optimize(),
            "wavelength-change" => {
                let mut v = vec![s(
                    "set-load",
                    vec![wavelengths?.to_string()],
                    "apply the requested channel load",
                )];
                v.extend(calibrate_and_optimize());
                v
            }
            "failure-recovery" => vec![
                s(
                    "retrieve-docs",
                    vec!["failure".into(), "playbook".into(), "span".into(), "loss".into()],
                    "collect the failure playbook",
                ),
                s("localize-failure", vec![], "apply the datasheet comparison rule"),
                s("generate-recovery", vec![], "derive recovery actions"),
                s("optimize-power", vec![], "re-optimize amplifier gains"),
                s("sync-twin", vec![], "synchronize the digital twin"),
            ],
            _ => return None,
        };
        Some(Plan {
            steps,
            origin: format!("workflow:{name}"),
        })
    }
}
