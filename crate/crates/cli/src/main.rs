//! `adon`: run lifecycle scenarios, compare optimizers, replay transcripts
//! and serve the control plane.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use adon::agent::transcript::{parse_jsonl, render};
use adon::agent::{react_optimize, Agent, AgentConfig, LlmBackend, ModeTable, ReactOptions, ScriptedPolicy};
use adon::control::{serve, LocalPort, RemotePort, Service};
use adon::lifecycle::{benchmark_instance, collect, drive, LifecycleOptions, LifecycleRun};
use adon::optimizer::{
    bayes_opt, brute_force, coordinate_ascent, default_grid, BayesOptions, CoordinateOptions, OptimizerReport,
    SearchSpace, TwinEnv,
};
use adon::gain::GainConfig;
use adon::scenario::{load_scenario, Scenario};
use adon::telemetry::DEFAULT_SIGMA_DB;

/// Input problems: exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(name = "adon", version, about = "Autonomous optical link lifecycle runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Scripted,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Brute,
    Bo,
    Coord,
    React,
}

#[derive(Subcommand)]
enum Command {
    /// Run a lifecycle scenario end to end and write its artifacts.
    Run {
        /// Built-in name (`canonical`) or scenario file path.
        #[arg(long, default_value = "canonical")]
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; must not exist yet.
        #[arg(long)]
        out: PathBuf,
        /// Overrides such as `load=llm-native,q_drop=rule-centric`.
        #[arg(long)]
        mode_table: Option<String>,
        #[arg(long, value_enum, default_value = "scripted")]
        backend: BackendChoice,
        /// JSON file with `endpoint` and `model` for the remote backend.
        #[arg(long)]
        backend_config: Option<PathBuf>,
        /// Run the agent against a control-plane server over TCP.
        #[arg(long)]
        serve: bool,
        /// Skip the grid-oracle comparison.
        #[arg(long)]
        no_oracle: bool,
    },
    /// Run one optimizer on the benchmark instance and write its trace.
    Optimize {
        #[arg(long, value_enum)]
        method: Method,
        /// Optimizer seed (Bayesian optimization).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluation budget (Bayesian optimization, reasoning loop).
        #[arg(long, default_value_t = 100)]
        budget: usize,
        /// Scenario whose plant is optimized.
        #[arg(long, default_value = "canonical")]
        scenario: String,
        /// Wavelengths carried by the benchmark instance.
        #[arg(long, default_value_t = 20)]
        load: usize,
        /// Trace CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a transcript as a plain-text report.
    Replay {
        transcript: PathBuf,
    },
    /// Serve the control plane for a scenario.
    Serve {
        #[arg(long, default_value = "canonical")]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Tick period; without it the clock moves only on request.
        #[arg(long)]
        tick_ms: Option<u64>,
    },
}

fn load_named_scenario(spec: &str, seed: Option<u64>) -> Result<Scenario> {
    let scenario = if spec == "canonical" {
        Scenario::canonical()
    } else {
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read scenario {}: {e}", path.display())))?;
        load_scenario(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    };
    Ok(match seed {
        Some(s) => scenario.with_seed(s),
        None => scenario,
    })
}

fn make_backend(choice: BackendChoice, config: Option<&Path>) -> Result<Box<dyn LlmBackend>> {
    match choice {
        BackendChoice::Scripted => Ok(Box::new(ScriptedPolicy::default())),
        BackendChoice::Remote => remote_backend(config),
    }
}

#[cfg(feature = "remote")]
fn remote_backend(config: Option<&Path>) -> Result<Box<dyn LlmBackend>> {
    use adon::agent::remote::{RemoteChat, RemoteConfig};
    let path = config.ok_or_else(|| usage("--backend remote needs --backend-config"))?;
    let cfg = RemoteConfig::load(path).map_err(|e| usage(e.to_string()))?;
    Ok(Box::new(RemoteChat::new(cfg).map_err(|e| usage(e.to_string()))?))
}

#[cfg(not(feature = "remote"))]
fn remote_backend(_config: Option<&Path>) -> Result<Box<dyn LlmBackend>> {
    Err(usage("this build has no remote backend; rebuild with `--features remote`"))
}

/// Write every file into a sibling staging directory, then rename it into place.
fn write_atomic_dir(out: &Path, files: &[(&str, String)]) -> Result<()> {
    if out.exists() {
        return Err(usage(format!("output directory {} already exists", out.display())));
    }
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let name = out.file_name().ok_or_else(|| usage(format!("bad output path {}", out.display())))?;
    let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
    let result = (|| {
        for (file, body) in files {
            fs::write(staging.join(file), body).with_context(|| format!("writing {file}"))?;
        }
        fs::rename(&staging, out).with_context(|| format!("moving output into {}", out.display()))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario_spec: &str,
    seed: Option<u64>,
    out: &Path,
    mode_table: Option<&str>,
    backend: BackendChoice,
    backend_config: Option<&Path>,
    serve_mode: bool,
    no_oracle: bool,
) -> Result<()> {
    if out.exists() {
        return Err(usage(format!("output directory {} already exists", out.display())));
    }
    let scenario = load_named_scenario(scenario_spec, seed)?;
    let table = match mode_table {
        Some(spec) => ModeTable::with_overrides(spec).map_err(|e| usage(e.to_string()))?,
        None => ModeTable::default(),
    };
    let options = LifecycleOptions {
        agent: AgentConfig {
            mode_table: table.clone(),
            ..AgentConfig::default()
        },
        brute_force: !no_oracle,
        ..LifecycleOptions::default()
    };
    let policy = make_backend(backend, backend_config)?;
    log::info!("running {} (seed {})", scenario.name, scenario.seed);

    let run: LifecycleRun = if serve_mode {
        let service = Arc::new(Mutex::new(Service::new(scenario.clone(), options.sigma_db)));
        let server = serve(Arc::clone(&service), "127.0.0.1:0", None).context("starting control-plane server")?;
        let port = RemotePort::connect(server.addr())?;
        let mut agent = Agent::new(port, policy, options.agent.clone())?;
        let snapshots = drive(&mut agent, scenario.duration, |_| {
            Some(service.lock().expect("service lock").plant().clone())
        })?;
        let truth = service.lock().expect("service lock").truth_trace().to_vec();
        let run = collect(&agent, scenario.clone(), truth, snapshots);
        drop(agent);
        server.shutdown();
        run
    } else {
        let service = Service::new(scenario.clone(), options.sigma_db);
        let mut agent = Agent::new(LocalPort::new(service), policy, options.agent.clone())?;
        let snapshots = drive(&mut agent, scenario.duration, |a| Some(a.port().service().plant().clone()))?;
        let truth = agent.port().service().truth_trace().to_vec();
        collect(&agent, scenario.clone(), truth, snapshots)
    };

    let summary = run.summarize(&options);
    let twin_report = json!({
        "stages": summary.twin_study,
        "agent_twin": run.twin,
    });
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = json!({
        "scenario": scenario.name,
        "scenario_source": scenario_spec,
        "seed": scenario.seed,
        "mode_table": table.entries,
        "backend": match backend { BackendChoice::Scripted => "scripted", BackendChoice::Remote => "remote" },
        "serve": serve_mode,
        "oracle": !no_oracle,
        "out": out.display().to_string(),
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
    });
    let pretty = |v: &serde_json::Value| serde_json::to_string_pretty(v).expect("json") + "\n";
    write_atomic_dir(
        out,
        &[
            ("telemetry.csv", run.telemetry_csv()),
            ("alarms.jsonl", run.alarms_jsonl()),
            ("transcripts.jsonl", run.transcript.to_jsonl()),
            ("q_trace.csv", run.q_trace_csv()),
            ("twin_report.json", pretty(&twin_report)),
            ("summary.json", pretty(&serde_json::to_value(&summary)?)),
            ("manifest.json", pretty(&manifest)),
        ],
    )?;
    let failed = summary.failed_tasks;
    println!(
        "{}: {} tasks ({} failed), mean oracle gap {}, artifacts in {}",
        scenario.name,
        summary.tasks,
        failed,
        summary.mean_gap_db.map_or("n/a".into(), |g| format!("{g:.3} dB")),
        out.display()
    );
    Ok(())
}

fn cmd_optimize(method: Method, seed: u64, budget: usize, scenario_spec: &str, load: usize, out: Option<&Path>) -> Result<()> {
    let scenario = load_named_scenario(scenario_spec, None)?;
    if load == 0 || load % adon::scenario::BATCH_SIZE != 0 || load > 30 {
        return Err(usage(format!("--load must be a positive multiple of 5 up to 30, got {load}")));
    }
    let state = benchmark_instance(&scenario, load);
    let mut env = TwinEnv::ground_truth(&state);
    let grid = default_grid(state.link.amplifiers.len());
    let init = GainConfig::flat(state.link.amplifiers.len(), 18.0);
    let coord = CoordinateOptions {
        include_tilts: false,
        ..CoordinateOptions::default()
    };
    let oracle = brute_force(&env, &grid)?;
    let report: OptimizerReport = match method {
        Method::Brute => oracle.clone(),
        Method::Bo => bayes_opt(
            &mut env,
            &SearchSpace::gains(state.link.amplifiers.len()),
            &BayesOptions {
                budget,
                seed,
                ..BayesOptions::default()
            },
        )?,
        Method::Coord => coordinate_ascent(&mut env, &init, &coord)?,
        Method::React => {
            react_optimize(
                &mut env,
                &mut ScriptedPolicy::new(coord),
                &init,
                &ReactOptions {
                    max_iters: budget.max(1) * 100,
                    ..ReactOptions::default()
                },
            )?
            .report
        }
    };
    let gap = oracle.best_value - report.best_value;
    let csv = report.trace_csv(Some(gap));
    match out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "{}: best {:.4} dB after {} evaluations; oracle {:.4} dB; gap {gap:.4} dB",
        report.method, report.best_value, report.evaluations, oracle.best_value
    );
    Ok(())
}

fn cmd_replay(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let entries = parse_jsonl(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    print!("{}", render(&entries));
    Ok(())
}

fn cmd_serve(scenario_spec: &str, seed: Option<u64>, addr: &str, tick_ms: Option<u64>) -> Result<()> {
    let scenario = load_named_scenario(scenario_spec, seed)?;
    let service = Arc::new(Mutex::new(Service::new(scenario, DEFAULT_SIGMA_DB)));
    let server = serve(Arc::clone(&service), addr, tick_ms.map(Duration::from_millis))
        .map_err(|e| usage(format!("cannot listen on {addr}: {e}")))?;
    println!("listening on {}", server.addr());
    loop {
        std::thread::sleep(Duration::from_millis(200));
        if tick_ms.is_some() && service.lock().map_err(|_| anyhow!("service lock poisoned"))?.is_finished() {
            break;
        }
    }
    server.shutdown();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            mode_table,
            backend,
            backend_config,
            serve,
            no_oracle,
        } => cmd_run(
            &scenario,
            seed,
            &out,
            mode_table.as_deref(),
            backend,
            backend_config.as_deref(),
            serve,
            no_oracle,
        ),
        Command::Optimize {
            method,
            seed,
            budget,
            scenario,
            load,
            out,
        } => {
            if budget == 0 {
                bail!(usage("--budget must be positive"));
            }
            cmd_optimize(method, seed, budget, &scenario, load, out.as_deref())
        }
        Command::Replay { transcript } => cmd_replay(&transcript),
        Command::Serve {
            scenario,
            seed,
            addr,
            tick_ms,
        } => cmd_serve(&scenario, seed, &addr, tick_ms),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
