use adon::agent::transcript::{parse_jsonl, render};
use adon::agent::{
    react_optimize, Agent, AgentConfig, CountingBackend, DocumentStore, EntryKind, FailureKind, FnBackend, LlmBackend,
    ModeTable, OperationMode, Prompt, PromptKind, ReactOptions, ScriptedPolicy,
};
use adon::control::{LocalPort, NetworkPort, Service};
use adon::gain::GainConfig;
use adon::lifecycle::{benchmark_instance, injection_trial, run_local, LifecycleOptions};
use adon::optimizer::{coordinate_ascent, CoordinateOptions, TwinEnv};
use adon::scenario::{Event, EventKind, Scenario};
use proptest::prelude::*;
use serde_json::Value;

const RETRIEVAL_GOLDEN: &str = include_str!("golden/retrieval_golden.json");

fn quick_options(table: ModeTable) -> LifecycleOptions {
    LifecycleOptions {
        agent: AgentConfig {
            mode_table: table,
            ..AgentConfig::default()
        },
        brute_force: false,
        twin_study_samples: 0,
        ..LifecycleOptions::default()
    }
}

#[test]
fn cut_localization_over_twenty_seeds() {
    for seed in 0..20 {
        let t = injection_trial(seed, false, ScriptedPolicy::default(), &AgentConfig::default()).unwrap();
        let loc = t.localization.unwrap_or_else(|| panic!("seed {seed}: no localization"));
        assert_eq!((loc.span, loc.kind), (t.injected_span, FailureKind::Cut), "seed {seed}");
        assert!(t.localization_actions.unwrap() <= 50);
        assert!(t.task_success, "seed {seed}");
    }
}

#[test]
fn aging_localization_over_twenty_seeds() {
    for seed in 0..20 {
        let t = injection_trial(seed, true, ScriptedPolicy::default(), &AgentConfig::default()).unwrap();
        let loc = t.localization.unwrap_or_else(|| panic!("seed {seed}: no localization"));
        assert_eq!((loc.span, loc.kind), (t.injected_span, FailureKind::Aging), "seed {seed}");
        assert!(t.task_success, "seed {seed}");
    }
}

#[test]
fn tfidf_scores_match_independent_oracle() {
    let golden: Value = serde_json::from_str(RETRIEVAL_GOLDEN).unwrap();
    let store = DocumentStore::shipped();
    for (query, expected) in golden.as_object().unwrap() {
        let got = store.retrieve(query, 10).unwrap();
        let expected = expected.as_array().unwrap();
        assert_eq!(got.len(), expected.len(), "{query}");
        for (g, e) in got.iter().zip(expected) {
            assert_eq!(g.doc_id, e["doc_id"].as_str().unwrap());
            assert!((g.score - e["score"].as_f64().unwrap()).abs() < 1e-12, "{query}: {}", g.doc_id);
        }
    }
    let top = store.retrieve("fiber attenuation datasheet", 1).unwrap();
    assert_eq!(top[0].doc_id, "fiber-datasheet");
}

#[test]
fn mode_purity_over_canonical_run() {
    let rule = run_local(
        &Scenario::canonical(),
        CountingBackend::new(ScriptedPolicy::default()),
        &quick_options(ModeTable::uniform(OperationMode::RuleCentric)),
    )
    .unwrap();
    assert_eq!(rule.counters.backend_calls.values().sum::<u64>(), 0);
    assert!(rule.counters.workflow_fetches(OperationMode::RuleCentric) > 0);

    let native = run_local(
        &Scenario::canonical(),
        ScriptedPolicy::default(),
        &quick_options(ModeTable::uniform(OperationMode::LlmNative)),
    )
    .unwrap();
    assert_eq!(native.counters.workflow_fetches.values().sum::<u64>(), 0);
    assert!(native.counters.backend_calls(OperationMode::LlmNative) > 0);
}

#[test]
fn rule_centric_backend_is_never_touched() {
    let backend = CountingBackend::new(FnBackend(|_: &Prompt| -> String { panic!("backend called") }));
    let mut agent = Agent::new(
        LocalPort::new(Service::new(Scenario::canonical(), 0.1)),
        backend,
        AgentConfig {
            mode_table: ModeTable::uniform(OperationMode::RuleCentric),
            ..AgentConfig::default()
        },
    )
    .unwrap();
    agent.run_until(700).unwrap();
    assert_eq!(agent.backend().calls, 0);
    assert!(agent.reports().iter().all(|r| r.success));
}

fn cut_only() -> Scenario {
    Scenario {
        name: "cut".into(),
        seed: 3,
        tick_ms: 1,
        duration: 400,
        events: vec![
            Event {
                at_tick: 0,
                kind: EventKind::EstablishBatches { batches: 4 },
            },
            Event {
                at_tick: 100,
                kind: EventKind::FiberCut { span: 2 },
            },
            Event {
                at_tick: 200,
                kind: EventKind::RepairCut { span: 2 },
            },
        ],
    }
}

#[test]
fn empty_plan_is_rejected_without_side_effects() {
    let backend = CountingBackend::new(FnBackend(|_: &Prompt| String::new()));
    let mut agent = Agent::new(
        LocalPort::new(Service::new(cut_only(), 0.1)),
        backend,
        AgentConfig {
            mode_table: ModeTable::uniform(OperationMode::LlmCentric),
            ..AgentConfig::default()
        },
    )
    .unwrap();
    agent.run_until(50).unwrap();
    let report = &agent.reports()[0];
    assert!(!report.success);
    assert!(report.error.as_deref().unwrap().contains("plan rejected"));
    // One prompt plus one re-prompt.
    assert_eq!(agent.backend().calls, 2);
    assert_eq!(agent.port_mut().get_config().unwrap().version, 0);
}

#[test]
fn optimizing_a_dark_link_repairs_by_waiting() {
    let mut scripted = ScriptedPolicy::default();
    let backend = FnBackend(move |p: &Prompt| match p.kind {
        PromptKind::Plan if p.context.contains("loss_of_signal") => "ACTION: optimize-power\nACTION: sync-twin".into(),
        _ => scripted.complete(p).unwrap(),
    });
    let mut agent = Agent::new(
        LocalPort::new(Service::new(cut_only(), 0.1)),
        backend,
        AgentConfig::default(),
    )
    .unwrap();
    agent.run_until(400).unwrap();
    let task = agent.reports().iter().find(|r| r.kind == "loss_of_signal").unwrap();
    assert!(task.success, "{:?}", task.error);
    let actions: Vec<&str> = agent
        .transcript()
        .entries()
        .iter()
        .filter(|e| e.task == task.id && e.kind == EntryKind::Action)
        .map(|e| e.text.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(actions, ["optimize-power", "wait-for-repair", "optimize-power", "sync-twin"]);
}

#[test]
fn cut_incident_replays_five_steps_in_order() {
    let run = run_local(&cut_only(), ScriptedPolicy::default(), &quick_options(ModeTable::default())).unwrap();
    let entries = parse_jsonl(&run.transcript.to_jsonl()).unwrap();
    let task = run.reports.iter().find(|r| r.kind == "loss_of_signal").unwrap().id;
    let incident: Vec<_> = entries.into_iter().filter(|e| e.task == task).collect();
    let text = render(&incident);
    let mut last = 0;
    for label in ["①", "②", "③", "④", "⑤"] {
        let at = text.find(&format!("  {label} [tick")).unwrap_or_else(|| panic!("{label} missing:\n{text}"));
        assert!(at >= last, "{label} out of order");
        last = at;
    }
    assert!(!text.contains('⑥'));
    assert_eq!(render(&incident), text);
}

#[test]
fn react_with_scripted_policy_equals_coordinate_ascent() {
    let opts = CoordinateOptions {
        include_tilts: false,
        ..CoordinateOptions::default()
    };
    for load in [10, 20, 30] {
        let state = benchmark_instance(&Scenario::canonical(), load);
        let init = GainConfig::flat(6, 18.0);
        let ca = coordinate_ascent(&mut TwinEnv::ground_truth(&state), &init, &opts).unwrap();
        let react = react_optimize(
            &mut TwinEnv::ground_truth(&state),
            &mut ScriptedPolicy::new(opts),
            &init,
            &ReactOptions {
                max_iters: 10_000,
                ..ReactOptions::default()
            },
        )
        .unwrap();
        assert_eq!(react.report.trace, ca.trace);
        assert_eq!(react.report.best_config, ca.best_config);
    }
}

fn malformed() -> impl Strategy<Value = String> {
    prop_oneof![
        "[ -~\n]{0,60}",
        "(THOUGHT: [a-z ]{0,20}\n)?ACTION: [A-Z_][a-z_]{0,10}( [0-9]{1,3}){0,3}",
        (0usize..40, 25.5..80.0f64).prop_map(|(a, g)| format!("ACTION: adjust-gain {a} {g}")),
        (6usize..40, 10.0..25.0f64).prop_map(|(a, g)| format!("ACTION: adjust-gain {a} {g}")),
        (0usize..100).prop_filter("not a batch multiple", |n| n % 5 != 0).prop_map(|n| format!("ACTION: set-load {n}")),
        (35usize..200).prop_map(|n| format!("ACTION: set-load {}", n * 5)),
        "ACTION: set_gains [0-9,.]{0,30}",
        "ACTION: (localize-failure|sync-twin|fit-twin) [a-z]{1,5} [a-z]{1,5}",
        "ACTION: (adjust-gain|set-load|observe) [a-z]{1,6}",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn malformed_backend_output_never_mutates_the_network(
        answers in prop::collection::vec(malformed(), 1..6),
        mode in prop::sample::select(vec![OperationMode::LlmCentric, OperationMode::LlmNative]),
    ) {
        let mut k = 0;
        let backend = FnBackend(move |_: &Prompt| {
            k += 1;
            answers[k % answers.len()].clone()
        });
        let mut agent = Agent::new(
            LocalPort::new(Service::new(cut_only(), 0.1)),
            backend,
            AgentConfig { mode_table: ModeTable::uniform(mode), ..AgentConfig::default() },
        )
        .unwrap();
        agent.run_until(130).unwrap();
        let now = agent.now();
        let mut reference = Service::new(cut_only(), 0.1);
        while reference.now() < now {
            reference.tick();
        }
        let got = serde_json::to_string(&agent.port_mut().get_config().unwrap()).unwrap();
        let want = serde_json::to_string(&reference.get_config()).unwrap();
        prop_assert_eq!(got, want);
    }
}
