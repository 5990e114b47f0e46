use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn adon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adon")).args(args).output().expect("binary runs")
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

const DATA_FILES: [&str; 6] = [
    "telemetry.csv",
    "alarms.jsonl",
    "transcripts.jsonl",
    "q_trace.csv",
    "twin_report.json",
    "summary.json",
];

#[test]
fn runs_are_byte_reproducible_and_serve_mode_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, extra) in [(&a, None), (&b, None), (&c, Some("--serve"))] {
        let mut args = vec!["run", "--seed", "7", "--no-oracle", "--out", dir.to_str().unwrap()];
        args.extend(extra);
        let out = adon(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in DATA_FILES {
        assert_eq!(digest(&a.join(f)), digest(&b.join(f)), "{f}");
    }
    assert_eq!(digest(&a.join("q_trace.csv")), digest(&c.join("q_trace.csv")));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["created_unix"].as_u64().is_some());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cuts"][0]["localization"]["kind"], "cut");
    assert_eq!(summary["twin_study"].as_array().unwrap().len(), 3);

    // Existing output directories are never overwritten.
    let again = adon(&["run", "--no-oracle", "--out", a.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));

    let replay = adon(&["replay", a.join("transcripts.jsonl").to_str().unwrap()]);
    assert!(replay.status.success());
    let text = String::from_utf8(replay.stdout).unwrap();
    let incident = &text[text.find("loss_of_signal").unwrap()..];
    let mut last = 0;
    for label in ["①", "②", "③", "④", "⑤"] {
        let at = incident.find(label).unwrap();
        assert!(at >= last);
        last = at;
    }
}

#[test]
fn input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("o");
    let missing = tmp.path().join("nope.scn");
    let out = adon(&["run", "--scenario", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
    assert!(!out_dir.exists());

    let out = adon(&["run", "--mode-table", "add=turbo", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = adon(&["optimize", "--method", "brute", "--load", "17"]);
    assert_eq!(out.status.code(), Some(2));
    let out = adon(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_handles_empty_and_truncated_files() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = adon(&["replay", empty.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());

    let cut = tmp.path().join("cut.jsonl");
    let line = r#"{"seq":0,"task":0,"tick":1,"kind":"task","text":"establish"}"#;
    fs::write(&cut, format!("{line}\n{}", &line[..20])).unwrap();
    let out = adon(&["replay", cut.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let at: usize = err.split("byte ").nth(1).unwrap().split(':').next().unwrap().parse().unwrap();
    assert!((line.len() + 1..=line.len() + 1 + 20).contains(&at), "{err}");
}

#[test]
fn optimize_traces() {
    let brute = adon(&["optimize", "--method", "brute"]);
    assert!(brute.status.success());
    let text = String::from_utf8(brute.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "eval,gain_0,gain_1,gain_2,gain_3,gain_4,gain_5,tilt_0,tilt_1,tilt_2,tilt_3,tilt_4,tilt_5,value");
    assert_eq!(rows.len(), 1 + 15_625 + 1);
    assert_eq!(*rows.last().unwrap(), "#gap_to_oracle_db=0");

    let coord = adon(&["optimize", "--method", "coord"]);
    let react = adon(&["optimize", "--method", "react"]);
    assert!(coord.status.success() && react.status.success());
    assert_eq!(coord.stdout, react.stdout);

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bo.csv");
    let bo = adon(&["optimize", "--method", "bo", "--budget", "100", "--seed", "1", "--out", path.to_str().unwrap()]);
    assert!(bo.status.success());
    let csv = fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 100 + 1);
    let gap: f64 = csv.lines().last().unwrap().strip_prefix("#gap_to_oracle_db=").unwrap().parse().unwrap();
    assert!(gap <= 0.3, "{gap}");
}
