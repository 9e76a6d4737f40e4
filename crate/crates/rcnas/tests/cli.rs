use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_rcnas");
const WORKER: &str = env!("CARGO_BIN_EXE_rcnas-echo-worker");

fn rcnas(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn kws_fc() -> Value {
    json!({"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
           "layers": [{"kind": "FC", "channels_or_hidden": 12, "src1": 0}]})
}

fn config(dir: &Path, name: &str, patch: Value) -> PathBuf {
    let mut c = json!({
        "mode": "layers",
        "reward": {"constraints": [
            {"metric": "params", "op": "<", "value": 100000},
            {"metric": "compute_intensity", "op": ">", "value": 10}
        ]},
        "episode_size": 3,
        "batch_size": 4,
        "episodes": 6,
        "seed": 7,
        "baseline_arch": kws_fc(),
        "policy": {"controller_hidden": 32}
    });
    for (k, v) in patch.as_object().unwrap() {
        c[k] = v.clone();
    }
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    p
}

fn search(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rcnas(&args)
}

fn records(out: &Path) -> Vec<Value> {
    fs::read_to_string(out.join("run_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn profile_reports_resources() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("gru.json");
    fs::write(
        &arch,
        r#"{"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
            "layers": [{"kind": "GRU", "repeat": 2, "channels_or_hidden": 64, "directions": 1, "src1": 0}]}"#,
    )
    .unwrap();
    let out = rcnas(&["profile", "--arch", arch.to_str().unwrap()]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    for k in ["params", "model_size_bytes", "flops", "bytes_accessed", "compute_intensity", "per_layer"] {
        assert!(r.get(k).is_some(), "{k}");
    }
    assert_eq!(r["params"], 45708);
    assert_eq!(r["model_size_bytes"], 4 * 45708);

    fs::write(&arch, r#"{"mode": "layers", "input_shape": [49, 40, 1], "classes": 12,
            "layers": [{"kind": "FC", "channels_or_hidden": 8, "src1": 3}]}"#).unwrap();
    assert_eq!(rcnas(&["profile", "--arch", arch.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&arch, r#"{"mode": "layers", "input_shape": [49, 40, 1], "classes": 12, "layers": []}"#).unwrap();
    assert_eq!(rcnas(&["profile", "--arch", arch.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&arch, "{").unwrap();
    assert_eq!(rcnas(&["profile", "--arch", arch.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn smallest_search_logs_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", json!({"episode_size": 1, "batch_size": 1, "episodes": 1}));
    let out = dir.path().join("out");
    let o = search("search", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(records(&out).len(), 1);
    let best: Value = serde_json::from_slice(&fs::read(out.join("best.json")).unwrap()).unwrap();
    assert!(best["arch"]["layers"].is_array());
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["models_searched"], 1);
    assert_eq!(summary["complete"], true);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for patch in [
        json!({"batch_size": 0}),
        json!({"unexpected": true}),
        json!({"baseline_arch": "missing.json"}),
        json!({"search_space": "no-such-space"}),
    ] {
        let cfg = config(dir.path(), "bad.json", patch.clone());
        let o = search("search", &cfg, &dir.path().join("o"), &[]);
        assert_eq!(o.status.code(), Some(2), "{patch}");
    }
    let o = rcnas(&["search", "--config", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn worker_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        json!({"evaluator": {"kind": "external", "command": ["/nonexistent/worker"]}}),
    );
    assert_eq!(search("search", &cfg, &dir.path().join("o"), &[]).status.code(), Some(3));
    let cfg = config(
        dir.path(),
        "c.json",
        json!({"evaluator": {"kind": "external", "command": [WORKER, "crash-after", "2"], "timeout_secs": 10}}),
    );
    assert_eq!(search("search", &cfg, &dir.path().join("o"), &[]).status.code(), Some(3));
}

#[test]
fn external_surrogate_worker_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let local = config(dir.path(), "a.json", json!({"episodes": 2}));
    let remote = config(
        dir.path(),
        "b.json",
        json!({"episodes": 2, "evaluator": {"kind": "external", "command": [WORKER, "surrogate"]}}),
    );
    assert!(search("search", &local, &dir.path().join("a"), &[]).status.success());
    assert!(search("search", &remote, &dir.path().join("b"), &[]).status.success());
    let strip = |v: Vec<Value>| v.into_iter().map(|r| (r["arch_hash"].clone(), r["reward"].clone())).collect::<Vec<_>>();
    assert_eq!(strip(records(&dir.path().join("a"))), strip(records(&dir.path().join("b"))));
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for cmd in ["search", "random-search"] {
        let cfg = config(d, "c.json", json!({}));
        let (a, b, split) = (d.join(format!("{cmd}-a")), d.join(format!("{cmd}-b")), d.join(format!("{cmd}-s")));
        assert!(search(cmd, &cfg, &a, &[]).status.success());
        assert!(search(cmd, &cfg, &b, &[]).status.success());
        let log_a = fs::read(a.join("run_log.jsonl")).unwrap();
        assert_eq!(log_a, fs::read(b.join("run_log.jsonl")).unwrap());
        assert_eq!(records(&a).len(), 6 * 4 * 3);

        let o = search(cmd, &cfg, &split, &["--stop-after", "3"]);
        assert!(o.status.success());
        assert_eq!(records(&split).len(), 3 * 4 * 3);
        assert!(split.join("checkpoint/manifest.json").exists());
        assert!(search(cmd, &cfg, &split, &["--resume"]).status.success());
        assert_eq!(log_a, fs::read(split.join("run_log.jsonl")).unwrap());
        assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(split.join("summary.json")).unwrap());
    }
    let other = config(d, "c2.json", json!({"seed": 8}));
    assert!(search("search", &other, &d.join("other"), &[]).status.success());
    assert_ne!(
        fs::read(d.join("search-a/run_log.jsonl")).unwrap(),
        fs::read(d.join("other/run_log.jsonl")).unwrap()
    );
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", json!({}));
    let out = dir.path().join("o");
    assert!(search("search", &cfg, &out, &["--stop-after", "2"]).status.success());
    let p = out.join("checkpoint/policy.bin");
    let mut bytes = fs::read(&p).unwrap();
    bytes[100] ^= 0xff;
    fs::write(&p, bytes).unwrap();
    let o = search("search", &cfg, &out, &["--resume"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum mismatch"));
}

#[test]
fn report_emits_monotone_best_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", json!({}));
    let out = dir.path().join("o");
    assert!(search("search", &cfg, &out, &[]).status.success());
    let o = rcnas(&["report", "--log", out.join("run_log.jsonl").to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("models_searched,reward,best_reward,feasible,feasible_count,best_feasible_reward")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 72);
    let mut prev = f64::NEG_INFINITY;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0].parse::<usize>().unwrap(), i + 1);
        let best: f64 = r[2].parse().unwrap();
        assert!(best >= prev);
        prev = best;
    }
    let recs = records(&out);
    let feasible = recs.iter().filter(|r| r["feasible"] == true).count();
    assert_eq!(rows.last().unwrap()[4].parse::<usize>().unwrap(), feasible);
    for r in &recs {
        let reward = r["reward"].as_f64().unwrap();
        let p = r["performance"].as_f64().unwrap();
        let zero = r["violations"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0));
        assert_eq!(r["feasible"].as_bool().unwrap(), zero);
        assert_eq!(zero, reward == p);
    }
}

#[test]
fn module_search_with_reset_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "m.json",
        json!({
            "mode": "module",
            "search_space": "image-module",
            "reward": {"constraints": [{"metric": "params", "op": "<", "value": 5000000}]},
            "reset_baseline_each_episode": true,
            "episodes": 2,
            "baseline_arch": {"mode": "module", "input_shape": [32, 32, 3], "classes": 10,
                "branches": [{"branch_type": "conv-none", "filter_width": 3, "pooling_width": 2,
                              "channels": 16, "src1": 0, "src2": 0, "propagate": true}],
                "stacking": {"repeats": 2, "stages": 3}}
        }),
    );
    let out = dir.path().join("o");
    let o = search("search", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(records(&out).len(), 2 * 4 * 3);
}
