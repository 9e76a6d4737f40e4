use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rcnas::core::arch::{ArchGraph, LayerSpec, TensorShape};
use rcnas::core::Architecture;
use rcnas::evaluator::{Evaluator, Status, SurrogateEvaluator};
use rcnas::external::{AttachError, ExternalEvaluator};
use rcnas::protocol::Budget;

const WORKER: &str = env!("CARGO_BIN_EXE_rcnas-echo-worker");

fn spawn(args: &[&str], timeout_ms: u64) -> Result<ExternalEvaluator, AttachError> {
    let mut cmd = vec![WORKER.to_string()];
    cmd.extend(args.iter().map(|s| s.to_string()));
    ExternalEvaluator::spawn(
        &cmd,
        Duration::from_millis(timeout_ms),
        Duration::from_secs(5),
        Budget::default(),
    )
}

fn fc(units: u32) -> Architecture {
    Architecture::Layers(ArchGraph::new(TensorShape::new(49, 40, 1), 12, vec![LayerSpec::fc(units, 0)]))
}

#[test]
fn echo_round_trip() {
    let w = spawn(&["echo", "0.5"], 5000).unwrap();
    let r = w.evaluate(&fc(12), "a");
    assert_eq!(r.status, Status::Ok);
    assert_eq!(r.performance, 0.5);
    assert!(w.health().is_ok());
}

#[test]
fn surrogate_worker_agrees_with_in_process_surrogate() {
    let w = spawn(&["surrogate"], 5000).unwrap();
    for u in [4, 12, 64, 256] {
        let a = fc(u);
        assert_eq!(w.evaluate(&a, &format!("r{u}")).performance, SurrogateEvaluator.evaluate(&a, "x").performance);
    }
}

#[test]
fn out_of_range_is_a_protocol_error() {
    let w = spawn(&["out-of-range"], 5000).unwrap();
    let r = w.evaluate(&fc(12), "a");
    assert_eq!(r.status, Status::Failed);
    assert_eq!(r.performance, 0.0);
    assert!(r.reason.unwrap().starts_with("protocol"));
}

#[test]
fn crash_fails_pending_and_later_requests() {
    let w = spawn(&["crash-after", "1"], 10_000).unwrap();
    assert_eq!(w.evaluate(&fc(12), "a").status, Status::Ok);
    let start = Instant::now();
    let r = w.evaluate(&fc(12), "b");
    assert_eq!(r.reason.as_deref(), Some("crashed"));
    assert!(start.elapsed() < Duration::from_secs(5));
    assert_eq!(w.evaluate(&fc(12), "c").reason.as_deref(), Some("crashed"));
    assert!(w.health().is_err());
}

#[test]
fn hang_times_out() {
    let w = spawn(&["hang"], 300).unwrap();
    let start = Instant::now();
    let r = w.evaluate(&fc(12), "a");
    assert_eq!(r.reason.as_deref(), Some("timeout"));
    let took = start.elapsed();
    assert!(took >= Duration::from_millis(300) && took < Duration::from_secs(3), "{took:?}");
}

#[test]
fn unroutable_garbage_times_out() {
    let w = spawn(&["garbage"], 300).unwrap();
    assert_eq!(w.evaluate(&fc(12), "a").reason.as_deref(), Some("timeout"));
    assert!(w.health().is_ok());
}

#[test]
fn handshake_failures() {
    assert!(matches!(spawn(&["version", "2"], 1000), Err(AttachError::Version(2))));
    let start = Instant::now();
    let r = ExternalEvaluator::spawn(
        &[WORKER.to_string(), "no-hello".into()],
        Duration::from_secs(1),
        Duration::from_millis(300),
        Budget::default(),
    );
    assert!(matches!(r, Err(AttachError::HandshakeTimeout(_))));
    assert!(start.elapsed() < Duration::from_secs(3));
    assert!(matches!(
        spawn_missing(),
        Err(AttachError::Spawn(_))
    ));
}

fn spawn_missing() -> Result<ExternalEvaluator, AttachError> {
    ExternalEvaluator::spawn(
        &["/nonexistent/worker".to_string()],
        Duration::from_secs(1),
        Duration::from_secs(1),
        Budget::default(),
    )
}

#[test]
fn interleaved_concurrent_requests_are_routed_by_id() {
    // The worker answers each batch of 10 in reverse order.
    let w = Arc::new(spawn(&["reverse", "10"], 10_000).unwrap());
    let handles: Vec<_> = (0..10u32)
        .map(|i| {
            let w = w.clone();
            std::thread::spawn(move || {
                let a = fc(4 + 12 * i);
                let r = w.evaluate(&a, &format!("req-{i}"));
                (r, SurrogateEvaluator.evaluate(&a, "x"))
            })
        })
        .collect();
    let mut seen = Vec::new();
    for h in handles {
        let (got, want) = h.join().unwrap();
        assert_eq!(got.status, Status::Ok);
        assert_eq!(got.performance, want.performance);
        seen.push(got.performance.to_bits());
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 10);
}

#[test]
fn worker_survives_malformed_requests() {
    let mut child = Command::new(WORKER)
        .arg("surrogate")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let hello: serde_json::Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    assert_eq!(hello, serde_json::json!({"type": "hello", "protocol": 1}));
    writeln!(stdin, "{{not json").unwrap();
    writeln!(stdin, r#"{{"type":"evaluate","request_id":"bad","arch":{{"mode":"graph"}},"budget":{{"epochs":1,"dataset":"x"}}}}"#).unwrap();
    writeln!(
        stdin,
        r#"{{"type":"evaluate","request_id":"good","arch":{},"budget":{{"epochs":1,"dataset":"x"}},"extra":1}}"#,
        rcnas::format::canonical_serialize(&fc(12))
    )
    .unwrap();
    stdin.flush().unwrap();
    let mut next = || -> serde_json::Value { serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap() };
    let a = next();
    assert_eq!((a["status"].as_str(), a["reason"].as_str()), (Some("failed"), Some("parse")));
    let b = next();
    assert_eq!((b["request_id"].as_str(), b["reason"].as_str()), (Some("bad"), Some("parse")));
    let c = next();
    assert_eq!((c["request_id"].as_str(), c["status"].as_str()), (Some("good"), Some("ok")));
    drop(stdin);
    assert!(child.wait().unwrap().success());
}
