//! Test worker speaking the line protocol.
//!
//! Usage: `rcnas-echo-worker <mode> [arg]` with mode one of
//! `echo P`, `surrogate`, `out-of-range`, `crash-after K`, `hang`,
//! `garbage`, `no-hello`, `reverse K` (answers every K requests in reverse
//! order), `version V` (announces protocol V).

use std::io::{self, BufRead, Write};
use std::time::Instant;

use rcnas::evaluator::{Evaluator, SurrogateEvaluator};
use rcnas::format::arch_from_value;
use rcnas::protocol::{parse_request, ResultMessage, PROTOCOL_VERSION};

fn send(out: &mut impl Write, msg: &impl serde::Serialize) {
    let mut line = serde_json::to_string(msg).expect("message serializes");
    line.push('\n');
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("surrogate");
    let num = |default: f64| args.get(1).and_then(|s| s.parse::<f64>().ok()).unwrap_or(default);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match mode {
        "no-hello" => {}
        "version" => send(&mut out, &serde_json::json!({"type": "hello", "protocol": num(2.0) as u32})),
        _ => send(&mut out, &serde_json::json!({"type": "hello", "protocol": PROTOCOL_VERSION})),
    }
    let mut handled = 0usize;
    let mut held: Vec<ResultMessage> = Vec::new();
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let start = Instant::now();
        let req = match parse_request(&line) {
            Ok(r) => r,
            Err((id, _)) => {
                send(&mut out, &ResultMessage::failed(id.unwrap_or_default(), "parse"));
                continue;
            }
        };
        handled += 1;
        let id = req.request_id.clone();
        let reply = match mode {
            "echo" => ResultMessage::ok(id, num(0.5), 0.0),
            "out-of-range" => ResultMessage::ok(id, 1.3, 0.0),
            "crash-after" if handled > num(0.0) as usize => std::process::exit(1),
            "hang" => loop {
                std::thread::park();
            },
            "garbage" => {
                let _ = writeln!(out, "this is not json");
                let _ = out.flush();
                continue;
            }
            _ => match arch_from_value(req.arch) {
                Ok(a) => {
                    let r = SurrogateEvaluator.evaluate(&a, &id);
                    match r.reason {
                        None => ResultMessage::ok(id, r.performance, start.elapsed().as_secs_f64()),
                        Some(reason) => ResultMessage::failed(id, reason),
                    }
                }
                Err(_) => ResultMessage::failed(id, "parse"),
            },
        };
        if mode == "reverse" {
            held.push(reply);
            if held.len() >= num(2.0) as usize {
                while let Some(r) = held.pop() {
                    send(&mut out, &r);
                }
            }
        } else {
            send(&mut out, &reply);
        }
    }
}
