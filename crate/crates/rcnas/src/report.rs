//! Best-so-far curves from run logs.

use std::fmt::Write as _;

use crate::orchestrator::RunLogRecord;

#[derive(Debug, thiserror::Error)]
#[error("run log line {line}: {message}")]
pub struct LogError {
    pub line: usize,
    pub message: String,
}

pub fn parse_log(text: &str) -> Result<Vec<RunLogRecord>, LogError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// One CSV row per record: `models_searched, reward, best_reward, feasible,
/// feasible_count, best_feasible_reward` (the last empty until a feasible
/// model is found).
pub fn curve_csv(records: &[RunLogRecord]) -> String {
    let mut out = String::from("models_searched,reward,best_reward,feasible,feasible_count,best_feasible_reward\n");
    let mut best = f64::NEG_INFINITY;
    let mut best_feasible: Option<f64> = None;
    let mut count = 0u64;
    for r in records {
        best = best.max(r.reward);
        if r.feasible {
            count += 1;
            best_feasible = Some(best_feasible.map_or(r.reward, |b| b.max(r.reward)));
        }
        let bf = best_feasible.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.models_searched, r.reward, best, r.feasible as u8, count, bf
        );
    }
    out
}
