//! Child-network evaluators and the result cache.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use rcnas_core::Architecture;
use serde::{Deserialize, Serialize};

use crate::format::arch_hash;
pub use crate::protocol::Status;

/// Outcome of evaluating one child network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub status: Status,
    /// In `[0, 1]`; 0 when failed.
    pub performance: f64,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl EvalResult {
    pub fn ok(performance: f64, wall_seconds: f64) -> Self {
        Self {
            status: Status::Ok,
            performance,
            wall_seconds,
            reason: None,
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self {
            status: Status::Failed,
            performance: 0.0,
            wall_seconds: 0.0,
            reason: Some(reason.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

/// Produces the performance of a child network. Implementations must accept
/// concurrent calls.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, arch: &Architecture, request_id: &str) -> EvalResult;

    /// Whether the evaluator can still produce results.
    fn health(&self) -> Result<(), String> {
        Ok(())
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&self, arch: &Architecture, request_id: &str) -> EvalResult {
        (**self).evaluate(arch, request_id)
    }

    fn health(&self) -> Result<(), String> {
        (**self).health()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Arc<E> {
    fn evaluate(&self, arch: &Architecture, request_id: &str) -> EvalResult {
        (**self).evaluate(arch, request_id)
    }

    fn health(&self) -> Result<(), String> {
        (**self).health()
    }
}

/// Deterministic, pure surrogate (see `rcnas_core::surrogate`).
#[derive(Clone, Copy, Debug, Default)]
pub struct SurrogateEvaluator;

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&self, arch: &Architecture, _request_id: &str) -> EvalResult {
        match arch.to_graph() {
            Ok(g) => EvalResult::ok(rcnas_core::surrogate::performance(&g), 0.0),
            Err(e) => EvalResult::failed(e.to_string()),
        }
    }
}

/// Memoizes successful results by canonical architecture hash. Failed results
/// are returned but not stored. Concurrent requests for the same key share one
/// inner call.
pub struct CachedEvaluator<E> {
    inner: E,
    entries: Mutex<HashMap<String, Arc<OnceLock<EvalResult>>>>,
    inner_calls: AtomicUsize,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    result: EvalResult,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            entries: Mutex::new(HashMap::new()),
            inner_calls: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Number of times the inner evaluator was invoked.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries
            .lock()
            .unwrap()
            .get(key)
            .is_some_and(|c| c.get().is_some())
    }

    /// Result for `arch` under cache key `key`, and whether it was a hit.
    pub fn evaluate_keyed(&self, key: &str, arch: &Architecture, request_id: &str) -> (EvalResult, bool) {
        let cell = {
            let mut map = self.entries.lock().unwrap();
            map.entry(key.to_string()).or_default().clone()
        };
        let mut computed = false;
        let result = cell
            .get_or_init(|| {
                computed = true;
                self.inner_calls.fetch_add(1, Ordering::SeqCst);
                self.inner.evaluate(arch, request_id)
            })
            .clone();
        if computed && !result.is_ok() {
            let mut map = self.entries.lock().unwrap();
            if map.get(key).is_some_and(|c| Arc::ptr_eq(c, &cell)) {
                map.remove(key);
            }
        }
        (result, !computed)
    }

    /// Successful entries ordered by key.
    pub fn snapshot(&self) -> BTreeMap<String, EvalResult> {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .filter_map(|(k, c)| c.get().filter(|r| r.is_ok()).map(|r| (k.clone(), r.clone())))
            .collect()
    }

    pub fn insert(&self, key: String, result: EvalResult) {
        let cell = OnceLock::new();
        let _ = cell.set(result);
        self.entries.lock().unwrap().insert(key, Arc::new(cell));
    }

    /// The cache as JSON lines sorted by key.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (key, result) in self.snapshot() {
            serde_json::to_writer(&mut out, &CacheLine { key, result }).expect("cache line serializes");
            out.push(b'\n');
        }
        out
    }

    /// Adds every entry of a saved cache; returns the number of entries.
    pub fn load_jsonl(&self, bytes: &[u8]) -> std::io::Result<usize> {
        let mut n = 0;
        for line in bytes.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: CacheLine = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            self.insert(l.key, l.result);
            n += 1;
        }
        Ok(n)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_jsonl())?;
        f.sync_all()
    }

    pub fn load(&self, path: &Path) -> std::io::Result<usize> {
        self.load_jsonl(&fs::read(path)?)
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&self, arch: &Architecture, request_id: &str) -> EvalResult {
        self.evaluate_keyed(&arch_hash(arch), arch, request_id).0
    }

    fn health(&self) -> Result<(), String> {
        self.inner.health()
    }
}
