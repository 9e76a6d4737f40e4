//! The search loop: episodes of `T` steps over `N` rollouts, evaluation,
//! reward, policy update, top-k restarts, run logs and checkpoints.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rcnas_core::action::{propose, random_choices};
use rcnas_core::reinforce::{advantages, clip_norm, episode_returns};
use rcnas_core::{
    resource, ActionChoices, Adam, Architecture, BaselineState, PolicyNet, PolicyParams, ResourceReport, SearchMode,
    StructuralKind,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, EvaluatorConfig, Resolved};
use crate::evaluator::{CachedEvaluator, EvalResult, Evaluator, Status, SurrogateEvaluator};
use crate::external::{AttachError, ExternalEvaluator};
use crate::format::{arch_from_value, arch_hash, to_value};

pub const RUN_LOG: &str = "run_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Policy-gradient search.
    Reinforce,
    /// Uniform random actions, no learning.
    Random,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Attach(#[from] AttachError),
    #[error("worker failure: {0}")]
    Worker(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One evaluated child network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub episode: usize,
    pub step: usize,
    pub rollout: usize,
    pub arch_hash: String,
    pub status: Status,
    pub performance: f64,
    pub params: u64,
    pub model_size_bytes: u64,
    pub flops: u64,
    pub bytes_accessed: u64,
    pub compute_intensity: f64,
    pub violations: Vec<f64>,
    pub reward: f64,
    pub feasible: bool,
    /// Children evaluated so far, this one included.
    pub models_searched: u64,
    pub cache_hit: bool,
    /// `insert`, `keep`, `remove`, or `keep-fallback` when no sampled action applied.
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    pub episode: usize,
    pub step: usize,
    pub rollout: usize,
    pub arch_hash: String,
    pub reward: f64,
    pub performance: f64,
    pub feasible: bool,
    pub resources: ResourceReport,
    pub arch: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub strategy: Strategy,
    pub complete: bool,
    pub episodes_completed: usize,
    pub models_searched: u64,
    pub feasible_models: u64,
    pub cache_hits: u64,
    pub best: Option<BestModel>,
    pub best_feasible: Option<BestModel>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Checkpoint after every this many episodes.
    pub checkpoint_every: Option<usize>,
    /// Stop (with a checkpoint) once this many episodes are complete.
    pub stop_after: Option<usize>,
    /// Continue from `out_dir/checkpoint`.
    pub resume: bool,
}

/// Mutable loop state, persisted in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct State {
    strategy: Strategy,
    config_sha256: String,
    next_episode: usize,
    models_searched: u64,
    feasible_models: u64,
    cache_hits: u64,
    baseline: BaselineState,
    starts: Vec<serde_json::Value>,
    best: Option<BestModel>,
    best_feasible: Option<BestModel>,
    /// Length of the run log when the state was saved.
    log_bytes: u64,
}

/// Builds the evaluator named in the config.
pub fn build_evaluator(config: &EvaluatorConfig) -> Result<Box<dyn Evaluator>, AttachError> {
    Ok(match config {
        EvaluatorConfig::Surrogate => Box::new(SurrogateEvaluator),
        EvaluatorConfig::External {
            command,
            timeout_secs,
            handshake_timeout_secs,
            budget,
        } => Box::new(ExternalEvaluator::spawn(
            command,
            Duration::from_secs_f64(*timeout_secs),
            Duration::from_secs_f64(*handshake_timeout_secs),
            budget.clone(),
        )?),
    })
}

pub fn run_search(resolved: &Resolved, options: &RunOptions) -> Result<SearchReport, SearchError> {
    let evaluator = build_evaluator(&resolved.config.evaluator)?;
    run(resolved, Strategy::Reinforce, evaluator, options)
}

pub fn run_random_search(resolved: &Resolved, options: &RunOptions) -> Result<SearchReport, SearchError> {
    let evaluator = build_evaluator(&resolved.config.evaluator)?;
    run(resolved, Strategy::Random, evaluator, options)
}

/// Seed of the generator for `(episode, rollout, step)`; independent of
/// scheduling.
pub fn stream_rng(seed: u64, episode: u64, rollout: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, x) in [seed, episode, rollout, step].into_iter().enumerate() {
        key[i * 8..i * 8 + 8].copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn config_digest(resolved: &Resolved) -> String {
    // Run-length settings may change between a run and its resumption.
    let mut c = resolved.config.clone();
    c.episodes = 0;
    let text = serde_json::to_string(&c).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

struct Proposed {
    choices: Option<ActionChoices>,
    next: Architecture,
    action: &'static str,
}

struct Child {
    rollout: usize,
    arch: Architecture,
    hash: String,
    report: ResourceReport,
    result: EvalResult,
    hit: bool,
}

struct Search<'a> {
    resolved: &'a Resolved,
    strategy: Strategy,
    evaluator: CachedEvaluator<Box<dyn Evaluator>>,
    net: Option<PolicyNet>,
    params: PolicyParams,
    adam: Adam,
    state: State,
}

/// Runs a search with an explicit evaluator.
pub fn run(
    resolved: &Resolved,
    strategy: Strategy,
    evaluator: Box<dyn Evaluator>,
    options: &RunOptions,
) -> Result<SearchReport, SearchError> {
    let c = &resolved.config;
    let net = (strategy == Strategy::Reinforce).then(|| PolicyNet::new(c.policy.clone(), resolved.space.clone()));
    let (params, num) = match &net {
        Some(n) => (n.init_params(&mut stream_rng(c.seed, u64::MAX, 0, 0)), n.num_params()),
        None => (PolicyParams { values: Vec::new() }, 0),
    };
    let mut search = Search {
        resolved,
        strategy,
        evaluator: CachedEvaluator::new(evaluator),
        net,
        params,
        adam: Adam::new(num, c.learning_rate),
        state: State {
            strategy,
            config_sha256: config_digest(resolved),
            next_episode: 0,
            models_searched: 0,
            feasible_models: 0,
            cache_hits: 0,
            baseline: BaselineState::new(c.baseline_decay),
            starts: vec![to_value(&resolved.baseline)],
            best: None,
            best_feasible: None,
            log_bytes: 0,
        },
    };
    fs::create_dir_all(&options.out_dir)?;
    let log_path = options.out_dir.join(RUN_LOG);
    let ckpt = options.out_dir.join(CHECKPOINT_DIR);
    let log_file = if options.resume {
        search.restore(&ckpt)?;
        let f = OpenOptions::new().write(true).open(&log_path)?;
        f.set_len(search.state.log_bytes)?;
        let mut f = f;
        std::io::Seek::seek(&mut f, std::io::SeekFrom::End(0))?;
        f
    } else {
        File::create(&log_path)?
    };
    let mut log = BufWriter::new(log_file);
    let end = options.stop_after.map_or(c.episodes, |s| s.min(c.episodes));
    while search.state.next_episode < end {
        search.episode(&mut log)?;
        log.flush()?;
        search.state.log_bytes = log.get_ref().metadata()?.len();
        let done = search.state.next_episode;
        if options.checkpoint_every.is_some_and(|k| k > 0 && done % k == 0) || done == end && done < c.episodes {
            search.save(&ckpt)?;
        }
    }
    log.get_ref().sync_all()?;
    let report = search.report();
    write_artifacts(&options.out_dir, &report)?;
    Ok(report)
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

fn write_artifacts(dir: &Path, report: &SearchReport) -> std::io::Result<()> {
    fs::write(dir.join("summary.json"), pretty(report))?;
    if let Some(b) = &report.best {
        fs::write(dir.join("best.json"), pretty(b))?;
    }
    if let Some(b) = &report.best_feasible {
        fs::write(dir.join("best_feasible.json"), pretty(b))?;
    }
    Ok(())
}

impl Search<'_> {
    fn report(&self) -> SearchReport {
        let s = &self.state;
        SearchReport {
            strategy: self.strategy,
            complete: s.next_episode >= self.resolved.config.episodes,
            episodes_completed: s.next_episode,
            models_searched: s.models_searched,
            feasible_models: s.feasible_models,
            cache_hits: s.cache_hits,
            best: s.best.clone(),
            best_feasible: s.best_feasible.clone(),
        }
    }

    fn save(&self, dir: &Path) -> Result<(), SearchError> {
        let mut files = vec![("state.json", serde_json::to_vec_pretty(&self.state).expect("state serializes"))];
        if let Some(net) = &self.net {
            files.push(("policy.bin", checkpoint::encode_params(net.blocks(), &self.params)));
            files.push(("optimizer.bin", checkpoint::encode_adam(&self.adam)));
        }
        files.push(("cache.jsonl", self.evaluator.to_jsonl()));
        checkpoint::write_dir(dir, &files)?;
        Ok(())
    }

    fn restore(&mut self, dir: &Path) -> Result<(), SearchError> {
        let files = checkpoint::read_dir(dir)?;
        let get = |name: &str| {
            files
                .get(name)
                .ok_or_else(|| CheckpointError::State(format!("{name} missing")))
        };
        let state: State = serde_json::from_slice(get("state.json")?)
            .map_err(|e| CheckpointError::State(e.to_string()))?;
        if state.strategy != self.strategy {
            return Err(CheckpointError::State("checkpoint is from a different strategy".into()).into());
        }
        if state.config_sha256 != self.state.config_sha256 {
            return Err(CheckpointError::State("checkpoint is from a different config".into()).into());
        }
        if let Some(net) = &self.net {
            self.params = checkpoint::decode_params(get("policy.bin")?, net.blocks(), "policy.bin")?;
            let adam = checkpoint::decode_adam(get("optimizer.bin")?, "optimizer.bin")?;
            if adam.m.len() != net.num_params() {
                return Err(CheckpointError::Layout("optimizer.bin".into()).into());
            }
            self.adam = adam;
        }
        self.evaluator
            .load_jsonl(get("cache.jsonl")?)
            .map_err(|e| CheckpointError::State(format!("cache.jsonl: {e}")))?;
        self.state = state;
        Ok(())
    }

    fn starts(&self) -> Result<Vec<Architecture>, SearchError> {
        self.state
            .starts
            .iter()
            .map(|v| {
                arch_from_value(v.clone()).map_err(|e| CheckpointError::State(format!("start architecture: {e}")).into())
            })
            .collect()
    }

    fn propose(&self, arch: &Architecture, rng: &mut ChaCha8Rng) -> Proposed {
        let space = &self.resolved.space;
        let p = match &self.net {
            Some(net) => {
                let dist = net.distribution(&self.params, arch);
                propose(space, arch, || (net.sample_from(&dist, arch, rng).choices, ()))
            }
            None => propose(space, arch, || (random_choices(space, arch, rng), ())),
        };
        match p.accepted {
            Some((choices, ())) => Proposed {
                action: match choices.structural {
                    StructuralKind::Insert => "insert",
                    StructuralKind::Keep => "keep",
                    StructuralKind::Remove => "remove",
                },
                choices: Some(choices),
                next: p.next,
            },
            None => Proposed {
                choices: None,
                next: p.next,
                action: "keep-fallback",
            },
        }
    }

    /// Evaluates one step's children. Cache hits are decided in rollout
    /// order: a child is a hit if its key was cached before the step or
    /// appeared at a lower rollout index in the same step.
    fn evaluate_step(&self, episode: usize, step: usize, archs: Vec<Architecture>) -> Vec<Child> {
        let use_cache = self.resolved.config.cache;
        let prepared: Vec<(String, ResourceReport)> = archs
            .par_iter()
            .map(|a| {
                let g = a.to_graph().expect("applied actions yield valid architectures");
                (arch_hash(a), resource::report(&g).expect("valid graph"))
            })
            .collect();
        let mut seen = HashSet::new();
        let mut hit = vec![false; archs.len()];
        let mut misses = Vec::new();
        for (n, (key, _)) in prepared.iter().enumerate() {
            if use_cache && (self.evaluator.contains(key) || seen.contains(key)) {
                hit[n] = true;
            } else {
                misses.push(n);
            }
            seen.insert(key.clone());
        }
        let fresh: HashMap<usize, EvalResult> = misses
            .par_iter()
            .map(|&n| {
                let id = format!("e{episode}-t{step}-n{n}");
                let r = if use_cache {
                    self.evaluator.evaluate_keyed(&prepared[n].0, &archs[n], &id).0
                } else {
                    self.evaluator.inner().evaluate(&archs[n], &id)
                };
                (n, r)
            })
            .collect();
        let mut by_key: HashMap<&str, &EvalResult> = HashMap::new();
        for &n in &misses {
            by_key.entry(&prepared[n].0).or_insert(&fresh[&n]);
        }
        let results: Vec<EvalResult> = (0..archs.len())
            .map(|n| match fresh.get(&n) {
                Some(r) => r.clone(),
                None => match by_key.get(prepared[n].0.as_str()) {
                    Some(r) => (*r).clone(),
                    None => self.evaluator.evaluate_keyed(&prepared[n].0, &archs[n], "cached").0,
                },
            })
            .collect();
        archs
            .into_iter()
            .zip(prepared)
            .zip(results)
            .enumerate()
            .map(|(n, ((arch, (hash, report)), result))| Child {
                rollout: n,
                arch,
                hash,
                report,
                result,
                hit: hit[n],
            })
            .collect()
    }

    fn episode(&mut self, log: &mut impl Write) -> Result<(), SearchError> {
        let resolved = self.resolved;
        let c = &resolved.config;
        let (n_roll, t_len) = (c.batch_size, c.episode_size);
        let e = self.state.next_episode;
        let starts = self.starts()?;
        let mut current: Vec<Architecture> = (0..n_roll).map(|n| starts[n % starts.len()].clone()).collect();
        let mut states: Vec<Vec<(Architecture, Option<ActionChoices>)>> = vec![Vec::new(); n_roll];
        let mut rewards: Vec<Vec<f64>> = vec![Vec::new(); n_roll];
        // (reward, order, hash, arch) of successful children, for restarts.
        let mut ranked: Vec<(f64, usize, String, Architecture)> = Vec::new();

        for t in 0..t_len {
            let proposals: Vec<Proposed> = (0..n_roll)
                .into_par_iter()
                .map(|n| {
                    let mut rng = stream_rng(c.seed, e as u64, n as u64, t as u64);
                    self.propose(&current[n], &mut rng)
                })
                .collect();
            let children = self.evaluate_step(e, t, proposals.iter().map(|p| p.next.clone()).collect());
            for (p, child) in proposals.into_iter().zip(children) {
                let n = child.rollout;
                let ok = child.result.is_ok();
                let violations = c.reward.violations(&child.report);
                let reward = if ok {
                    c.reward.reward_for(child.result.performance, &child.report)
                } else {
                    0.0
                };
                let feasible = ok && violations.iter().all(|&v| v == 0.0);
                let s = &mut self.state;
                s.models_searched += 1;
                s.feasible_models += feasible as u64;
                s.cache_hits += child.hit as u64;
                let rec = RunLogRecord {
                    episode: e,
                    step: t,
                    rollout: n,
                    arch_hash: child.hash.clone(),
                    status: child.result.status,
                    performance: child.result.performance,
                    params: child.report.params,
                    model_size_bytes: child.report.model_size_bytes,
                    flops: child.report.flops,
                    bytes_accessed: child.report.bytes_accessed,
                    compute_intensity: child.report.compute_intensity,
                    violations,
                    reward,
                    feasible,
                    models_searched: s.models_searched,
                    cache_hit: child.hit,
                    action: p.action.to_string(),
                    reason: child.result.reason.clone(),
                };
                serde_json::to_writer(&mut *log, &rec).map_err(std::io::Error::other)?;
                log.write_all(b"\n")?;
                let best = || BestModel {
                    episode: e,
                    step: t,
                    rollout: n,
                    arch_hash: child.hash.clone(),
                    reward,
                    performance: child.result.performance,
                    feasible,
                    resources: child.report.clone(),
                    arch: to_value(&child.arch),
                };
                if ok && s.best.as_ref().map_or(true, |b| reward > b.reward) {
                    s.best = Some(best());
                }
                if feasible && s.best_feasible.as_ref().map_or(true, |b| reward > b.reward) {
                    s.best_feasible = Some(best());
                }
                if ok {
                    ranked.push((reward, t * n_roll + n, child.hash.clone(), child.arch.clone()));
                }
                states[n].push((std::mem::replace(&mut current[n], child.arch), p.choices));
                rewards[n].push(reward);
            }
            self.evaluator.health().map_err(SearchError::Worker)?;
        }

        if self.net.is_some() {
            self.update(&states, &rewards);
        }

        let reset = c.mode == SearchMode::Module && c.reset_baseline_each_episode;
        if reset {
            self.state.starts = vec![to_value(&self.resolved.baseline)];
        } else if !ranked.is_empty() {
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut seen = HashSet::new();
            self.state.starts = ranked
                .into_iter()
                .filter(|r| seen.insert(r.2.clone()))
                .take(self.resolved.top_k())
                .map(|r| to_value(&r.3))
                .collect();
        }
        self.state.next_episode += 1;
        let s = &self.state;
        log::info!(
            "episode {}: {} searched, {} feasible, best reward {:.4}",
            e,
            s.models_searched,
            s.feasible_models,
            s.best.as_ref().map_or(0.0, |b| b.reward)
        );
        Ok(())
    }

    /// One policy update from a finished episode.
    fn update(&mut self, states: &[Vec<(Architecture, Option<ActionChoices>)>], rewards: &[Vec<f64>]) {
        let net = self.net.as_ref().expect("policy search");
        let returns = match episode_returns(rewards) {
            Ok(r) => r,
            Err(err) => {
                log::warn!("skipping policy update: {err}");
                return;
            }
        };
        let adv = advantages(&returns, &self.state.baseline);
        let params = &self.params;
        let per_rollout: Vec<Vec<f64>> = states
            .par_iter()
            .zip(&adv)
            .map(|(steps, a)| {
                let mut g = vec![0.0; net.num_params()];
                for ((state, choices), &w) in steps.iter().zip(a) {
                    if let (Some(ch), true) = (choices, w != 0.0) {
                        net.accumulate_grad(params, state, ch, w, &mut g);
                    }
                }
                g
            })
            .collect();
        let mut g = vec![0.0; net.num_params()];
        for r in &per_rollout {
            for (x, y) in g.iter_mut().zip(r) {
                *x += y;
            }
        }
        let inv = 1.0 / states.len() as f64;
        g.iter_mut().for_each(|x| *x *= inv);
        let norm = clip_norm(&mut g, self.resolved.config.clip_norm);
        log::debug!("gradient norm {norm:.4}");
        if let Err(err) = self.adam.step(&mut self.params.values, &g) {
            log::warn!("skipping policy update: {err}");
        }
        self.state.baseline.update(&returns);
    }
}
