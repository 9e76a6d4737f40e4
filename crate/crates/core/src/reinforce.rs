//! Policy-gradient estimation over an episode of `N` rollouts of `T` steps.
//!
//! `g = 1/N sum_n sum_t grad log pi(a_{t,n}) (R_{t,n} - b_t)` where `R` is the
//! reward-to-go and `b_t` a per-timestep exponential moving average of the
//! batch-mean return. Advantages use the baseline from before the episode.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::action::ActionChoices;
use crate::arch::Architecture;
use crate::math::sqrt;
use crate::policy::{PolicyNet, PolicyParams};

pub const DEFAULT_DECAY: f64 = 0.9;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ReinforceError {
    #[error("rollouts have different lengths")]
    Ragged,
    #[error("non-finite reward at rollout {rollout}, step {step}")]
    NonFiniteReward { rollout: usize, step: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
}

/// Reward-to-go: `R_t = sum_{t' >= t} r_t'`.
pub fn returns(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        out[t] = acc;
    }
    out
}

/// Per-timestep baseline `b_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub decay: f64,
    /// Empty until the first update.
    pub values: Vec<f64>,
}

impl Default for BaselineState {
    fn default() -> Self {
        Self::new(DEFAULT_DECAY)
    }
}

impl BaselineState {
    pub fn new(decay: f64) -> Self {
        Self {
            decay,
            values: Vec::new(),
        }
    }

    /// `b_t`, or 0 before the first update.
    pub fn value(&self, t: usize) -> f64 {
        self.values.get(t).copied().unwrap_or(0.0)
    }

    /// Folds in the batch-mean returns of one episode (`returns[n][t]`). The
    /// first update sets the baseline to the batch mean.
    pub fn update(&mut self, returns: &[Vec<f64>]) {
        if returns.is_empty() {
            return;
        }
        let t_len = returns[0].len();
        let n = returns.len() as f64;
        let mean: Vec<f64> = (0..t_len)
            .map(|t| returns.iter().map(|r| r[t]).sum::<f64>() / n)
            .collect();
        if self.values.len() != t_len {
            self.values = mean;
            return;
        }
        for (b, m) in self.values.iter_mut().zip(mean) {
            *b = self.decay * *b + (1.0 - self.decay) * m;
        }
    }
}

/// Returns of every rollout, checking shape and finiteness.
pub fn episode_returns(rewards: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ReinforceError> {
    let t_len = rewards.first().map_or(0, Vec::len);
    for (n, r) in rewards.iter().enumerate() {
        if r.len() != t_len {
            return Err(ReinforceError::Ragged);
        }
        if let Some(t) = r.iter().position(|x| !x.is_finite()) {
            return Err(ReinforceError::NonFiniteReward { rollout: n, step: t });
        }
    }
    Ok(rewards.iter().map(|r| returns(r)).collect())
}

/// `R_{t,n} - b_t` for every step.
pub fn advantages(returns: &[Vec<f64>], baseline: &BaselineState) -> Vec<Vec<f64>> {
    returns
        .iter()
        .map(|r| r.iter().enumerate().map(|(t, &x)| x - baseline.value(t)).collect())
        .collect()
}

/// `1/N sum_n sum_t adv[n][t] * grad log pi(a_{t,n})`, with the per-step
/// gradient supplied by `accumulate(n, t, weight, grad)`.
pub fn estimate<F>(advantages: &[Vec<f64>], len: usize, mut accumulate: F) -> Result<Vec<f64>, ReinforceError>
where
    F: FnMut(usize, usize, f64, &mut [f64]),
{
    let mut g = vec![0.0; len];
    let n = advantages.len();
    if n == 0 {
        return Ok(g);
    }
    for (i, row) in advantages.iter().enumerate() {
        for (t, &a) in row.iter().enumerate() {
            if a != 0.0 {
                accumulate(i, t, a, &mut g);
            }
        }
    }
    let inv = 1.0 / n as f64;
    for x in &mut g {
        *x *= inv;
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(ReinforceError::NonFiniteGradient);
    }
    Ok(g)
}

/// One step of a trajectory: the state the action was sampled in and the
/// sampled choices. Steps whose action was not sampled from the policy (a
/// degraded keep) carry `choices: None` and contribute no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Architecture,
    pub choices: Option<ActionChoices>,
    pub reward: f64,
}

/// Policy gradient of an episode (`trajectories[n][t]`) under `baseline`.
pub fn policy_gradient(
    net: &PolicyNet,
    params: &PolicyParams,
    trajectories: &[Vec<Step>],
    baseline: &BaselineState,
) -> Result<Vec<f64>, ReinforceError> {
    let rewards: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|tr| tr.iter().map(|s| s.reward).collect())
        .collect();
    let adv = advantages(&episode_returns(&rewards)?, baseline);
    estimate(&adv, net.num_params(), |n, t, w, g| {
        let s = &trajectories[n][t];
        if let Some(c) = &s.choices {
            net.accumulate_grad(params, &s.state, c, w, g);
        }
    })
}

/// Rescales `g` to at most `max_norm` in Euclidean norm; returns the norm
/// before clipping.
pub fn clip_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = sqrt(g.iter().map(|x| x * x).sum());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for x in g.iter_mut() {
            *x *= s;
        }
    }
    norm
}
