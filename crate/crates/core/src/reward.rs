//! Performance reward softly penalized by resource-constraint violations.
//!
//! `r = P * prod_j p^V(U_j, C_j)` where `p` is the base penalty and `V` the
//! normalized violation of constraint `j`. Both constraint directions produce a
//! non-negative violation, so every violated constraint shrinks the reward.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::powf;
use crate::resource::ResourceReport;

/// Default base penalty.
pub const DEFAULT_BASE_PENALTY: f64 = 0.9;

/// A constrained resource metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ModelSizeBytes,
    Params,
    Flops,
    ComputeIntensity,
}

impl Metric {
    pub fn value(self, report: &ResourceReport) -> f64 {
        match self {
            Metric::ModelSizeBytes => report.model_size_bytes as f64,
            Metric::Params => report.params as f64,
            Metric::Flops => report.flops as f64,
            Metric::ComputeIntensity => report.compute_intensity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Satisfied when `U < C`.
    #[serde(rename = "<")]
    UpperBound,
    /// Satisfied when `U > C`.
    #[serde(rename = ">")]
    LowerBound,
}

/// A resource constraint, written `{"metric": "params", "op": "<", "value": 5e6}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub metric: Metric,
    #[serde(rename = "op")]
    pub direction: Direction,
    #[serde(rename = "value")]
    pub threshold: f64,
}

impl Constraint {
    pub fn upper(metric: Metric, threshold: f64) -> Self {
        Self {
            metric,
            direction: Direction::UpperBound,
            threshold,
        }
    }

    pub fn lower(metric: Metric, threshold: f64) -> Self {
        Self {
            metric,
            direction: Direction::LowerBound,
            threshold,
        }
    }
}

fn default_base_penalty() -> f64 {
    DEFAULT_BASE_PENALTY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    #[serde(default = "default_base_penalty")]
    pub base_penalty: f64,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            base_penalty: DEFAULT_BASE_PENALTY,
            constraints: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RewardConfigError {
    #[error("base penalty {0} outside (0, 1]")]
    BasePenalty(f64),
    #[error("constraint {0} has non-positive threshold")]
    Threshold(usize),
}

impl RewardConfig {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Self {
            constraints,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), RewardConfigError> {
        if !(self.base_penalty > 0.0 && self.base_penalty <= 1.0) {
            return Err(RewardConfigError::BasePenalty(self.base_penalty));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !(c.threshold > 0.0) {
                return Err(RewardConfigError::Threshold(i));
            }
        }
        Ok(())
    }

    /// Violation of every constraint for `report`, in constraint order.
    pub fn violations(&self, report: &ResourceReport) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| violation(c.metric.value(report), c))
            .collect()
    }

    /// Reward for performance `p` of a network with resource use `report`.
    pub fn reward_for(&self, performance: f64, report: &ResourceReport) -> f64 {
        reward(performance, &self.violations(report), self.base_penalty)
    }
}

/// Normalized violation of `c` at resource use `u` (always `>= 0`).
///
/// Upper bounds give `max(0, U - C) / C`; lower bounds give
/// `|min(0, U - C) / U|`, with `U = 0` counted as a full violation of 1.
pub fn violation(u: f64, c: &Constraint) -> f64 {
    match c.direction {
        Direction::UpperBound => (u - c.threshold).max(0.0) / c.threshold,
        Direction::LowerBound => {
            if u == 0.0 {
                1.0
            } else {
                ((u - c.threshold).min(0.0) / u).abs()
            }
        }
    }
}

/// `P * prod_j base_penalty^V_j`.
pub fn reward(performance: f64, violations: &[f64], base_penalty: f64) -> f64 {
    violations
        .iter()
        .fold(performance, |r, &v| r * powf(base_penalty, v))
}
