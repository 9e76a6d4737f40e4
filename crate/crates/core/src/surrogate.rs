//! Deterministic stand-in for training a child network.
//!
//! `P = 0.98 (1 - exp(-params / P0)) (0.7 + 0.3 min(1, depth / D0)) (1 - 0.15 d)`
//! with `P0 = 2e5`, `D0 = 8` and `d = 1` when the network has no nonlinearity.
//! Size and depth both help with diminishing returns, so resource constraints
//! create a real trade-off.

use crate::arch::ArchGraph;
use crate::math::exp;
use crate::resource::count_params;

pub const P0: f64 = 2e5;
pub const D0: f64 = 8.0;

/// Surrogate performance from raw network statistics.
pub fn performance_from(params: u64, depth: u32, nonlinear: bool) -> f64 {
    let size = 1.0 - exp(-(params as f64) / P0);
    let deep = 0.7 + 0.3 * (depth as f64 / D0).min(1.0);
    let degenerate = if nonlinear { 1.0 } else { 0.85 };
    (0.98 * size * deep * degenerate).clamp(0.0, 1.0)
}

/// Surrogate performance of a valid graph; invalid graphs score 0.
///
/// Parameters include the classifier head; depth counts weighted hidden
/// sub-layers only.
pub fn performance(graph: &ArchGraph) -> f64 {
    match count_params(graph) {
        Ok((params, _)) => performance_from(params, graph.depth(), graph.has_nonlinearity()),
        Err(_) => 0.0,
    }
}
