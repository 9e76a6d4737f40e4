// Module (cell) validation and stacking into a full network.
//
// Stacking convention: a 3x3 stem convolution with the module's smallest
// channel count, `repeats` copies of the module split as evenly as possible into
// `stages` stages (earlier stages take the remainder), a stride-2 2x2 max pool
// between stages, and branch channels doubled at every stage. The implicit
// classifier head of `ArchGraph` closes the network.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    validate, ArchError, ArchGraph, Combine, LayerKind, LayerSpec,
    ModuleSpec, TensorShape, Violation, ViolationKind as VK,
};

/// One of the two operations of a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchOp {
    Conv,
    MaxPool,
    AvgPool,
    /// A 1x7 convolution followed by a 7x1 convolution.
    Sep1x7_7x1,
    None,
}

impl BranchOp {
    pub fn is_pool(self) -> bool {
        matches!(self, BranchOp::MaxPool | BranchOp::AvgPool)
    }
}

fn default_repeats() -> u32 {
    6
}

fn default_stages() -> u32 {
    3
}

/// How a module is turned into a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackingConfig {
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_stages")]
    pub stages: u32,
    /// Replaces the default stem when set. Its `src1` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<LayerSpec>,
    /// Extra layers between the last module and the classifier head, each
    /// reading the previous one. Their `src1` is ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub head: Vec<LayerSpec>,
}

impl Default for StackingConfig {
    fn default() -> Self {
        Self {
            repeats: default_repeats(),
            stages: default_stages(),
            stem: None,
            head: Vec::new(),
        }
    }
}

impl StackingConfig {
    pub fn with_repeats(repeats: u32) -> Self {
        Self {
            repeats,
            ..Self::default()
        }
    }

    /// Number of module copies in each stage.
    pub fn stage_sizes(&self) -> Vec<u32> {
        let stages = self.stages.clamp(1, self.repeats.max(1));
        let base = self.repeats / stages;
        let extra = self.repeats % stages;
        (0..stages).map(|s| base + u32::from(s < extra)).collect()
    }
}

/// Every invariant violation of a module (indices are 0-based branch indices).
pub fn validate_module(module: &ModuleSpec, max_branches: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if module.branches.is_empty() {
        out.push(Violation::new(None, VK::Empty));
        return out;
    }
    if module.branches.len() > max_branches {
        out.push(Violation::new(None, VK::BranchLimit));
    }
    for (b, branch) in module.branches.iter().enumerate() {
        // Branch b (0-based) may read the module input (0) or branches 1..=b.
        if branch.sources().any(|s| s > b) {
            out.push(Violation::at(b, VK::ForwardReference));
        }
        if branch.channels == 0 {
            out.push(Violation::at(b, VK::InvalidField("channels")));
        }
        if branch.branch_type.has_square_conv() && branch.filter_width == 0 {
            out.push(Violation::at(b, VK::InvalidField("filter_width")));
        }
        if branch.branch_type.has_pool() && branch.pooling_width == 0 {
            out.push(Violation::at(b, VK::InvalidField("pooling_width")));
        }
    }
    if module.propagating().next().is_none() {
        out.push(Violation::new(None, VK::NoPropagatingBranch));
    }
    out
}

/// Builds the full network for `module`.
pub fn stack_module(
    module: &ModuleSpec,
    stacking: &StackingConfig,
    input_shape: TensorShape,
    output_classes: u32,
) -> Result<ArchGraph, ArchError> {
    let violations = validate_module(module, usize::MAX);
    if !violations.is_empty() {
        return Err(ArchError::Invalid(violations));
    }
    if stacking.repeats == 0 {
        return Err(ArchError::Invalid(vec![Violation::new(
            None,
            VK::InvalidField("repeats"),
        )]));
    }

    let mut layers: Vec<LayerSpec> = Vec::new();
    let min_channels = module.branches.iter().map(|b| b.channels).min().unwrap_or(1);
    let mut stem = stacking
        .stem
        .clone()
        .unwrap_or_else(|| LayerSpec::conv2d(min_channels, (3, 3), (1, 1), 0));
    stem.src1 = 0;
    stem.src2 = None;
    layers.push(stem);
    let mut cur = layers.len();

    let live = live_branches(module);
    for (stage, &copies) in stacking.stage_sizes().iter().enumerate() {
        if stage > 0 {
            layers.push(LayerSpec::pool(LayerKind::MaxPool2d, (2, 2), (2, 2), cur));
            cur = layers.len();
        }
        let widen = 1u32 << stage.min(16);
        for _ in 0..copies {
            cur = emit_module(module, &live, widen, cur, &mut layers);
        }
    }
    for extra in &stacking.head {
        let mut l = extra.clone();
        l.src1 = cur;
        l.src2 = None;
        layers.push(l);
        cur = layers.len();
    }

    let graph = ArchGraph::new(input_shape, output_classes, layers);
    super::shape::trace(&graph)?;
    let v = validate(&graph);
    if !v.is_empty() {
        return Err(ArchError::Invalid(v));
    }
    Ok(graph)
}

/// Branches that contribute to the module output, directly or through a
/// propagating consumer.
fn live_branches(module: &ModuleSpec) -> Vec<bool> {
    let n = module.branches.len();
    let mut live: Vec<bool> = module.branches.iter().map(|b| b.propagate).collect();
    for b in (0..n).rev() {
        if !live[b] {
            continue;
        }
        for s in module.branches[b].sources() {
            if s >= 1 {
                live[s - 1] = true;
            }
        }
    }
    live
}

fn emit_module(
    module: &ModuleSpec,
    live: &[bool],
    widen: u32,
    input: usize,
    layers: &mut Vec<LayerSpec>,
) -> usize {
    // outputs[j] is the source index of branch j (1-based); 0 is the module input.
    let mut outputs = vec![input; module.branches.len() + 1];
    for (b, branch) in module.branches.iter().enumerate() {
        if !live[b] {
            continue;
        }
        let (op1, op2) = branch.branch_type.ops();
        let channels = branch.channels * widen;
        let first = emit_op(op1, branch, channels, outputs[branch.src1], layers);
        let out = if op2 == BranchOp::None {
            first
        } else {
            let second = emit_op(op2, branch, channels, outputs[branch.src2], layers);
            layers.push(LayerSpec::add(first, second, Combine::Concat));
            layers.len()
        };
        outputs[b + 1] = out;
    }
    let mut propagating = module.propagating().map(|b| outputs[b + 1]);
    let mut acc = propagating.next().expect("validated module has a propagating branch");
    for next in propagating {
        layers.push(LayerSpec::add(acc, next, Combine::Concat));
        acc = layers.len();
    }
    acc
}

fn emit_op(
    op: BranchOp,
    branch: &super::BranchSpec,
    channels: u32,
    src: usize,
    layers: &mut Vec<LayerSpec>,
) -> usize {
    let w = branch.filter_width;
    let p = branch.pooling_width;
    match op {
        BranchOp::Conv => layers.push(LayerSpec::conv2d(channels, (w, w), (1, 1), src)),
        BranchOp::MaxPool => layers.push(LayerSpec::pool(LayerKind::MaxPool2d, (p, p), (1, 1), src)),
        BranchOp::AvgPool => layers.push(LayerSpec::pool(LayerKind::AvgPool2d, (p, p), (1, 1), src)),
        BranchOp::Sep1x7_7x1 => {
            layers.push(LayerSpec::conv2d(channels, (1, 7), (1, 1), src));
            let mid = layers.len();
            layers.push(LayerSpec::conv2d(channels, (7, 1), (1, 1), mid));
        }
        BranchOp::None => return src,
    }
    layers.len()
}
