//! Scale, insert and remove actions.
//!
//! An action first re-picks the scale features of every existing unit, then
//! applies at most one structural change. Choices are candidate indices into
//! the [`SearchSpace`]; [`decode`] turns them into an [`Action`] and [`apply`]
//! produces the mutated candidate or a rejection.
//!
//! Layer-mode wiring: inserting a layer with `src1 = s` places it directly
//! after source `s` and moves every consumer of `s` onto the new layer. For an
//! `Add`, the later of its two sources is the anchor. Removing layer `i`
//! rewires its consumers to its `src1`. `Add` layers sum when their sources
//! have equal channel counts and concatenate otherwise; the mode is re-derived
//! after every mutation.
//!
//! Module-mode wiring: a new branch is appended and every branch it reads from
//! stops propagating to the module output. Removing a branch rewires its
//! consumers to its `src1` and lets sources it had cut off propagate again.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::arch::{
    infer_shapes, validate, ArchError, ArchGraph, Architecture, BranchSpec, Combine, LayerKind,
    LayerSpec, ModuleArch, Violation, ViolationKind,
};
use crate::math::uniform_index;
use crate::space::{
    set_branch_value, set_layer_value, Feature, SearchMode, SearchSpace, UnitKind, Value,
};

/// Maximum attempts before a rejected action degrades to keep.
pub const MAX_RESAMPLES: usize = 10;

/// Outcome of the structural head, in head order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StructuralKind {
    Insert = 0,
    Keep = 1,
    Remove = 2,
}

impl StructuralKind {
    pub const ALL: [StructuralKind; 3] =
        [StructuralKind::Insert, StructuralKind::Keep, StructuralKind::Remove];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Raw sampled indices of one action.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActionChoices {
    /// Per unit, per scale feature (in [`SearchSpace::scale_features`] order).
    pub scale: Vec<Vec<usize>>,
    /// Per insert feature (in [`SearchSpace::insert_features`] order).
    pub insert: Vec<usize>,
    pub structural: StructuralKind,
    /// Slot of the unit to remove (meaningful only for remove).
    pub remove: usize,
}

impl ActionChoices {
    /// Choices that leave `arch` unchanged (current values, keep). Values
    /// outside the space snap to the nearest candidate.
    pub fn identity(space: &SearchSpace, arch: &Architecture) -> Self {
        let feats = space.scale_features();
        let scale = (0..arch.unit_count())
            .map(|i| {
                feats
                    .iter()
                    .map(|&f| current_index(space, arch, i, f).unwrap_or(0))
                    .collect()
            })
            .collect();
        Self {
            scale,
            insert: vec![0; space.insert_features().len()],
            structural: StructuralKind::Keep,
            remove: 0,
        }
    }
}

fn current_index(space: &SearchSpace, arch: &Architecture, i: usize, f: Feature) -> Option<usize> {
    let v = match arch {
        Architecture::Layers(g) => crate::space::layer_value(&g.layers[i], f),
        Architecture::Module(m) => crate::space::branch_value(&m.module.branches[i], f),
    }?;
    space.feature(f)?.bucket(v)
}

/// Structural part of an action.
#[derive(Clone, Debug, PartialEq)]
pub enum Structural {
    Keep,
    InsertLayer(LayerSpec),
    InsertBranch(BranchSpec),
    /// Index of the layer or branch to remove.
    Remove(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    /// Per unit, per scale feature candidate index.
    pub scale: Vec<Vec<usize>>,
    pub structural: Structural,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ActionError {
    #[error("choice {index} out of range for feature {feature:?}")]
    InvalidChoice { feature: Feature, index: usize },
    #[error("scale choices do not match the architecture")]
    ScaleShape,
    #[error("source {0} does not exist")]
    InvalidSource(usize),
    #[error("layer limit reached")]
    LayerLimit,
    #[error("branch limit reached")]
    BranchLimit,
    #[error("no branch propagates to the module output")]
    NoPropagatingBranch,
    #[error("removal would disconnect the network")]
    RemoveWouldDisconnect,
    #[error("action does not match the search mode")]
    ModeMismatch,
    #[error("shape underflow at layer {layer}")]
    ShapeUnderflow { layer: usize },
    #[error("{0}")]
    Invalid(ArchError),
}

impl From<ArchError> for ActionError {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::ShapeUnderflow { layer } => ActionError::ShapeUnderflow { layer },
            e => ActionError::Invalid(e),
        }
    }
}

fn check_violations(v: Vec<Violation>) -> Result<(), ActionError> {
    if v.is_empty() {
        return Ok(());
    }
    if let Some(u) = v.iter().find(|v| v.kind == ViolationKind::ShapeUnderflow) {
        return Err(ActionError::ShapeUnderflow {
            layer: u.index.unwrap_or(0),
        });
    }
    if v.iter().any(|v| v.kind == ViolationKind::NoPropagatingBranch) {
        return Err(ActionError::NoPropagatingBranch);
    }
    if v.iter().any(|v| v.kind == ViolationKind::BranchLimit) {
        return Err(ActionError::BranchLimit);
    }
    Err(ActionError::Invalid(ArchError::Invalid(v)))
}

fn candidate(space: &SearchSpace, f: Feature, index: usize) -> Result<Value, ActionError> {
    let fs = space
        .feature(f)
        .ok_or(ActionError::InvalidChoice { feature: f, index })?;
    fs.candidates
        .get(index)
        .copied()
        .ok_or(ActionError::InvalidChoice { feature: f, index })
}

/// Which structural outcomes are possible for `arch` (insert, keep, remove).
pub fn structural_mask(space: &SearchSpace, arch: &Architecture) -> [bool; 3] {
    let n = arch.unit_count();
    [n < space.max_units(), true, n > 1]
}

/// Which remove slots name an existing unit.
pub fn remove_mask(space: &SearchSpace, arch: &Architecture) -> Vec<bool> {
    let n = arch.unit_count();
    (0..space.slots()).map(|s| s < n && n > 1).collect()
}

/// Which source slots an inserted unit may read from.
pub fn source_mask(space: &SearchSpace, arch: &Architecture) -> Vec<bool> {
    let n = arch.unit_count();
    (0..space.slots()).map(|s| s <= n).collect()
}

/// Turns raw choices into an action.
pub fn decode(space: &SearchSpace, choices: &ActionChoices) -> Result<Action, ActionError> {
    let structural = match choices.structural {
        StructuralKind::Keep => Structural::Keep,
        StructuralKind::Remove => Structural::Remove(choices.remove),
        StructuralKind::Insert => {
            let feats = space.insert_features();
            if choices.insert.len() != feats.len() {
                return Err(ActionError::ScaleShape);
            }
            let mut values = Vec::with_capacity(feats.len());
            for (&f, &i) in feats.iter().zip(&choices.insert) {
                values.push((f, candidate(space, f, i)?));
            }
            match space.mode {
                SearchMode::LayerByLayer => Structural::InsertLayer(new_layer(space, &values)),
                SearchMode::Module => Structural::InsertBranch(new_branch(space, &values)),
            }
        }
    };
    Ok(Action {
        scale: choices.scale.clone(),
        structural,
    })
}

fn new_layer(space: &SearchSpace, values: &[(Feature, Value)]) -> LayerSpec {
    let kind = values
        .iter()
        .find_map(|(_, v)| match v {
            Value::Kind(k) => Some(*k),
            _ => None,
        })
        .unwrap_or(LayerKind::Fc);
    let mut layer = LayerSpec::template(kind, 0);
    for &(f, v) in values {
        if f == Feature::LayerKind || !space.applies(f, UnitKind::Layer(kind)) {
            continue;
        }
        set_layer_value(&mut layer, f, v);
    }
    if kind == LayerKind::Add && layer.src2.is_none() {
        layer.src2 = Some(layer.src1);
    }
    layer
}

fn new_branch(space: &SearchSpace, values: &[(Feature, Value)]) -> BranchSpec {
    let bt = values
        .iter()
        .find_map(|(_, v)| match v {
            Value::Branch(b) => Some(*b),
            _ => None,
        })
        .unwrap_or(crate::arch::BranchType::ConvNone);
    let mut b = BranchSpec::new(bt, 16, 0, 0);
    for &(f, v) in values {
        if f == Feature::BranchType || !space.applies(f, UnitKind::Branch(bt)) {
            continue;
        }
        set_branch_value(&mut b, f, v);
    }
    if !bt.uses_src2() {
        b.src2 = 0;
    }
    b
}

/// Applies `action` to `arch`: scale first, then the structural change. The
/// result is valid or the action is rejected.
pub fn apply(
    space: &SearchSpace,
    arch: &Architecture,
    action: &Action,
) -> Result<Architecture, ActionError> {
    let scaled = apply_scale(space, arch, &action.scale)?;
    let out = match (&action.structural, scaled) {
        (Structural::Keep, a) => a,
        (Structural::InsertLayer(l), Architecture::Layers(g)) => {
            Architecture::Layers(apply_insert_layer(&g, l.clone(), space.max_layers)?)
        }
        (Structural::InsertBranch(b), Architecture::Module(m)) => {
            Architecture::Module(apply_insert_branch(&m, b.clone(), space.max_branches)?)
        }
        (Structural::Remove(i), Architecture::Layers(g)) => {
            Architecture::Layers(apply_remove(&g, *i)?)
        }
        (Structural::Remove(i), Architecture::Module(m)) => {
            Architecture::Module(apply_remove_branch(&m, *i)?)
        }
        _ => return Err(ActionError::ModeMismatch),
    };
    check_violations(out.validate())?;
    Ok(out)
}

/// Decodes and applies raw choices.
pub fn apply_choices(
    space: &SearchSpace,
    arch: &Architecture,
    choices: &ActionChoices,
) -> Result<Architecture, ActionError> {
    apply(space, arch, &decode(space, choices)?)
}

/// Replaces every applicable scale feature of every unit by its chosen
/// candidate. Inapplicable features are ignored.
pub fn apply_scale(
    space: &SearchSpace,
    arch: &Architecture,
    scale: &[Vec<usize>],
) -> Result<Architecture, ActionError> {
    let feats = space.scale_features();
    if scale.len() != arch.unit_count() || scale.iter().any(|row| row.len() != feats.len()) {
        return Err(ActionError::ScaleShape);
    }
    let mut out = arch.clone();
    for (i, row) in scale.iter().enumerate() {
        for (&f, &c) in feats.iter().zip(row) {
            let v = candidate(space, f, c)?;
            match &mut out {
                Architecture::Layers(g) => {
                    let l = &mut g.layers[i];
                    if space.applies(f, UnitKind::Layer(l.kind)) {
                        set_layer_value(l, f, v);
                    }
                }
                Architecture::Module(m) => {
                    let b = &mut m.module.branches[i];
                    if space.applies(f, UnitKind::Branch(b.branch_type)) {
                        set_branch_value(b, f, v);
                    }
                }
            }
        }
    }
    if let Architecture::Layers(g) = &mut out {
        normalize_combine(g);
    }
    check_violations(out.validate())?;
    Ok(out)
}

/// Sets every `Add` layer to sum equal-channel sources and concatenate
/// otherwise. Stops at the first layer whose inputs cannot be shaped.
pub fn normalize_combine(graph: &mut ArchGraph) {
    for i in 0..graph.layers.len() {
        if graph.layers[i].kind != LayerKind::Add {
            continue;
        }
        let prefix = ArchGraph::new(
            graph.input_shape,
            graph.output_classes,
            graph.layers[..i].to_vec(),
        );
        let Ok(shapes) = infer_shapes(&prefix) else {
            return;
        };
        let channels = |s: usize| {
            if s == 0 {
                Some(graph.input_shape.channels)
            } else {
                shapes.get(s - 1).map(|t| t.channels)
            }
        };
        let l = &graph.layers[i];
        let (Some(a), Some(b)) = (channels(l.src1), l.src2.and_then(channels)) else {
            continue;
        };
        graph.layers[i].combine = if a == b { Combine::Add } else { Combine::Concat };
    }
}

/// Inserts `layer` after its anchor source, rewiring the anchor's consumers.
pub fn apply_insert_layer(
    graph: &ArchGraph,
    mut layer: LayerSpec,
    max_layers: usize,
) -> Result<ArchGraph, ActionError> {
    let n = graph.layers.len();
    if n >= max_layers {
        return Err(ActionError::LayerLimit);
    }
    for s in layer.sources() {
        if s > n {
            return Err(ActionError::InvalidSource(s));
        }
    }
    if layer.kind == LayerKind::Add {
        let s2 = layer.src2.ok_or(ActionError::InvalidSource(n + 1))?;
        if s2 > layer.src1 {
            layer.src2 = Some(layer.src1);
            layer.src1 = s2;
        }
    } else {
        layer.src2 = None;
    }
    let anchor = layer.src1;
    let mut layers = Vec::with_capacity(n + 1);
    for (i, l) in graph.layers.iter().enumerate() {
        if i == anchor {
            layers.push(layer.clone());
        }
        let mut l = l.clone();
        let shift = |s: usize| if s >= anchor { s + 1 } else { s };
        l.src1 = shift(l.src1);
        l.src2 = l.src2.map(shift);
        layers.push(l);
    }
    if anchor == n {
        layers.push(layer);
    }
    let mut out = ArchGraph::new(graph.input_shape, graph.output_classes, layers);
    normalize_combine(&mut out);
    check_violations(validate(&out))?;
    Ok(out)
}

/// Removes layer `index`, rewiring its consumers to its `src1`.
pub fn apply_remove(graph: &ArchGraph, index: usize) -> Result<ArchGraph, ActionError> {
    let n = graph.layers.len();
    if index >= n {
        return Err(ActionError::InvalidSource(index));
    }
    if n == 1 {
        return Err(ActionError::RemoveWouldDisconnect);
    }
    let removed = &graph.layers[index];
    let me = index + 1;
    let target = removed.src1;
    let mut layers = Vec::with_capacity(n - 1);
    for (i, l) in graph.layers.iter().enumerate() {
        if i == index {
            continue;
        }
        let mut l = l.clone();
        let remap = |s: usize| match s.cmp(&me) {
            core::cmp::Ordering::Less => s,
            core::cmp::Ordering::Equal => target,
            core::cmp::Ordering::Greater => s - 1,
        };
        l.src1 = remap(l.src1);
        l.src2 = l.src2.map(remap);
        layers.push(l);
    }
    let mut out = ArchGraph::new(graph.input_shape, graph.output_classes, layers);
    normalize_combine(&mut out);
    let v = validate(&out);
    if v.iter().any(|v| v.kind == ViolationKind::DeadEnd) {
        return Err(ActionError::RemoveWouldDisconnect);
    }
    check_violations(v)?;
    Ok(out)
}

/// Appends `branch`, cutting the branches it reads from off the module output.
pub fn apply_insert_branch(
    arch: &ModuleArch,
    mut branch: BranchSpec,
    max_branches: usize,
) -> Result<ModuleArch, ActionError> {
    let n = arch.module.branches.len();
    if n >= max_branches {
        return Err(ActionError::BranchLimit);
    }
    for s in branch.sources() {
        if s > n {
            return Err(ActionError::InvalidSource(s));
        }
    }
    if !branch.branch_type.uses_src2() {
        branch.src2 = 0;
    }
    let mut out = arch.clone();
    for s in branch.sources() {
        if s > 0 {
            out.module.branches[s - 1].propagate = false;
        }
    }
    if n == 0 {
        branch.propagate = true;
    }
    out.module.branches.push(branch);
    if out.module.propagating().next().is_none() {
        return Err(ActionError::NoPropagatingBranch);
    }
    check_violations(Architecture::Module(out.clone()).validate())?;
    Ok(out)
}

/// Removes branch `index` (0-based), rewiring its consumers to its `src1`.
pub fn apply_remove_branch(arch: &ModuleArch, index: usize) -> Result<ModuleArch, ActionError> {
    let n = arch.module.branches.len();
    if index >= n {
        return Err(ActionError::InvalidSource(index));
    }
    if n == 1 {
        return Err(ActionError::RemoveWouldDisconnect);
    }
    let me = index + 1;
    let removed = arch.module.branches[index].clone();
    let remap = |s: usize| match s.cmp(&me) {
        core::cmp::Ordering::Less => s,
        core::cmp::Ordering::Equal => removed.src1,
        core::cmp::Ordering::Greater => s - 1,
    };
    let mut out = arch.clone();
    out.module.branches.remove(index);
    for b in &mut out.module.branches {
        b.src1 = remap(b.src1);
        b.src2 = if b.branch_type.uses_src2() { remap(b.src2) } else { 0 };
    }
    // Sources the removed branch had cut off propagate again if nothing else
    // reads them.
    for s in removed.sources().filter(|&s| s > 0 && s != me) {
        let s = remap(s);
        let consumed = out.module.branches.iter().any(|b| b.sources().any(|x| x == s));
        if !consumed {
            out.module.branches[s - 1].propagate = true;
        }
    }
    if out.module.propagating().next().is_none() {
        return Err(ActionError::NoPropagatingBranch);
    }
    check_violations(Architecture::Module(out.clone()).validate())?;
    Ok(out)
}

/// Result of drawing actions until one applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal<T> {
    /// The accepted draw, or `None` when every attempt was rejected and the
    /// step degraded to keep.
    pub accepted: Option<(ActionChoices, T)>,
    pub next: Architecture,
    pub attempts: usize,
    pub last_error: Option<ActionError>,
}

/// Draws up to [`MAX_RESAMPLES`] actions and applies the first valid one;
/// otherwise keeps `arch` unchanged.
pub fn propose<T, F>(space: &SearchSpace, arch: &Architecture, mut draw: F) -> Proposal<T>
where
    F: FnMut() -> (ActionChoices, T),
{
    let mut last_error = None;
    for attempt in 1..=MAX_RESAMPLES {
        let (choices, extra) = draw();
        match apply_choices(space, arch, &choices) {
            Ok(next) => {
                return Proposal {
                    accepted: Some((choices, extra)),
                    next,
                    attempts: attempt,
                    last_error,
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    Proposal {
        accepted: None,
        next: arch.clone(),
        attempts: MAX_RESAMPLES,
        last_error,
    }
}

/// Uniformly random choices over every categorical (masked heads are uniform
/// over their valid entries).
pub fn random_choices<R: RngCore + ?Sized>(
    space: &SearchSpace,
    arch: &Architecture,
    rng: &mut R,
) -> ActionChoices {
    let scale_feats = space.scale_features();
    let sizes: Vec<usize> = scale_feats
        .iter()
        .map(|&f| space.feature(f).map_or(1, |fs| fs.candidates.len()))
        .collect();
    let scale = (0..arch.unit_count())
        .map(|_| sizes.iter().map(|&k| uniform_index(rng, k)).collect())
        .collect();
    let src = source_mask(space, arch);
    let insert = space
        .insert_features()
        .into_iter()
        .map(|f| {
            let k = space.feature(f).map_or(1, |fs| fs.candidates.len());
            if f.is_source() {
                pick_masked(rng, &src[..k.min(src.len())])
            } else {
                uniform_index(rng, k)
            }
        })
        .collect();
    let smask = structural_mask(space, arch);
    let structural = StructuralKind::ALL[pick_masked(rng, &smask)];
    let remove = pick_masked(rng, &remove_mask(space, arch));
    ActionChoices {
        scale,
        insert,
        structural,
        remove,
    }
}

fn pick_masked<R: RngCore + ?Sized>(rng: &mut R, mask: &[bool]) -> usize {
    let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if valid.is_empty() {
        return 0;
    }
    valid[uniform_index(rng, valid.len())]
}
