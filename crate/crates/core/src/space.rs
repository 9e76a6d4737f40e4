//! Feature-wise search spaces.
//!
//! A search space is an ordered list of features, each with its candidate
//! values. Scale actions re-pick the value of every non-structural feature of
//! every unit; insert actions pick every feature of a new unit. Features that do
//! not apply to a unit's kind (pooling width of a convolution, say) are carried
//! along and ignored.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arch::{
    Activation, ArchGraph, Architecture, BranchSpec, BranchType, LayerKind, LayerSpec,
    Violation, ViolationKind, MAX_BRANCHES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[serde(rename = "layers")]
    LayerByLayer,
    Module,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    LayerKind,
    /// Number of stacked sub-layers.
    Repeat,
    KernelT,
    KernelF,
    /// Square convolution width (sets both kernel sizes).
    FilterWidth,
    /// Square pooling window; in layer mode it is also the pooling stride.
    PoolWidth,
    /// Channels or hidden units.
    Channels,
    StrideT,
    /// Frequency stride, or dilation rate for dilated convolutions.
    StrideF,
    Directions,
    Activation,
    DropoutKeep,
    Src1,
    Src2,
    BranchType,
    Propagate,
}

impl Feature {
    /// Features that wire or type a unit; scale actions never touch them.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            Feature::LayerKind
                | Feature::Src1
                | Feature::Src2
                | Feature::BranchType
                | Feature::Propagate
        )
    }

    pub fn is_source(self) -> bool {
        matches!(self, Feature::Src1 | Feature::Src2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::LayerKind => "layer_kind",
            Feature::Repeat => "repeat",
            Feature::KernelT => "kernel_t",
            Feature::KernelF => "kernel_f",
            Feature::FilterWidth => "filter_width",
            Feature::PoolWidth => "pool_width",
            Feature::Channels => "channels",
            Feature::StrideT => "stride_t",
            Feature::StrideF => "stride_f",
            Feature::Directions => "directions",
            Feature::Activation => "activation",
            Feature::DropoutKeep => "dropout_keep",
            Feature::Src1 => "src1",
            Feature::Src2 => "src2",
            Feature::BranchType => "branch_type",
            Feature::Propagate => "propagate",
        }
    }
}

/// A candidate value of some feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Flag(bool),
    Int(u32),
    Real(f64),
    Kind(LayerKind),
    Activation(Activation),
    Branch(BranchType),
}

impl Value {
    fn as_int(self) -> Option<u32> {
        match self {
            Value::Int(v) => Some(v),
            _ => None,
        }
    }

    /// Distance used to bucket off-grid values onto candidates.
    fn distance(self, other: Value) -> Option<f64> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some((a as f64 - b as f64).abs()),
            (Value::Real(a), Value::Real(b)) => Some((a - b).abs()),
            (Value::Int(a), Value::Real(b)) | (Value::Real(b), Value::Int(a)) => {
                Some((a as f64 - b).abs())
            }
            (a, b) if a == b => Some(0.0),
            _ => None,
        }
    }
}

/// One feature and its candidate values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub feature: Feature,
    pub candidates: Vec<Value>,
}

impl FeatureSpace {
    pub fn new(feature: Feature, candidates: Vec<Value>) -> Self {
        Self {
            feature,
            candidates,
        }
    }

    fn ints(feature: Feature, values: &[u32]) -> Self {
        Self::new(feature, values.iter().map(|&v| Value::Int(v)).collect())
    }

    /// Index of the candidate equal to `v`, or of the nearest one.
    pub fn bucket(&self, v: Value) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.candidates.iter().enumerate() {
            if let Some(d) = c.distance(v) {
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn contains(&self, v: Value) -> bool {
        self.candidates.contains(&v)
    }
}

/// The kind of a searchable unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Layer(LayerKind),
    Branch(BranchType),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub mode: SearchMode,
    pub features: Vec<FeatureSpace>,
    /// Upper bound on layers (layer mode); also the width of source heads.
    #[serde(default = "default_max_layers")]
    pub max_layers: usize,
    #[serde(default = "default_max_branches")]
    pub max_branches: usize,
}

fn default_max_layers() -> usize {
    20
}

fn default_max_branches() -> usize {
    MAX_BRANCHES
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("feature {0:?} has no candidates")]
    EmptyCandidates(Feature),
    #[error("feature {0:?} listed twice")]
    DuplicateFeature(Feature),
    #[error("feature {0:?} is not used in this search mode")]
    ForeignFeature(Feature),
    #[error("feature {0:?} is required in this search mode")]
    MissingFeature(Feature),
    #[error("candidate {1:?} has the wrong type for feature {0:?}")]
    CandidateType(Feature, Value),
    #[error("max_branches must be in 1..={MAX_BRANCHES}")]
    MaxBranches,
    #[error("max_layers must be at least 1")]
    MaxLayers,
}

impl SearchSpace {
    /// Layer-by-layer image classification space.
    pub fn image_layers() -> Self {
        use LayerKind::*;
        Self {
            mode: SearchMode::LayerByLayer,
            features: vec![
                FeatureSpace::new(
                    Feature::LayerKind,
                    vec![Conv2d, DepSepConv2d, MaxPool2d, Add]
                        .into_iter()
                        .map(Value::Kind)
                        .collect(),
                ),
                FeatureSpace::ints(Feature::FilterWidth, &[3, 5, 7]),
                FeatureSpace::ints(Feature::PoolWidth, &[2, 3]),
                FeatureSpace::ints(Feature::Channels, &[16, 32, 64, 96, 128, 256]),
                FeatureSpace::new(
                    Feature::Activation,
                    [
                        Activation::Relu,
                        Activation::Crelu,
                        Activation::Elu,
                        Activation::Selu,
                        Activation::Swish,
                    ]
                    .into_iter()
                    .map(Value::Activation)
                    .collect(),
                ),
                Self::sources(Feature::Src1, default_max_layers()),
                Self::sources(Feature::Src2, default_max_layers()),
            ],
            max_layers: default_max_layers(),
            max_branches: MAX_BRANCHES,
        }
    }

    /// Layer-by-layer keyword spotting space.
    pub fn kws_layers() -> Self {
        use LayerKind::*;
        Self {
            mode: SearchMode::LayerByLayer,
            features: vec![
                FeatureSpace::new(
                    Feature::LayerKind,
                    vec![Conv2d, DepSepConv2d, DilatedConv2d, Gru, AvgPool2d, Fc]
                        .into_iter()
                        .map(Value::Kind)
                        .collect(),
                ),
                FeatureSpace::ints(Feature::Repeat, &[1, 2, 3, 4, 5]),
                FeatureSpace::ints(Feature::KernelT, &[1, 4, 8, 16, 20]),
                FeatureSpace::ints(Feature::KernelF, &[1, 2, 4, 8, 10]),
                FeatureSpace::ints(Feature::Channels, &[4, 12, 16, 32, 64, 128, 192, 256]),
                FeatureSpace::ints(Feature::StrideT, &[1, 2, 4, 8, 10]),
                FeatureSpace::ints(Feature::StrideF, &[1, 2, 3, 4, 5]),
                FeatureSpace::ints(Feature::Directions, &[1, 2]),
                FeatureSpace::new(
                    Feature::DropoutKeep,
                    vec![Value::Real(0.8), Value::Real(0.9), Value::Real(1.0)],
                ),
                Self::sources(Feature::Src1, default_max_layers()),
                Self::sources(Feature::Src2, default_max_layers()),
            ],
            max_layers: default_max_layers(),
            max_branches: MAX_BRANCHES,
        }
    }

    /// Module search space for image classification.
    pub fn image_module() -> Self {
        Self {
            mode: SearchMode::Module,
            features: vec![
                FeatureSpace::new(
                    Feature::BranchType,
                    BranchType::ALL.into_iter().map(Value::Branch).collect(),
                ),
                FeatureSpace::ints(Feature::FilterWidth, &[3, 5, 7]),
                FeatureSpace::ints(Feature::PoolWidth, &[2, 3]),
                FeatureSpace::ints(Feature::Channels, &[8, 12, 16, 24, 32]),
                Self::sources(Feature::Src1, MAX_BRANCHES + 1),
                Self::sources(Feature::Src2, MAX_BRANCHES + 1),
                FeatureSpace::new(Feature::Propagate, vec![Value::Flag(false), Value::Flag(true)]),
            ],
            max_layers: default_max_layers(),
            max_branches: MAX_BRANCHES,
        }
    }

    /// A preset by name: `image-layers`, `kws-layers` or `image-module`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "image-layers" => Some(Self::image_layers()),
            "kws-layers" => Some(Self::kws_layers()),
            "image-module" => Some(Self::image_module()),
            _ => None,
        }
    }

    fn sources(feature: Feature, n: usize) -> FeatureSpace {
        FeatureSpace::new(feature, (0..n as u32).map(Value::Int).collect())
    }

    pub fn check(&self) -> Result<(), SpaceError> {
        if self.max_layers == 0 {
            return Err(SpaceError::MaxLayers);
        }
        if self.max_branches == 0 || self.max_branches > MAX_BRANCHES {
            return Err(SpaceError::MaxBranches);
        }
        let mut seen = Vec::new();
        for fs in &self.features {
            if seen.contains(&fs.feature) {
                return Err(SpaceError::DuplicateFeature(fs.feature));
            }
            seen.push(fs.feature);
            if fs.candidates.is_empty() {
                return Err(SpaceError::EmptyCandidates(fs.feature));
            }
            let foreign = match self.mode {
                SearchMode::LayerByLayer => {
                    matches!(fs.feature, Feature::BranchType | Feature::Propagate)
                }
                SearchMode::Module => !matches!(
                    fs.feature,
                    Feature::BranchType
                        | Feature::FilterWidth
                        | Feature::PoolWidth
                        | Feature::Channels
                        | Feature::Src1
                        | Feature::Src2
                        | Feature::Propagate
                ),
            };
            if foreign {
                return Err(SpaceError::ForeignFeature(fs.feature));
            }
            for &c in &fs.candidates {
                let ok = match fs.feature {
                    Feature::LayerKind => matches!(c, Value::Kind(_)),
                    Feature::Activation => matches!(c, Value::Activation(_)),
                    Feature::BranchType => matches!(c, Value::Branch(_)),
                    Feature::Propagate => matches!(c, Value::Flag(_)),
                    Feature::DropoutKeep => match c {
                        Value::Real(v) => v > 0.0 && v <= 1.0,
                        Value::Int(1) => true,
                        _ => false,
                    },
                    Feature::Src1 | Feature::Src2 => matches!(c, Value::Int(_)),
                    Feature::Directions => matches!(c, Value::Int(1 | 2)),
                    _ => matches!(c, Value::Int(v) if v > 0),
                };
                if !ok {
                    return Err(SpaceError::CandidateType(fs.feature, c));
                }
            }
        }
        let required: &[Feature] = match self.mode {
            SearchMode::LayerByLayer => &[Feature::LayerKind, Feature::Src1],
            SearchMode::Module => &[Feature::BranchType, Feature::Src1],
        };
        for f in required {
            if !seen.contains(f) {
                return Err(SpaceError::MissingFeature(*f));
            }
        }
        Ok(())
    }

    pub fn feature(&self, f: Feature) -> Option<&FeatureSpace> {
        self.features.iter().find(|fs| fs.feature == f)
    }

    pub fn has(&self, f: Feature) -> bool {
        self.feature(f).is_some()
    }

    /// Features re-picked by a scale action, in order.
    pub fn scale_features(&self) -> Vec<Feature> {
        self.features
            .iter()
            .map(|fs| fs.feature)
            .filter(|f| !f.is_structural())
            .collect()
    }

    /// Features picked for a newly inserted unit, in order.
    pub fn insert_features(&self) -> Vec<Feature> {
        self.features.iter().map(|fs| fs.feature).collect()
    }

    /// Features that describe a unit to the network embedding (everything but
    /// wiring).
    pub fn embed_features(&self) -> Vec<Feature> {
        self.features
            .iter()
            .map(|fs| fs.feature)
            .filter(|f| !f.is_source())
            .collect()
    }

    /// Number of slots in source and remove heads.
    pub fn slots(&self) -> usize {
        match self.mode {
            SearchMode::LayerByLayer => self.max_layers,
            SearchMode::Module => self.max_branches + 1,
        }
    }

    pub fn max_units(&self) -> usize {
        match self.mode {
            SearchMode::LayerByLayer => self.max_layers,
            SearchMode::Module => self.max_branches,
        }
    }

    /// Whether `f` is meaningful for a unit of kind `kind` in this space.
    pub fn applies(&self, f: Feature, kind: UnitKind) -> bool {
        match kind {
            UnitKind::Layer(k) => layer_feature_applies(f, k),
            UnitKind::Branch(b) => branch_feature_applies(f, b),
        }
    }

    /// Out-of-space values of a layer graph (wiring is checked against
    /// `max_layers` only).
    pub fn check_graph(&self, graph: &ArchGraph) -> Vec<Violation> {
        let mut out = Vec::new();
        if graph.layers.len() > self.max_layers {
            out.push(Violation::new(None, ViolationKind::OutOfSpace("max_layers")));
        }
        for (i, layer) in graph.layers.iter().enumerate() {
            let kind = UnitKind::Layer(layer.kind);
            for fs in &self.features {
                if fs.feature.is_source() || !self.applies(fs.feature, kind) {
                    continue;
                }
                if let Some(v) = layer_value(layer, fs.feature) {
                    if !fs.contains(v) {
                        out.push(Violation::at(i, ViolationKind::OutOfSpace(fs.feature.name())));
                    }
                }
            }
        }
        out
    }

    /// Out-of-space values of a module.
    pub fn check_module(&self, branches: &[BranchSpec]) -> Vec<Violation> {
        let mut out = Vec::new();
        if branches.len() > self.max_branches {
            out.push(Violation::new(None, ViolationKind::BranchLimit));
        }
        for (i, b) in branches.iter().enumerate() {
            let kind = UnitKind::Branch(b.branch_type);
            for fs in &self.features {
                if fs.feature.is_source() || !self.applies(fs.feature, kind) {
                    continue;
                }
                if let Some(v) = branch_value(b, fs.feature) {
                    if !fs.contains(v) {
                        out.push(Violation::at(i, ViolationKind::OutOfSpace(fs.feature.name())));
                    }
                }
            }
        }
        out
    }

    /// Out-of-space values of any candidate.
    pub fn check_arch(&self, arch: &Architecture) -> Vec<Violation> {
        match (arch, self.mode) {
            (Architecture::Layers(g), SearchMode::LayerByLayer) => self.check_graph(g),
            (Architecture::Module(m), SearchMode::Module) => self.check_module(&m.module.branches),
            _ => vec![Violation::new(None, ViolationKind::OutOfSpace("mode"))],
        }
    }

    /// Kinds of every unit of `arch`.
    pub fn unit_kinds(arch: &Architecture) -> Vec<UnitKind> {
        match arch {
            Architecture::Layers(g) => g.layers.iter().map(|l| UnitKind::Layer(l.kind)).collect(),
            Architecture::Module(m) => m
                .module
                .branches
                .iter()
                .map(|b| UnitKind::Branch(b.branch_type))
                .collect(),
        }
    }

    /// Candidate indices describing unit `i` of `arch` for each embed feature
    /// (`None` when the feature does not apply).
    pub fn describe_unit(&self, arch: &Architecture, i: usize) -> Vec<Option<usize>> {
        self.embed_features()
            .into_iter()
            .map(|f| {
                let fs = self.feature(f).expect("embed feature in space");
                let v = match arch {
                    Architecture::Layers(g) => {
                        let l = &g.layers[i];
                        if !self.applies(f, UnitKind::Layer(l.kind)) {
                            return None;
                        }
                        layer_value(l, f)
                    }
                    Architecture::Module(m) => {
                        let b = &m.module.branches[i];
                        if !self.applies(f, UnitKind::Branch(b.branch_type)) {
                            return None;
                        }
                        branch_value(b, f)
                    }
                }?;
                fs.bucket(v)
            })
            .collect()
    }
}

fn layer_feature_applies(f: Feature, k: LayerKind) -> bool {
    use LayerKind::*;
    let conv = k.is_conv();
    let pool = k.is_pool();
    match f {
        Feature::LayerKind | Feature::Src1 => true,
        Feature::Repeat => k != Add,
        Feature::KernelT | Feature::KernelF | Feature::StrideT | Feature::StrideF => conv || pool,
        Feature::FilterWidth => conv,
        Feature::PoolWidth => pool,
        Feature::Channels => conv || matches!(k, Gru | Fc),
        Feature::Directions => k == Gru,
        Feature::Activation => conv || k == Fc,
        Feature::DropoutKeep => conv || matches!(k, Gru | Fc),
        Feature::Src2 => k == Add,
        Feature::BranchType | Feature::Propagate => false,
    }
}

fn branch_feature_applies(f: Feature, b: BranchType) -> bool {
    match f {
        Feature::BranchType | Feature::Src1 | Feature::Propagate => true,
        Feature::FilterWidth => b.has_square_conv(),
        Feature::PoolWidth => b.has_pool(),
        Feature::Channels => b.has_weights(),
        Feature::Src2 => b.uses_src2(),
        _ => false,
    }
}

/// Current value of feature `f` on `layer`.
pub fn layer_value(layer: &LayerSpec, f: Feature) -> Option<Value> {
    Some(match f {
        Feature::LayerKind => Value::Kind(layer.kind),
        Feature::Repeat => Value::Int(layer.repeat),
        Feature::KernelT => Value::Int(layer.kernel_t),
        Feature::KernelF => Value::Int(layer.kernel_f),
        Feature::FilterWidth | Feature::PoolWidth => Value::Int(layer.kernel_t),
        Feature::Channels => Value::Int(layer.channels_or_hidden),
        Feature::StrideT => Value::Int(layer.stride_t),
        Feature::StrideF => Value::Int(layer.stride_f_or_dilation),
        Feature::Directions => Value::Int(layer.directions),
        Feature::Activation => Value::Activation(layer.activation),
        Feature::DropoutKeep => Value::Real(layer.dropout_keep),
        Feature::Src1 => Value::Int(layer.src1 as u32),
        Feature::Src2 => Value::Int(layer.src2? as u32),
        Feature::BranchType | Feature::Propagate => return None,
    })
}

/// Sets feature `f` of `layer` to `v`. Returns false when the value has the
/// wrong type for the feature.
pub fn set_layer_value(layer: &mut LayerSpec, f: Feature, v: Value) -> bool {
    match (f, v) {
        (Feature::LayerKind, Value::Kind(k)) => layer.kind = k,
        (Feature::Repeat, Value::Int(x)) => layer.repeat = x,
        (Feature::KernelT, Value::Int(x)) => layer.kernel_t = x,
        (Feature::KernelF, Value::Int(x)) => layer.kernel_f = x,
        (Feature::FilterWidth, Value::Int(x)) => {
            layer.kernel_t = x;
            layer.kernel_f = x;
        }
        (Feature::PoolWidth, Value::Int(x)) => {
            layer.kernel_t = x;
            layer.kernel_f = x;
            layer.stride_t = x;
            layer.stride_f_or_dilation = x;
        }
        (Feature::Channels, Value::Int(x)) => layer.channels_or_hidden = x,
        (Feature::StrideT, Value::Int(x)) => layer.stride_t = x,
        (Feature::StrideF, Value::Int(x)) => layer.stride_f_or_dilation = x,
        (Feature::Directions, Value::Int(x)) => layer.directions = x,
        (Feature::Activation, Value::Activation(a)) => layer.activation = a,
        (Feature::DropoutKeep, Value::Real(x)) => layer.dropout_keep = x,
        (Feature::DropoutKeep, Value::Int(x)) => layer.dropout_keep = x as f64,
        (Feature::Src1, Value::Int(x)) => layer.src1 = x as usize,
        (Feature::Src2, Value::Int(x)) => layer.src2 = Some(x as usize),
        _ => return false,
    }
    true
}

/// Current value of feature `f` on `branch`.
pub fn branch_value(branch: &BranchSpec, f: Feature) -> Option<Value> {
    Some(match f {
        Feature::BranchType => Value::Branch(branch.branch_type),
        Feature::FilterWidth => Value::Int(branch.filter_width),
        Feature::PoolWidth => Value::Int(branch.pooling_width),
        Feature::Channels => Value::Int(branch.channels),
        Feature::Src1 => Value::Int(branch.src1 as u32),
        Feature::Src2 => Value::Int(branch.src2 as u32),
        Feature::Propagate => Value::Flag(branch.propagate),
        _ => return None,
    })
}

pub fn set_branch_value(branch: &mut BranchSpec, f: Feature, v: Value) -> bool {
    match (f, v) {
        (Feature::BranchType, Value::Branch(b)) => branch.branch_type = b,
        (Feature::FilterWidth, Value::Int(x)) => branch.filter_width = x,
        (Feature::PoolWidth, Value::Int(x)) => branch.pooling_width = x,
        (Feature::Channels, Value::Int(x)) => branch.channels = x,
        (Feature::Src1, Value::Int(x)) => branch.src1 = x as usize,
        (Feature::Src2, Value::Int(x)) => branch.src2 = x as usize,
        (Feature::Propagate, Value::Flag(p)) => branch.propagate = p,
        (Feature::Propagate, Value::Int(p)) => branch.propagate = p != 0,
        _ => return false,
    }
    true
}

impl Value {
    pub fn int(self) -> Option<u32> {
        self.as_int()
    }
}
