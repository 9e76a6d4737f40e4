//! Architecture IR for both search granularities.
//!
//! A layer-by-layer candidate is an [`ArchGraph`]: an ordered list of layers in
//! topological order, each reading from strictly earlier sources. Sources are
//! numbered so that `0` is the network input and `i + 1` is the output of
//! `layers[i]`. The last layer is the single output sink; it feeds an implicit
//! classifier head (global average pool followed by a fully connected layer
//! with `output_classes` units) that every network carries.
//!
//! A module-search candidate is a [`ModuleArch`]: a multi-branch cell
//! ([`ModuleSpec`]) that [`stack_module`] turns into a full [`ArchGraph`].

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

mod module;
mod shape;

pub use module::{stack_module, validate_module, BranchOp, StackingConfig};
pub use shape::{infer_shapes, trace, validate, LayerTrace, SubLayer};

/// Maximum number of branches in a module.
pub const MAX_BRANCHES: usize = 5;

/// Height/width/channels of an activation tensor (batch size 1).
///
/// For audio inputs the first axis is time and the second frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct TensorShape {
    pub time_or_height: u32,
    pub freq_or_width: u32,
    pub channels: u32,
}

impl TensorShape {
    pub const fn new(time_or_height: u32, freq_or_width: u32, channels: u32) -> Self {
        Self {
            time_or_height,
            freq_or_width,
            channels,
        }
    }

    pub fn elements(&self) -> u64 {
        self.time_or_height as u64 * self.freq_or_width as u64 * self.channels as u64
    }

    pub fn spatial(&self) -> u64 {
        self.time_or_height as u64 * self.freq_or_width as u64
    }

    pub fn is_positive(&self) -> bool {
        self.time_or_height > 0 && self.freq_or_width > 0 && self.channels > 0
    }
}

impl From<[u32; 3]> for TensorShape {
    fn from(v: [u32; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<TensorShape> for [u32; 3] {
    fn from(s: TensorShape) -> Self {
        [s.time_or_height, s.freq_or_width, s.channels]
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}",
            self.time_or_height, self.freq_or_width, self.channels
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d,
    DepSepConv2d,
    DilatedConv2d,
    #[serde(rename = "GRU")]
    Gru,
    AvgPool2d,
    MaxPool2d,
    #[serde(rename = "FC")]
    Fc,
    Add,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Conv2d,
        LayerKind::DepSepConv2d,
        LayerKind::DilatedConv2d,
        LayerKind::Gru,
        LayerKind::AvgPool2d,
        LayerKind::MaxPool2d,
        LayerKind::Fc,
        LayerKind::Add,
    ];

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::DepSepConv2d | LayerKind::DilatedConv2d
        )
    }

    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::AvgPool2d | LayerKind::MaxPool2d)
    }

    /// Kinds that carry weights.
    pub fn has_weights(self) -> bool {
        self.is_conv() || matches!(self, LayerKind::Gru | LayerKind::Fc)
    }

    /// Kinds whose `activation` field is applied to their output.
    pub fn uses_activation(self) -> bool {
        self.is_conv() || self == LayerKind::Fc
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "Conv2d",
            LayerKind::DepSepConv2d => "DepSepConv2d",
            LayerKind::DilatedConv2d => "DilatedConv2d",
            LayerKind::Gru => "GRU",
            LayerKind::AvgPool2d => "AvgPool2d",
            LayerKind::MaxPool2d => "MaxPool2d",
            LayerKind::Fc => "FC",
            LayerKind::Add => "Add",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Concatenated ReLU: emits `relu(x)` and `relu(-x)`, doubling channels.
    Crelu,
    Elu,
    Selu,
    Swish,
    None,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Relu,
        Activation::Crelu,
        Activation::Elu,
        Activation::Selu,
        Activation::Swish,
        Activation::None,
    ];

    /// Output channel multiplier.
    pub fn channel_factor(self) -> u32 {
        if self == Activation::Crelu {
            2
        } else {
            1
        }
    }

    pub fn is_nonlinear(self) -> bool {
        self != Activation::None
    }
}

/// How an `Add` layer joins its two sources.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Add,
    Concat,
}

fn default_one() -> u32 {
    1
}

fn default_keep() -> f64 {
    1.0
}

fn default_activation() -> Activation {
    Activation::None
}

/// One layer (possibly a stack of `repeat` identical sub-layers).
///
/// Not every field is meaningful for every kind; see [`LayerKind`] helpers.
/// Strides apply to the first sub-layer of a repeated stack only. For
/// `DilatedConv2d` the `stride_f_or_dilation` field is the dilation rate and the
/// frequency stride is 1. Pooling windows are `kernel_t x kernel_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "default_one")]
    pub repeat: u32,
    #[serde(default = "default_one")]
    pub kernel_t: u32,
    #[serde(default = "default_one")]
    pub kernel_f: u32,
    #[serde(default = "default_one")]
    pub channels_or_hidden: u32,
    #[serde(default = "default_one")]
    pub stride_t: u32,
    #[serde(default = "default_one")]
    pub stride_f_or_dilation: u32,
    #[serde(default = "default_one")]
    pub directions: u32,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_keep")]
    pub dropout_keep: f64,
    pub src1: usize,
    #[serde(default)]
    pub src2: Option<usize>,
    #[serde(default)]
    pub combine: Combine,
}

impl LayerSpec {
    /// A layer of `kind` with neutral defaults reading from `src1`.
    pub fn template(kind: LayerKind, src1: usize) -> Self {
        Self {
            kind,
            repeat: 1,
            kernel_t: 1,
            kernel_f: 1,
            channels_or_hidden: 16,
            stride_t: 1,
            stride_f_or_dilation: 1,
            directions: 1,
            activation: if kind.uses_activation() {
                Activation::Relu
            } else {
                Activation::None
            },
            dropout_keep: 1.0,
            src1,
            src2: None,
            combine: Combine::Add,
        }
    }

    pub fn conv2d(channels: u32, kernel: (u32, u32), stride: (u32, u32), src1: usize) -> Self {
        Self {
            kernel_t: kernel.0,
            kernel_f: kernel.1,
            channels_or_hidden: channels,
            stride_t: stride.0,
            stride_f_or_dilation: stride.1,
            ..Self::template(LayerKind::Conv2d, src1)
        }
    }

    pub fn dep_sep_conv2d(
        channels: u32,
        kernel: (u32, u32),
        stride: (u32, u32),
        src1: usize,
    ) -> Self {
        Self {
            kind: LayerKind::DepSepConv2d,
            ..Self::conv2d(channels, kernel, stride, src1)
        }
    }

    pub fn dilated_conv2d(
        channels: u32,
        kernel: (u32, u32),
        stride_t: u32,
        dilation: u32,
        src1: usize,
    ) -> Self {
        Self {
            kind: LayerKind::DilatedConv2d,
            ..Self::conv2d(channels, kernel, (stride_t, dilation), src1)
        }
    }

    pub fn gru(layers: u32, hidden: u32, directions: u32, src1: usize) -> Self {
        Self {
            repeat: layers,
            channels_or_hidden: hidden,
            directions,
            ..Self::template(LayerKind::Gru, src1)
        }
    }

    pub fn fc(units: u32, src1: usize) -> Self {
        Self {
            channels_or_hidden: units,
            ..Self::template(LayerKind::Fc, src1)
        }
    }

    pub fn pool(kind: LayerKind, window: (u32, u32), stride: (u32, u32), src1: usize) -> Self {
        debug_assert!(kind.is_pool());
        Self {
            kernel_t: window.0,
            kernel_f: window.1,
            stride_t: stride.0,
            stride_f_or_dilation: stride.1,
            ..Self::template(kind, src1)
        }
    }

    pub fn add(src1: usize, src2: usize, combine: Combine) -> Self {
        Self {
            src2: Some(src2),
            combine,
            ..Self::template(LayerKind::Add, src1)
        }
    }

    pub fn with_repeat(mut self, repeat: u32) -> Self {
        self.repeat = repeat;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Sources this layer reads from.
    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        core::iter::once(self.src1).chain(self.src2)
    }

    /// Effective activation (kinds that ignore the field report `None`).
    pub fn effective_activation(&self) -> Activation {
        if self.kind.uses_activation() {
            self.activation
        } else {
            Activation::None
        }
    }
}

/// A layer-by-layer architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchGraph {
    pub input_shape: TensorShape,
    pub output_classes: u32,
    pub layers: Vec<LayerSpec>,
}

impl ArchGraph {
    pub fn new(input_shape: TensorShape, output_classes: u32, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_shape,
            output_classes,
            layers,
        }
    }

    /// Source index of the output sink (`0` for a graph without layers).
    pub fn sink(&self) -> usize {
        self.layers.len()
    }

    /// Indices of layers that read `source`.
    pub fn consumers(&self, source: usize) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.sources().any(|s| s == source))
            .map(|(i, _)| i)
    }

    /// Number of weighted sub-layers (repeats counted), excluding the head.
    pub fn depth(&self) -> u32 {
        self.layers
            .iter()
            .filter(|l| l.kind.has_weights())
            .map(|l| l.repeat)
            .sum()
    }

    /// True when some layer applies a nonlinearity.
    pub fn has_nonlinearity(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.kind == LayerKind::Gru || l.effective_activation().is_nonlinear())
    }
}

/// The seven branch shapes of module search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchType {
    #[serde(rename = "conv-conv")]
    ConvConv,
    #[serde(rename = "conv-maxpool")]
    ConvMaxPool,
    #[serde(rename = "conv-avgpool")]
    ConvAvgPool,
    #[serde(rename = "conv-none")]
    ConvNone,
    #[serde(rename = "maxpool-none")]
    MaxPoolNone,
    #[serde(rename = "avgpool-none")]
    AvgPoolNone,
    #[serde(rename = "sep1x7-7x1-none")]
    Sep1x7_7x1None,
}

impl BranchType {
    pub const ALL: [BranchType; 7] = [
        BranchType::ConvConv,
        BranchType::ConvMaxPool,
        BranchType::ConvAvgPool,
        BranchType::ConvNone,
        BranchType::MaxPoolNone,
        BranchType::AvgPoolNone,
        BranchType::Sep1x7_7x1None,
    ];

    /// The two operations of the branch (applied to `src1` and `src2`).
    pub fn ops(self) -> (BranchOp, BranchOp) {
        use BranchOp::*;
        match self {
            BranchType::ConvConv => (Conv, Conv),
            BranchType::ConvMaxPool => (Conv, MaxPool),
            BranchType::ConvAvgPool => (Conv, AvgPool),
            BranchType::ConvNone => (Conv, None),
            BranchType::MaxPoolNone => (MaxPool, None),
            BranchType::AvgPoolNone => (AvgPool, None),
            BranchType::Sep1x7_7x1None => (Sep1x7_7x1, None),
        }
    }

    pub fn uses_src2(self) -> bool {
        self.ops().1 != BranchOp::None
    }

    pub fn has_square_conv(self) -> bool {
        let (a, b) = self.ops();
        a == BranchOp::Conv || b == BranchOp::Conv
    }

    pub fn has_pool(self) -> bool {
        let (a, b) = self.ops();
        a.is_pool() || b.is_pool()
    }

    pub fn has_weights(self) -> bool {
        self.has_square_conv() || self == BranchType::Sep1x7_7x1None
    }

    pub fn name(self) -> &'static str {
        match self {
            BranchType::ConvConv => "conv-conv",
            BranchType::ConvMaxPool => "conv-maxpool",
            BranchType::ConvAvgPool => "conv-avgpool",
            BranchType::ConvNone => "conv-none",
            BranchType::MaxPoolNone => "maxpool-none",
            BranchType::AvgPoolNone => "avgpool-none",
            BranchType::Sep1x7_7x1None => "sep1x7-7x1-none",
        }
    }
}

/// One branch of a module. Sources use `0` for the module input and `j` for
/// the output of branch `j` (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchSpec {
    pub branch_type: BranchType,
    pub filter_width: u32,
    pub pooling_width: u32,
    pub channels: u32,
    pub src1: usize,
    pub src2: usize,
    pub propagate: bool,
}

impl BranchSpec {
    pub fn new(branch_type: BranchType, channels: u32, src1: usize, src2: usize) -> Self {
        Self {
            branch_type,
            filter_width: 3,
            pooling_width: 2,
            channels,
            src1,
            src2,
            propagate: true,
        }
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        let second = self.branch_type.uses_src2().then_some(self.src2);
        core::iter::once(self.src1).chain(second)
    }
}

/// A multi-branch cell. Its output is the concatenation of every branch with
/// `propagate` set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub branches: Vec<BranchSpec>,
}

impl ModuleSpec {
    pub fn new(branches: Vec<BranchSpec>) -> Self {
        Self { branches }
    }

    /// Indices (0-based) of branches that feed the module output.
    pub fn propagating(&self) -> impl Iterator<Item = usize> + '_ {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.propagate)
            .map(|(i, _)| i)
    }
}

/// A module-search candidate together with the information needed to build a
/// full network from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleArch {
    pub input_shape: TensorShape,
    pub output_classes: u32,
    pub module: ModuleSpec,
    pub stacking: StackingConfig,
}

impl ModuleArch {
    pub fn to_graph(&self) -> Result<ArchGraph, ArchError> {
        stack_module(
            &self.module,
            &self.stacking,
            self.input_shape,
            self.output_classes,
        )
    }
}

/// Either kind of searchable candidate.
#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Layers(ArchGraph),
    Module(ModuleArch),
}

impl Architecture {
    /// The full network this candidate denotes.
    pub fn to_graph(&self) -> Result<ArchGraph, ArchError> {
        match self {
            Architecture::Layers(g) => Ok(g.clone()),
            Architecture::Module(m) => m.to_graph(),
        }
    }

    /// Number of searchable units (layers or branches).
    pub fn unit_count(&self) -> usize {
        match self {
            Architecture::Layers(g) => g.layers.len(),
            Architecture::Module(m) => m.module.branches.len(),
        }
    }

    /// Every invariant violation of the candidate (empty when valid).
    pub fn validate(&self) -> Vec<Violation> {
        match self {
            Architecture::Layers(g) => validate(g),
            Architecture::Module(m) => {
                let mut v = validate_module(&m.module, MAX_BRANCHES);
                if v.is_empty() {
                    match m.to_graph() {
                        Ok(g) => v.extend(validate(&g)),
                        Err(e) => v.push(Violation::new(None, e.violation_kind())),
                    }
                }
                v
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    /// A source refers to the layer itself or a later layer.
    ForwardReference,
    /// An `Add` layer without `src2`.
    MissingSource,
    /// A spatial or channel dimension reached 0.
    ShapeUnderflow,
    /// Sources of an `Add` layer differ in spatial size.
    ShapeMismatch,
    /// Element-wise add of sources with different channel counts.
    ChannelMismatch,
    /// A layer (or branch) that never reaches the output.
    DeadEnd,
    /// A graph without layers or a module without branches.
    Empty,
    /// A field outside its admissible domain.
    InvalidField(&'static str),
    /// More branches than allowed.
    BranchLimit,
    /// No branch feeds the module output.
    NoPropagatingBranch,
    /// A value outside the active search space.
    OutOfSpace(&'static str),
}

impl ViolationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ViolationKind::ForwardReference => "forward-reference",
            ViolationKind::MissingSource => "missing-source",
            ViolationKind::ShapeUnderflow => "shape-underflow",
            ViolationKind::ShapeMismatch => "shape-mismatch",
            ViolationKind::ChannelMismatch => "channel-mismatch",
            ViolationKind::DeadEnd => "dead-end",
            ViolationKind::Empty => "empty",
            ViolationKind::InvalidField(_) => "invalid-field",
            ViolationKind::BranchLimit => "branch-limit",
            ViolationKind::NoPropagatingBranch => "no-propagating-branch",
            ViolationKind::OutOfSpace(_) => "out-of-space",
        }
    }
}

/// One invariant violation, with the offending layer or branch index.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Violation {
    pub index: Option<usize>,
    pub kind: ViolationKind,
}

impl Violation {
    pub fn new(index: Option<usize>, kind: ViolationKind) -> Self {
        Self { index, kind }
    }

    pub fn at(index: usize, kind: ViolationKind) -> Self {
        Self::new(Some(index), kind)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at {}", self.kind.name(), i)?,
            None => f.write_str(self.kind.name())?,
        }
        match self.kind {
            ViolationKind::InvalidField(field) | ViolationKind::OutOfSpace(field) => {
                write!(f, " ({field})")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ArchError {
    #[error("shape underflow at layer {layer}")]
    ShapeUnderflow { layer: usize },
    #[error("invalid architecture: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

impl ArchError {
    pub(crate) fn violation_kind(&self) -> ViolationKind {
        match self {
            ArchError::ShapeUnderflow { .. } => ViolationKind::ShapeUnderflow,
            ArchError::Invalid(v) => v
                .first()
                .map(|v| v.kind)
                .unwrap_or(ViolationKind::Empty),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{x}");
    }
    s
}
