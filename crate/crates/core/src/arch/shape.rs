// Validation and shape inference for layer graphs.
//
// Rules: convolutions use same padding (out = ceil(in / stride)); pooling uses
// floor division by the stride (out = floor(in / stride)), which is valid
// padding for non-overlapping windows and same padding for stride 1; GRUs read
// the frequency axis flattened into the feature vector of each timestep and
// emit (time, 1, hidden * directions); FC flattens its whole input.

use alloc::vec;
use alloc::vec::Vec;

use super::{ArchError, ArchGraph, Combine, LayerKind, LayerSpec, TensorShape, Violation};
use super::ViolationKind as VK;
use crate::math::ceil_div;

/// Input and output shape of one sub-layer of a repeated stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubLayer {
    pub input: TensorShape,
    pub output: TensorShape,
}

/// Shapes seen by one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    /// Shapes of `src1` and (for `Add`) `src2`.
    pub inputs: Vec<TensorShape>,
    /// One entry per sub-layer; empty for `Add`.
    pub sublayers: Vec<SubLayer>,
    pub output: TensorShape,
}

/// Output shape of every layer.
pub fn infer_shapes(graph: &ArchGraph) -> Result<Vec<TensorShape>, ArchError> {
    Ok(trace(graph)?.into_iter().map(|t| t.output).collect())
}

/// Full shape trace of a graph. Fails on the first structural problem; layers
/// that do not reach the output are not an error here.
pub fn trace(graph: &ArchGraph) -> Result<Vec<LayerTrace>, ArchError> {
    let (traces, violations) = walk(graph);
    if let Some(first) = violations.first() {
        if first.kind == VK::ShapeUnderflow {
            return Err(ArchError::ShapeUnderflow {
                layer: first.index.unwrap_or(0),
            });
        }
        return Err(ArchError::Invalid(violations));
    }
    Ok(traces.into_iter().map(|t| t.expect("no violations")).collect())
}

/// Every invariant violation of the graph; an empty list means valid.
pub fn validate(graph: &ArchGraph) -> Vec<Violation> {
    let (_, mut violations) = walk(graph);
    if !graph.input_shape.is_positive() {
        violations.insert(0, Violation::new(None, VK::InvalidField("input_shape")));
    }
    if graph.output_classes == 0 {
        violations.insert(0, Violation::new(None, VK::InvalidField("classes")));
    }
    if graph.layers.is_empty() {
        violations.push(Violation::new(None, VK::Empty));
        return violations;
    }
    // Backward reachability from the sink (the last layer).
    let n = graph.layers.len();
    let mut live = vec![false; n + 1];
    live[n] = true;
    for i in (0..n).rev() {
        if !live[i + 1] {
            continue;
        }
        for s in graph.layers[i].sources() {
            if s <= i {
                live[s] = true;
            }
        }
    }
    for (i, &alive) in live.iter().enumerate().skip(1) {
        if !alive {
            violations.push(Violation::at(i - 1, VK::DeadEnd));
        }
    }
    violations
}

fn walk(graph: &ArchGraph) -> (Vec<Option<LayerTrace>>, Vec<Violation>) {
    let mut violations = Vec::new();
    let mut shapes: Vec<Option<TensorShape>> = Vec::with_capacity(graph.layers.len() + 1);
    shapes.push(graph.input_shape.is_positive().then_some(graph.input_shape));
    let mut traces = Vec::with_capacity(graph.layers.len());

    for (i, layer) in graph.layers.iter().enumerate() {
        let before = violations.len();
        check_fields(i, layer, &mut violations);
        for s in layer.sources() {
            if s > i {
                violations.push(Violation::at(i, VK::ForwardReference));
            }
        }
        let trace = if violations.len() == before {
            let a = shapes[layer.src1];
            let b = layer.src2.and_then(|s| shapes[s]);
            match (a, layer.kind) {
                (Some(a), LayerKind::Add) => b.and_then(|b| add_trace(i, layer, a, b, &mut violations)),
                (Some(a), _) => stack_trace(i, layer, a, &mut violations),
                (None, _) => None,
            }
        } else {
            None
        };
        shapes.push(trace.as_ref().map(|t| t.output));
        traces.push(trace);
    }
    (traces, violations)
}

fn check_fields(i: usize, l: &LayerSpec, out: &mut Vec<Violation>) {
    let mut bad = |field| out.push(Violation::at(i, VK::InvalidField(field)));
    if l.kind == LayerKind::Add {
        if l.src2.is_none() {
            out.push(Violation::at(i, VK::MissingSource));
        }
        return;
    }
    if l.src2.is_some() {
        bad("src2");
    }
    if l.repeat == 0 {
        bad("repeat");
    }
    if (l.kind.is_conv() || l.kind.is_pool()) && (l.kernel_t == 0 || l.kernel_f == 0) {
        bad("kernel");
    }
    if (l.kind.is_conv() || l.kind.is_pool()) && (l.stride_t == 0 || l.stride_f_or_dilation == 0) {
        bad("stride");
    }
    if l.kind.has_weights() && l.channels_or_hidden == 0 {
        bad("channels_or_hidden");
    }
    if l.kind == LayerKind::Gru && !(1..=2).contains(&l.directions) {
        bad("directions");
    }
    if !(l.dropout_keep > 0.0 && l.dropout_keep <= 1.0) {
        bad("dropout_keep");
    }
}

fn stack_trace(
    i: usize,
    layer: &LayerSpec,
    input: TensorShape,
    out: &mut Vec<Violation>,
) -> Option<LayerTrace> {
    let mut sublayers = Vec::with_capacity(layer.repeat as usize);
    let mut cur = input;
    for s in 0..layer.repeat {
        let next = sublayer_output(layer, cur, s == 0);
        if !next.is_positive() {
            out.push(Violation::at(i, VK::ShapeUnderflow));
            return None;
        }
        sublayers.push(SubLayer {
            input: cur,
            output: next,
        });
        cur = next;
    }
    Some(LayerTrace {
        inputs: vec![input],
        sublayers,
        output: cur,
    })
}

fn sublayer_output(layer: &LayerSpec, x: TensorShape, first: bool) -> TensorShape {
    let factor = layer.effective_activation().channel_factor();
    let (st, sf) = if first {
        (layer.stride_t, layer.stride_f_or_dilation)
    } else {
        (1, 1)
    };
    match layer.kind {
        LayerKind::Conv2d | LayerKind::DepSepConv2d => TensorShape::new(
            ceil_div(x.time_or_height, st),
            ceil_div(x.freq_or_width, sf),
            layer.channels_or_hidden * factor,
        ),
        LayerKind::DilatedConv2d => TensorShape::new(
            ceil_div(x.time_or_height, st),
            x.freq_or_width,
            layer.channels_or_hidden * factor,
        ),
        LayerKind::AvgPool2d | LayerKind::MaxPool2d => {
            TensorShape::new(x.time_or_height / st, x.freq_or_width / sf, x.channels)
        }
        LayerKind::Gru => TensorShape::new(
            x.time_or_height,
            1,
            layer.channels_or_hidden * layer.directions,
        ),
        LayerKind::Fc => TensorShape::new(1, 1, layer.channels_or_hidden * factor),
        LayerKind::Add => unreachable!("add has no sub-layers"),
    }
}

fn add_trace(
    i: usize,
    layer: &LayerSpec,
    a: TensorShape,
    b: TensorShape,
    out: &mut Vec<Violation>,
) -> Option<LayerTrace> {
    if a.time_or_height != b.time_or_height || a.freq_or_width != b.freq_or_width {
        out.push(Violation::at(i, VK::ShapeMismatch));
        return None;
    }
    let channels = match layer.combine {
        Combine::Add if a.channels != b.channels => {
            out.push(Violation::at(i, VK::ChannelMismatch));
            return None;
        }
        Combine::Add => a.channels,
        Combine::Concat => a.channels + b.channels,
    };
    Some(LayerTrace {
        inputs: vec![a, b],
        sublayers: Vec::new(),
        output: TensorShape::new(a.time_or_height, a.freq_or_width, channels),
    })
}
