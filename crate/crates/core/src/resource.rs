//! Analytic inference resource model: parameters, model size, FLOPs, bytes
//! accessed and compute intensity.
//!
//! All metrics are for batch size 1 and 4-byte weights. Counting rules:
//!
//! * a matrix product of `m x n` by `n x p` costs `2mnp` FLOPs, generalized to
//!   convolutions and recurrent gates;
//! * every pointwise operation (bias add, activation, elementwise add, pooling
//!   window tap) costs 1 FLOP per element; dropout and concatenation are free;
//! * a GRU costs `6 (n_in + h) h` FLOPs for its gate matrix products and
//!   `6 h` pointwise FLOPs per timestep and direction;
//! * every sub-layer reads its weights and all of its inputs from slow memory
//!   and writes its output back, 4 bytes per element, with no fusion credit.
//!
//! The implicit classifier head (global average pool, skipped when the input
//! is already `1 x 1`, then a fully connected layer) is reported as the last
//! per-layer entry.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arch::{trace, ArchError, ArchGraph, Combine, LayerKind, LayerSpec, LayerTrace, SubLayer, TensorShape};

/// Bytes per stored weight or activation element.
pub const BYTES_PER_ELEMENT: u64 = 4;

/// Resource use of one layer (or the classifier head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResources {
    /// Layer kind name, or `"Head"` for the classifier head.
    pub kind: alloc::string::String,
    pub params: u64,
    pub model_size_bytes: u64,
    pub flops: u64,
    pub bytes_accessed: u64,
    pub compute_intensity: f64,
}

/// Resource use of a whole network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub params: u64,
    pub model_size_bytes: u64,
    pub flops: u64,
    pub bytes_accessed: u64,
    /// FLOPs per byte accessed.
    pub compute_intensity: f64,
    pub per_layer: Vec<LayerResources>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Cost {
    params: u64,
    flops: u64,
    bytes: u64,
}

impl core::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        self.params += o.params;
        self.flops += o.flops;
        self.bytes += o.bytes;
    }
}

impl Cost {
    fn into_resources(self, kind: &str) -> LayerResources {
        LayerResources {
            kind: kind.into(),
            params: self.params,
            model_size_bytes: BYTES_PER_ELEMENT * self.params,
            flops: self.flops,
            bytes_accessed: self.bytes,
            compute_intensity: intensity(self.flops, self.bytes),
        }
    }
}

fn intensity(flops: u64, bytes: u64) -> f64 {
    if bytes == 0 {
        0.0
    } else {
        flops as f64 / bytes as f64
    }
}

/// FLOPs of an `m x n` by `n x p` matrix product.
pub fn matmul_flops(m: u64, n: u64, p: u64) -> u64 {
    2 * m * n * p
}

/// Bytes moved by an `m x n` by `n x p` matrix product (both operands and the
/// result).
pub fn matmul_bytes(m: u64, n: u64, p: u64) -> u64 {
    BYTES_PER_ELEMENT * (m * n + n * p + m * p)
}

pub fn matmul_intensity(m: u64, n: u64, p: u64) -> f64 {
    intensity(matmul_flops(m, n, p), matmul_bytes(m, n, p))
}

/// FLOPs of a pointwise operation over `elements` values.
pub fn pointwise_flops(elements: u64) -> u64 {
    elements
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("FFT length {0} is not a power of two >= 2")]
pub struct NotPowerOfTwo(pub u64);

/// FLOPs of a real-valued FFT of length `n`: `2.5 n log2(n)`.
pub fn fft_flops(n: u64) -> Result<u64, NotPowerOfTwo> {
    if n < 2 || !n.is_power_of_two() {
        return Err(NotPowerOfTwo(n));
    }
    let log2 = n.trailing_zeros() as u64;
    // n is even, so 5 n log2(n) / 2 is exact.
    Ok(5 * n * log2 / 2)
}

/// Total parameter count and per-layer breakdown (head last).
pub fn count_params(graph: &ArchGraph) -> Result<(u64, Vec<u64>), ArchError> {
    let costs = layer_costs(graph)?;
    Ok((
        costs.iter().map(|c| c.1.params).sum(),
        costs.iter().map(|c| c.1.params).collect(),
    ))
}

/// Total FLOPs and per-layer breakdown (head last).
pub fn count_flops(graph: &ArchGraph) -> Result<(u64, Vec<u64>), ArchError> {
    let costs = layer_costs(graph)?;
    Ok((
        costs.iter().map(|c| c.1.flops).sum(),
        costs.iter().map(|c| c.1.flops).collect(),
    ))
}

/// Total bytes accessed and per-layer breakdown (head last).
pub fn count_bytes_accessed(graph: &ArchGraph) -> Result<(u64, Vec<u64>), ArchError> {
    let costs = layer_costs(graph)?;
    Ok((
        costs.iter().map(|c| c.1.bytes).sum(),
        costs.iter().map(|c| c.1.bytes).collect(),
    ))
}

/// All metrics for `graph`.
pub fn report(graph: &ArchGraph) -> Result<ResourceReport, ArchError> {
    let costs = layer_costs(graph)?;
    let mut total = Cost::default();
    let mut per_layer = Vec::with_capacity(costs.len());
    for (kind, c) in costs {
        total += c;
        per_layer.push(c.into_resources(kind));
    }
    let t = total.into_resources("");
    Ok(ResourceReport {
        params: t.params,
        model_size_bytes: t.model_size_bytes,
        flops: t.flops,
        bytes_accessed: t.bytes_accessed,
        compute_intensity: t.compute_intensity,
        per_layer,
    })
}

fn layer_costs(graph: &ArchGraph) -> Result<Vec<(&'static str, Cost)>, ArchError> {
    let traces = trace(graph)?;
    let mut out: Vec<(&'static str, Cost)> = graph
        .layers
        .iter()
        .zip(&traces)
        .map(|(l, t)| (l.kind.name(), layer_cost(l, t)))
        .collect();
    let sink = traces
        .last()
        .map(|t| t.output)
        .unwrap_or(graph.input_shape);
    out.push(("Head", head_cost(sink, graph.output_classes)));
    Ok(out)
}

fn layer_cost(layer: &LayerSpec, t: &LayerTrace) -> Cost {
    if layer.kind == LayerKind::Add {
        let out = t.output.elements();
        let flops = if layer.combine == Combine::Add {
            pointwise_flops(out)
        } else {
            0
        };
        let reads: u64 = t.inputs.iter().map(|s| s.elements()).sum();
        return Cost {
            params: 0,
            flops,
            bytes: BYTES_PER_ELEMENT * (reads + out),
        };
    }
    let mut total = Cost::default();
    for sub in &t.sublayers {
        total += sublayer_cost(layer, sub);
    }
    total
}

fn sublayer_cost(layer: &LayerSpec, sub: &SubLayer) -> Cost {
    let x = sub.input;
    let y = sub.output;
    let kt = layer.kernel_t as u64;
    let kf = layer.kernel_f as u64;
    let c_in = x.channels as u64;
    let act = layer.effective_activation();
    // Pre-activation output channels (CReLU doubles them afterwards).
    let c_out = layer.channels_or_hidden as u64;
    let spatial_out = y.spatial();
    let act_flops = if act.is_nonlinear() {
        pointwise_flops(y.elements())
    } else {
        0
    };
    let (params, flops) = match layer.kind {
        LayerKind::Conv2d | LayerKind::DilatedConv2d => {
            let params = (kt * kf * c_in + 1) * c_out;
            let macs = matmul_flops(spatial_out * c_out, kt * kf * c_in, 1);
            (params, macs + pointwise_flops(spatial_out * c_out) + act_flops)
        }
        LayerKind::DepSepConv2d => {
            let params = kt * kf * c_in + (c_in + 1) * c_out;
            let depthwise = matmul_flops(spatial_out * c_in, kt * kf, 1);
            let pointwise = matmul_flops(spatial_out, c_in, c_out);
            (
                params,
                depthwise + pointwise + pointwise_flops(spatial_out * c_out) + act_flops,
            )
        }
        LayerKind::Gru => {
            let h = c_out;
            let n_in = x.freq_or_width as u64 * c_in;
            let dirs = layer.directions as u64;
            let steps = x.time_or_height as u64;
            let params = dirs * 3 * ((n_in + h) * h + h);
            let per_step = matmul_flops(3 * h, n_in + h, 1) + 6 * h;
            (params, steps * dirs * per_step)
        }
        LayerKind::AvgPool2d | LayerKind::MaxPool2d => (0, y.elements() * kt * kf),
        LayerKind::Fc => {
            let n_in = x.elements();
            let params = (n_in + 1) * c_out;
            (
                params,
                matmul_flops(c_out, n_in, 1) + pointwise_flops(c_out) + act_flops,
            )
        }
        LayerKind::Add => unreachable!("handled by layer_cost"),
    };
    let bytes = BYTES_PER_ELEMENT * (params + x.elements() + y.elements());
    Cost {
        params,
        flops,
        bytes,
    }
}

fn head_cost(input: TensorShape, classes: u32) -> Cost {
    let c = input.channels as u64;
    let k = classes as u64;
    let mut cost = Cost::default();
    if input.spatial() > 1 {
        cost += Cost {
            params: 0,
            flops: pointwise_flops(input.elements()),
            bytes: BYTES_PER_ELEMENT * (input.elements() + c),
        };
    }
    let params = (c + 1) * k;
    cost += Cost {
        params,
        flops: matmul_flops(k, c, 1) + pointwise_flops(k),
        bytes: BYTES_PER_ELEMENT * (params + c + k),
    };
    cost
}
