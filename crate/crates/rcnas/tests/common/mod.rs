#![allow(dead_code)]

pub mod oracle;

use rand::Rng;
use rcnas::core::arch::{Activation, ArchGraph, Combine, LayerKind, LayerSpec, TensorShape};

/// Random valid graph with at most `max_layers` layers and every size in
/// `1..=max_dim`. Retries until the graph validates.
pub fn random_graph<R: Rng>(rng: &mut R, max_layers: usize, max_dim: u32) -> ArchGraph {
    loop {
        let g = random_candidate(rng, max_layers, max_dim);
        if rcnas::core::arch::validate(&g).is_empty() {
            return g;
        }
    }
}

fn random_candidate<R: Rng>(rng: &mut R, max_layers: usize, max_dim: u32) -> ArchGraph {
    let dim = |rng: &mut R| rng.gen_range(1..=max_dim);
    let input = TensorShape::new(dim(rng), dim(rng), dim(rng));
    let classes = dim(rng).max(2);
    let n = rng.gen_range(1..=max_layers);
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let kind = LayerKind::ALL[rng.gen_range(0..LayerKind::ALL.len())];
        let src1 = if rng.gen_bool(0.7) { i } else { rng.gen_range(0..=i) };
        let mut l = LayerSpec::template(kind, src1);
        if kind == LayerKind::Add {
            l.src2 = Some(rng.gen_range(0..=i));
            l.combine = if rng.gen_bool(0.5) { Combine::Add } else { Combine::Concat };
        } else {
            l.repeat = rng.gen_range(1..=3);
            l.kernel_t = dim(rng);
            l.kernel_f = dim(rng);
            l.channels_or_hidden = dim(rng);
            l.stride_t = if rng.gen_bool(0.6) { 1 } else { dim(rng) };
            l.stride_f_or_dilation = if rng.gen_bool(0.6) { 1 } else { dim(rng) };
            l.directions = rng.gen_range(1..=2);
            if kind.uses_activation() {
                l.activation = Activation::ALL[rng.gen_range(0..Activation::ALL.len())];
            }
        }
        layers.push(l);
    }
    ArchGraph::new(input, classes, layers)
}
