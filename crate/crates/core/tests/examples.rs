use rcnas_core::arch::{infer_shapes, validate, ArchGraph, LayerSpec, TensorShape, ViolationKind};
use rcnas_core::reinforce::{returns, BaselineState};
use rcnas_core::resource::{fft_flops, matmul_bytes, matmul_flops, matmul_intensity, pointwise_flops, report};
use rcnas_core::reward::{reward, violation, Constraint, Metric};
use rcnas_core::{surrogate, Activation, LayerKind};

fn kws() -> TensorShape {
    TensorShape::new(49, 40, 1)
}

fn cifar() -> TensorShape {
    TensorShape::new(32, 32, 3)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn validation_examples() {
    assert!(validate(&ArchGraph::new(kws(), 12, vec![LayerSpec::fc(12, 0)])).is_empty());

    let own = ArchGraph::new(kws(), 12, vec![LayerSpec::fc(12, 0), LayerSpec::fc(12, 2)]);
    let v = validate(&own);
    assert!(v.iter().any(|v| v.kind.name() == "forward-reference" && v.index == Some(1)), "{v:?}");

    // 32 -> 10 -> 3 -> 1 -> underflow at the fourth pool.
    let pools: Vec<_> = (0..4)
        .map(|i| LayerSpec::pool(LayerKind::MaxPool2d, (3, 3), (3, 3), i))
        .collect();
    assert!(validate(&ArchGraph::new(cifar(), 10, pools[..3].to_vec())).is_empty());
    let v = validate(&ArchGraph::new(cifar(), 10, pools));
    assert!(v.iter().any(|v| v.kind == ViolationKind::ShapeUnderflow && v.index == Some(3)), "{v:?}");
}

#[test]
fn shape_examples() {
    let s = |g: ArchGraph| infer_shapes(&g).unwrap();
    let conv = LayerSpec::conv2d(16, (3, 3), (1, 1), 0);
    assert_eq!(s(ArchGraph::new(cifar(), 10, vec![conv]))[0], TensorShape::new(32, 32, 16));
    let strided = LayerSpec::conv2d(8, (3, 3), (4, 4), 0);
    assert_eq!(s(ArchGraph::new(kws(), 12, vec![strided]))[0], TensorShape::new(13, 10, 8));
    let bi = LayerSpec::gru(1, 64, 2, 0);
    assert_eq!(s(ArchGraph::new(kws(), 12, vec![bi]))[0], TensorShape::new(49, 1, 128));
}

#[test]
fn parameter_examples() {
    let fc = ArchGraph::new(TensorShape::new(1, 1, 64), 12, vec![]);
    let r = report(&fc).unwrap();
    assert_eq!(r.params, 780);

    let gru = |layers, hidden| {
        let g = ArchGraph::new(kws(), 12, vec![LayerSpec::gru(layers, hidden, 1, 0)]);
        report(&g).unwrap().params as f64
    };
    assert!(close(gru(2, 64), 0.047e6, 0.05 * 0.047e6));
    assert!(close(gru(1, 154), 0.093e6, 0.05 * 0.093e6));
}

#[test]
fn flop_examples() {
    assert_eq!(matmul_flops(2, 2, 2), 16);
    assert_eq!(pointwise_flops(10 * 10 * 16), 1600);
    assert_eq!(fft_flops(1024).unwrap(), 25600);
    assert!(fft_flops(1000).is_err());
    assert_eq!(matmul_bytes(96, 96, 96), 4 * 3 * 96 * 96);
    assert_eq!(matmul_intensity(96, 96, 96), 16.0);

    // relu over a 10x10x16 output: a pooling-free 1x1 conv isolates the activation.
    let conv = LayerSpec::conv2d(16, (1, 1), (1, 1), 0).with_activation(Activation::Relu);
    let g = ArchGraph::new(TensorShape::new(10, 10, 16), 2, vec![conv]);
    let r = report(&g).unwrap();
    assert_eq!(r.per_layer[0].flops, matmul_flops(100, 16, 16) + 1600 + 1600);
}

#[test]
fn report_invariants_and_gru_intensity() {
    let g = ArchGraph::new(kws(), 12, vec![LayerSpec::gru(1, 154, 1, 0)]);
    let r = report(&g).unwrap();
    assert_eq!(r.model_size_bytes, 4 * r.params);
    assert_eq!(r.compute_intensity, r.flops as f64 / r.bytes_accessed as f64);
    assert_eq!(r.params, r.per_layer.iter().map(|l| l.params).sum::<u64>());
    assert_eq!(r.flops, r.per_layer.iter().map(|l| l.flops).sum::<u64>());
    // The recurrence reuses its weights at every timestep, which puts the
    // intensity well above a single-pass estimate.
    assert_eq!((r.flops, r.bytes_accessed), (8_840_074, 437_288));
    assert!(close(r.compute_intensity, 20.2157, 1e-4));
}

#[test]
fn violation_examples() {
    assert_eq!(violation(3.4e6, &Constraint::upper(Metric::Params, 5e6)), 0.0);
    assert_eq!(violation(2.0, &Constraint::upper(Metric::Params, 1.0)), 1.0);
    assert_eq!(violation(40.0, &Constraint::lower(Metric::ComputeIntensity, 80.0)), 1.0);
    assert_eq!(violation(0.0, &Constraint::lower(Metric::ComputeIntensity, 80.0)), 1.0);
}

#[test]
fn reward_examples() {
    assert_eq!(reward(0.9, &[], 0.9), 0.9);
    assert!(close(reward(1.0, &[1.0], 0.9), 0.9, 1e-15));
    assert!(close(reward(0.95, &[0.5, 0.5], 0.9), 0.855, 1e-12));
    // Continuous across the threshold.
    let c = Constraint::upper(Metric::Params, 1e5);
    let at = |u: f64| reward(0.5, &[violation(u, &c)], 0.9);
    assert_eq!(at(1e5), 0.5);
    assert!(close(at(1e5 + 1.0), 0.5, 1e-6));
}

#[test]
fn return_and_baseline_examples() {
    assert_eq!(returns(&[1.0, 1.0, 1.0]), vec![3.0, 2.0, 1.0]);
    assert_eq!(returns(&[0.0; 3]), vec![0.0; 3]);
    let r = returns(&[0.5, 0.2, 0.9]);
    for (a, b) in r.iter().zip([1.6, 1.1, 0.9]) {
        assert!(close(*a, b, 1e-12));
    }

    let mut b = BaselineState::new(0.9);
    b.update(&[vec![1.6, 1.1, 0.9]]);
    assert_eq!((b.value(0), b.value(1), b.value(2)), (1.6, 1.1, 0.9));

    let mut b = BaselineState::new(0.9);
    b.update(&[vec![1.0, 1.0]]);
    b.update(&[vec![2.0, 0.0]]);
    assert!(close(b.value(0), 1.1, 1e-12) && close(b.value(1), 0.9, 1e-12));

    for _ in 0..300 {
        b.update(&[vec![0.25, 0.25]]);
    }
    assert!(close(b.value(0), 0.25, 1e-12));
}

#[test]
fn surrogate_examples() {
    let fc = ArchGraph::new(kws(), 12, vec![LayerSpec::fc(12, 0)]);
    let (params, depth) = (report(&fc).unwrap().params, fc.depth());
    assert_eq!((params, depth), (23_688, 1));
    let want = 0.98 * (1.0 - (-(params as f64) / 2e5).exp()) * (0.7 + 0.3 / 8.0);
    assert!(close(surrogate::performance(&fc), want, 1e-12));
    assert!(close(want, 0.080, 0.001));
    assert_eq!(surrogate::performance_from(0, 4, true), 0.0);
    assert!(close(surrogate::performance_from(u64::MAX / 2, 8, true), 0.98, 1e-12));
}
