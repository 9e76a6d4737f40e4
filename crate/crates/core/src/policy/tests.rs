use super::*;
use crate::arch::{ArchGraph, BranchSpec, BranchType, LayerSpec, ModuleArch, ModuleSpec, StackingConfig, TensorShape};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kws_arch(channels: u32) -> Architecture {
    Architecture::Layers(ArchGraph::new(
        TensorShape::new(49, 40, 1),
        12,
        vec![
            LayerSpec::conv2d(channels, (8, 4), (2, 2), 0),
            LayerSpec::fc(128, 1),
        ],
    ))
}

fn tiny() -> PolicyConfig {
    PolicyConfig {
        embed_dim: 3,
        encoder_hidden: 4,
        controller_hidden: 5,
        init_range: 0.5,
    }
}

fn assert_normalized(d: &ActionDistribution) {
    let check = |p: &[f64]| {
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-9, "{p:?}");
        assert!(p.iter().all(|&q| q >= 0.0));
    };
    d.scale.iter().flatten().for_each(|p| check(p));
    d.insert.iter().for_each(|p| check(p));
    check(&d.structural);
    check(&d.remove);
}

#[test]
fn distributions_are_normalized() {
    let net = PolicyNet::new(PolicyConfig::default(), SearchSpace::kws_layers());
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
    assert_normalized(&net.distribution(&params, &kws_arch(64)));
}

#[test]
fn zero_params_give_uniform_heads() {
    let space = SearchSpace::image_layers();
    let net = PolicyNet::new(PolicyConfig::default(), space.clone());
    let arch = Architecture::Layers(ArchGraph::new(
        TensorShape::new(32, 32, 3),
        10,
        vec![LayerSpec::conv2d(16, (3, 3), (1, 1), 0)],
    ));
    let d = net.distribution(&net.zero_params(), &arch);
    let fw = space.scale_features().iter().position(|&f| f == Feature::FilterWidth).unwrap();
    assert_eq!(d.scale[0][fw], vec![1.0 / 3.0; 3]);
    for (k, p) in d.scale[0].iter().enumerate() {
        let n = space.feature(space.scale_features()[k]).unwrap().candidates.len();
        assert_eq!(p.len(), n);
        assert!(p.iter().all(|&q| (q - 1.0 / n as f64).abs() < 1e-15));
    }
    // Remove is masked for a single-layer net; sources 0 and 1 are valid.
    assert_eq!(d.structural, vec![0.5, 0.5, 0.0]);
    let src1 = space.insert_features().iter().position(|&f| f == Feature::Src1).unwrap();
    assert_eq!(&d.insert[src1][..3], &[0.5, 0.5, 0.0]);
}

#[test]
fn sampling_is_reproducible_and_consistent() {
    let net = PolicyNet::new(PolicyConfig::default(), SearchSpace::kws_layers());
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(2));
    let arch = kws_arch(64);
    let a = net.sample(&params, &arch, &mut ChaCha8Rng::seed_from_u64(9));
    let b = net.sample(&params, &arch, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
    assert!((net.log_prob(&params, &arch, &a.choices) - a.log_prob).abs() < 1e-12);
    let (lp, _) = net.grad_log_prob(&params, &arch, &a.choices);
    assert!((lp - a.log_prob).abs() < 1e-12);
}

#[test]
fn embeddings() {
    let net = PolicyNet::new(PolicyConfig::default(), SearchSpace::kws_layers());
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
    let empty = Architecture::Layers(ArchGraph::new(TensorShape::new(49, 40, 1), 12, vec![]));
    assert_eq!(net.embed(&params, &empty), vec![0.0; 32]);
    let a = net.embed(&params, &kws_arch(64));
    assert_eq!(a, net.embed(&params, &kws_arch(64)));
    assert_ne!(a, net.embed(&params, &kws_arch(128)));
}

fn finite_difference_check(net: &PolicyNet, params: &PolicyParams, arch: &Architecture, c: &ActionChoices) {
    let (_, g) = net.grad_log_prob(params, arch, c);
    let h = 1e-5;
    let mut p = params.clone();
    let mut fd = vec![0.0; g.len()];
    for i in 0..p.values.len() {
        let x = p.values[i];
        p.values[i] = x + h;
        let up = net.log_prob(&p, arch, c);
        p.values[i] = x - h;
        let down = net.log_prob(&p, arch, c);
        p.values[i] = x;
        fd[i] = (up - down) / (2.0 * h);
    }
    // Relative error of the whole gradient, plus per entry where the entry is
    // well above finite-difference noise.
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&g).max(norm(&fd));
    assert!(rel < 1e-4, "relative error {rel}");
    for i in 0..g.len() {
        let scale = g[i].abs().max(fd[i].abs());
        if scale > 1e-4 {
            assert!((g[i] - fd[i]).abs() / scale < 1e-4, "param {i}: {} vs {}", g[i], fd[i]);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = PolicyNet::new(tiny(), SearchSpace::kws_layers());
    let arch = kws_arch(32);
    for structural in StructuralKind::ALL {
        let params = net.init_params(&mut rng);
        let mut s = net.sample(&params, &arch, &mut rng).choices;
        s.structural = structural;
        s.remove = 1;
        finite_difference_check(&net, &params, &arch, &s);
    }
}

#[test]
fn module_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = PolicyNet::new(tiny(), SearchSpace::image_module());
    let arch = Architecture::Module(ModuleArch {
        input_shape: TensorShape::new(32, 32, 3),
        output_classes: 10,
        module: ModuleSpec::new(vec![
            BranchSpec::new(BranchType::ConvMaxPool, 16, 0, 0),
            BranchSpec::new(BranchType::AvgPoolNone, 16, 1, 0),
        ]),
        stacking: StackingConfig::with_repeats(2),
    });
    let params = net.init_params(&mut rng);
    let mut s = net.sample(&params, &arch, &mut rng).choices;
    s.structural = StructuralKind::Insert;
    finite_difference_check(&net, &params, &arch, &s);
}

#[test]
fn zero_params_closed_form_gradient() {
    let space = SearchSpace::image_layers();
    let net = PolicyNet::new(PolicyConfig::default(), space.clone());
    let arch = Architecture::Layers(ArchGraph::new(
        TensorShape::new(32, 32, 3),
        10,
        vec![LayerSpec::conv2d(16, (3, 3), (1, 1), 0)],
    ));
    let params = net.zero_params();
    let mut c = ActionChoices::identity(&space, &arch);
    let fw = space.scale_features().iter().position(|&f| f == Feature::FilterWidth).unwrap();
    c.scale[0][fw] = 2;
    let (_, g) = net.grad_log_prob(&params, &arch, &c);
    let bias = net.blocks().iter().find(|b| b.name == "scale.head.filter_width.b").unwrap();
    let third = 1.0 / 3.0;
    let got = &g[bias.range()];
    for (j, want) in [-third, -third, 1.0 - third].into_iter().enumerate() {
        assert!((got[j] - want).abs() < 1e-12);
    }
    // Hidden states are zero, so the weight rows get (onehot - uniform) * 0.
    let w = net.blocks().iter().find(|b| b.name == "scale.head.filter_width.w").unwrap();
    assert!(g[w.range()].iter().all(|&x| x == 0.0));
}

#[test]
fn repeated_ascent_makes_a_fixed_action_likely() {
    let space = SearchSpace::kws_layers();
    let net = PolicyNet::new(PolicyConfig::default(), space.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = net.init_params(&mut rng);
    let arch = Architecture::Layers(ArchGraph::new(
        TensorShape::new(49, 40, 1),
        12,
        vec![LayerSpec::fc(12, 0)],
    ));
    let target = net.sample(&params, &arch, &mut rng).choices;
    let mut adam = Adam::new(net.num_params(), 0.01);
    let mut steps = 0;
    while net.log_prob(&params, &arch, &target).exp() <= 0.99 {
        let (_, g) = net.grad_log_prob(&params, &arch, &target);
        adam.step(&mut params.values, &g).unwrap();
        steps += 1;
        assert!(steps <= 500, "not learned after 500 steps");
    }
}

#[test]
fn sampling_frequencies_match_distribution() {
    let net = PolicyNet::new(tiny(), SearchSpace::image_layers());
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(8));
    let arch = Architecture::Layers(ArchGraph::new(
        TensorShape::new(32, 32, 3),
        10,
        vec![LayerSpec::conv2d(16, (3, 3), (1, 1), 0), LayerSpec::conv2d(16, (3, 3), (1, 1), 1)],
    ));
    let d = net.distribution(&params, &arch);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 20_000;
    let mut counts = [0usize; 3];
    let mut ch = vec![0usize; d.scale[0][2].len()];
    for _ in 0..n {
        let s = net.sample_from(&d, &arch, &mut rng);
        counts[s.choices.structural as usize] += 1;
        ch[s.choices.scale[0][2]] += 1;
    }
    let within = |count: usize, p: f64| {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - mean).abs() <= 3.0 * sd + 1e-9
    };
    for j in 0..3 {
        assert!(within(counts[j], d.structural[j]));
    }
    for j in 0..ch.len() {
        assert!(within(ch[j], d.scale[0][2][j]));
    }
}
