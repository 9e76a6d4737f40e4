mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcnas::core::arch::{Activation, Combine, LayerKind};
use rcnas::core::resource::{count_flops, count_params, report};

#[test]
fn analytic_counts_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut kinds = std::collections::HashSet::new();
    for _ in 0..300 {
        let g = common::random_graph(&mut rng, 4, 8);
        kinds.extend(g.layers.iter().map(|l| (l.kind, l.combine, l.activation)));
        let want = common::oracle::count(&g);
        assert_eq!(count_params(&g).unwrap().0, want.params, "{g:?}");
        assert_eq!(count_flops(&g).unwrap().0, want.flops, "{g:?}");
    }
    for k in LayerKind::ALL {
        assert!(kinds.iter().any(|x| x.0 == k), "{k:?} never generated");
    }
    assert!(kinds.iter().any(|x| x.0 == LayerKind::Add && x.1 == Combine::Concat));
    assert!(kinds.iter().any(|x| x.2 == Activation::Crelu));
}

#[test]
fn report_invariants_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let g = common::random_graph(&mut rng, 5, 8);
        let r = report(&g).unwrap();
        assert_eq!(r.model_size_bytes, 4 * r.params);
        assert_eq!(r.params, r.per_layer.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(r.flops, r.per_layer.iter().map(|l| l.flops).sum::<u64>());
        assert_eq!(r.bytes_accessed, r.per_layer.iter().map(|l| l.bytes_accessed).sum::<u64>());
        let back = r.compute_intensity * r.bytes_accessed as f64;
        assert!((back - r.flops as f64).abs() <= 1e-12 * r.flops as f64);
    }
}
