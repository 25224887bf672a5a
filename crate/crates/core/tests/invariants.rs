use proptest::prelude::*;

use dlor::construct::{identity_block, parse_h_grid, PlanFile, PlanKind, SourceLayer};
use dlor::decompose::{additive_split, is_dlor_shaped, multiplicative_factorize, zero_sum_betas};
use dlor::experiments::{deep_spectrum, make_sawtooth, wide_spectrum, SawtoothSpec};
use dlor::linalg::{lu_solve_vec, random_matrix, random_vector, svd, Distribution};
use dlor::par;
use dlor::rank1::{blindness_check, scalar_interpolate};
use dlor::train::{param_count, train, Checkpoint, NetKind, TrainConfig, TrainableNet};
use dlor::{ActivationKind, ActivationSpec, Matrix, Vector};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn kind() -> impl Strategy<Value = NetKind> {
    prop_oneof![Just(NetKind::DenseMlp), Just(NetKind::DeepDlor), Just(NetKind::WideDlor)]
}

fn smooth_activation() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Softplus),
        Just(ActivationKind::Sigmoid),
        Just(ActivationKind::Tanh)
    ]
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn svd_reconstructs(m in 1usize..9, n in 1usize..9, seed in any::<u64>()) {
        let a = random_matrix(m, n, seed, Distribution::Gaussian);
        let s = svd(&a).unwrap();
        let k = m.min(n);
        let us = Matrix::from_fn(m, k, |i, j| s.u.get(i, j) * s.sigma[j]);
        prop_assert!(us.matmul(&s.vt).sub(&a).frob_norm() <= 1e-12 * a.frob_norm().max(1.0));
        prop_assert!(s.sigma.as_slice().windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
        let utu = s.u.transpose().matmul(&s.u);
        prop_assert!(utu.sub(&Matrix::identity(k)).max_abs() < 1e-12);
    }

    #[test]
    fn lu_solves(n in 1usize..12, seed in any::<u64>()) {
        let a = random_matrix(n, n, seed, Distribution::Gaussian).add_scaled_identity(n as f64);
        let b = random_vector(n, seed ^ 1, Distribution::Uniform);
        let x = lu_solve_vec(&a, b.as_slice()).unwrap();
        prop_assert!(a.matvec(x.as_slice()).max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn multiplicative_factorization_is_exact(
        n in 2usize..9,
        r_frac in 0.0f64..1.0,
        alpha in prop_oneof![0.5f64..0.9, 1.1f64..1.5],
        seed in 0u64..10_000,
    ) {
        let r = 1 + ((n - 1) as f64 * r_frac) as usize;
        let w = random_matrix(n, n, seed, Distribution::Gaussian);
        let f = multiplicative_factorize(&w, r, alpha, seed).unwrap();
        prop_assert_eq!(f.len(), n.div_ceil(r));
        prop_assert!(f.product().sub(&w).frob_norm() <= 1e-8 * w.frob_norm());
        for c in &f.components {
            prop_assert!(c.rank() <= r);
            prop_assert!(is_dlor_shaped(&c.dense(), alpha, r).unwrap());
        }
    }

    #[test]
    fn additive_split_sums_back(m in 1usize..8, n in 1usize..8, parts in 1usize..6, seed in any::<u64>()) {
        let w = random_matrix(m, n, seed, Distribution::Gaussian);
        let split = additive_split(&w, parts).unwrap();
        prop_assert_eq!(split.summands.len(), parts);
        prop_assert!(split.sum().sub(&w).frob_norm() <= 1e-12 * w.frob_norm().max(1.0));
        if parts >= 2 {
            prop_assert_eq!(split.betas().unwrap().iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn zero_sum_betas_are_exact(parts in 2usize..1000) {
        let b = zero_sum_betas(parts).unwrap();
        prop_assert_eq!(b.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn rank1_maps_ignore_orthogonal_moves(d in 2usize..8, width in 1usize..10, seed in any::<u64>(), act in smooth_activation()) {
        let x = random_vector(d, seed, Distribution::Uniform);
        let cols = Matrix::from_fn(d, width, |i, j| ((i * 7 + j * 3) as f64).sin() + j as f64);
        let z: Vec<f64> = (0..width).map(|j| (j as f64 * 0.37).cos()).collect();
        if let Ok(net) = scalar_interpolate(&cols, &z, ActivationSpec::with_default(act), seed) {
            let fx = net.forward(x.as_slice());
            let b = blindness_check(&net, x.as_slice(), seed ^ 5);
            prop_assert!(b.delta <= 1e-12 * (1.0 + fx.abs()));
        }
    }

    #[test]
    fn deep_spectrum_splits_additively(n in 2usize..10, r in 1usize..4, alpha in 0.2f64..2.0, seed in any::<u64>()) {
        let r = r.min(n);
        let u = random_matrix(n, r, seed, Distribution::Gaussian);
        let v = random_matrix(n, r, seed ^ 9, Distribution::Gaussian);
        let s = deep_spectrum(alpha, &u.matmul(&v.transpose())).unwrap();
        for i in 0..n {
            let scale = s.sigma[0].max(1.0);
            prop_assert!((s.sigma[i] - s.identity_contrib[i] - s.lowrank_contrib[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn wide_branches_sum_to_total(n in 2usize..8, parts in 1usize..6, seed in any::<u64>()) {
        let branches: Vec<Matrix> =
            (0..parts as u64).map(|l| random_matrix(n, n, seed.wrapping_add(l), Distribution::Gaussian)).collect();
        let s = wide_spectrum(&branches).unwrap();
        for i in 0..n {
            let sum: f64 = s.branch_signed.iter().map(|b| b[i]).sum();
            prop_assert!((s.sigma_total[i] - sum).abs() <= 1e-12 * s.sigma_total[0].max(1.0));
        }
    }

    #[test]
    fn identity_block_error_shrinks_with_h(x in -2.0f64..2.0, act in smooth_activation()) {
        let spec = ActivationSpec::with_default(act);
        let e = |h: f64| (identity_block(&[x], h, &spec).unwrap()[0] - x).abs();
        prop_assert!(e(1e-4) <= e(1e-2) + 1e-9);
    }

    #[test]
    fn h_grid_has_requested_length(a in -8i32..0, b in -8i32..0, count in 1usize..20) {
        let spec = format!("1e{a}:1e{b}:{count}");
        let g = parse_h_grid(&spec).unwrap();
        prop_assert_eq!(g.len(), count);
        prop_assert_eq!(g[0], 10f64.powi(a));
        prop_assert!(g.iter().all(|h| *h > 0.0));
    }

    #[test]
    fn parallel_map_matches_sequential(items in proptest::collection::vec(any::<i64>(), 0..200)) {
        let f = |x: &i64| x.wrapping_mul(31).wrapping_add(7);
        prop_assert_eq!(par::map(&items, f), par::map_sequential(&items, f));
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn param_counts_match_networks(kind in kind(), width in 2usize..20, k in 1usize..10) {
        let net = TrainableNet::new(kind, width, k, ActivationSpec::softplus(), 1).unwrap();
        prop_assert_eq!(net.param_count(), param_count(kind, width, k));
        let named: usize = net.named_tensors().iter().map(|(_, r)| r.len()).sum();
        prop_assert_eq!(named, net.param_count());
    }

    #[test]
    fn checkpoints_round_trip(kind in kind(), width in 2usize..10, k in 1usize..5, seed in any::<u64>()) {
        let net = TrainableNet::new(kind, width, k, ActivationSpec::softplus(), seed).unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let net2 = TrainableNet::from_checkpoint(&back).unwrap();
        prop_assert_eq!(net2.params(), net.params());
    }

    #[test]
    fn plan_files_round_trip(kind in prop_oneof![Just(PlanKind::Deep), Just(PlanKind::Wide), Just(PlanKind::Augmented)],
                             n in 2usize..5, seed in 0u64..1000) {
        let src = SourceLayer {
            w: random_matrix(n, n, seed, Distribution::Gaussian),
            b: random_vector(n, seed + 1, Distribution::Uniform),
        };
        let plan = PlanFile::build(kind, &src, 1, 0.8, 1e-3, &ActivationSpec::softplus(), seed).unwrap();
        let back: PlanFile = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        prop_assert_eq!(back, plan);
    }
}

proptest! {
    #![proptest_config(config(6))]

    #[test]
    fn training_is_deterministic_per_seed(kind in kind(), k in 1usize..4, seed in 0u64..100) {
        let data = make_sawtooth(&SawtoothSpec { n_points: 40, ..SawtoothSpec::default() });
        let cfg = TrainConfig::new(0.01, 30, seed);
        let run = || {
            let mut net = TrainableNet::new(kind, 6, k, ActivationSpec::softplus(), seed).unwrap();
            let res = train(&mut net, &data, &cfg).unwrap();
            (net.params().to_vec(), res)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ra, rb);
    }
}

#[test]
fn activation_specs_round_trip() {
    for kind in ActivationKind::ALL {
        let spec = ActivationSpec::with_default(kind);
        let back: ActivationSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
    let v = Vector::new(vec![0.0, 1.0]);
    assert_eq!(ActivationSpec::softplus().eval_vec(&v).len(), 2);
}
