//! Literal forms of two properties that double precision cannot deliver.
//! The acceptance run reports how close the implementation gets; these
//! stay ignored and fail when run with `--ignored`.

use rand::Rng;

use dlor::construct::{build_augmented_block, evaluation_grid};
use dlor::linalg::{random_matrix, random_vector, rng_for, Distribution};
use dlor::rank1::thermometer_interpolate;
use dlor::{ActivationSpec, Matrix, Vector};

#[test]
#[ignore = "generic gaussian targets are not reachable as exact floating-point prefix sums"]
fn thermometer_is_bit_exact_on_gaussian_targets() {
    for seed in 0..50u64 {
        let mut rng = rng_for(seed, 4);
        let m = rng.gen_range(2..=32);
        let x = Matrix::from_fn(1, m, |_, _| rng.gen_range(-2.0..2.0));
        let z: Vec<f64> = (0..m).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let net = thermometer_interpolate(&x, &z).unwrap();
        assert_eq!(net.forward_batch(&x).as_slice(), z.as_slice(), "seed {seed}");
    }
}

#[test]
#[ignore = "the top block passes through identity-block approximations, exact only as h -> 0"]
fn augmented_top_block_is_exact() {
    let act = ActivationSpec::softplus();
    for seed in 0..10u64 {
        let w = random_matrix(4, 4, 50 + seed, Distribution::Gaussian).scale(0.5);
        let b = random_vector(4, 60 + seed, Distribution::Uniform);
        let plan = build_augmented_block(&w, &b, 1e-5, &act).unwrap();
        for x in evaluation_grid(4, seed).columns() {
            let (top, _) = plan.simulate_split(x.as_slice()).unwrap();
            assert_eq!(top, act.eval_vec(&Vector::new(x.into_vec())), "seed {seed}");
        }
    }
}
