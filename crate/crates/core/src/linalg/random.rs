use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Uniform on [-1, 1].
    Uniform,
    /// Standard normal.
    Gaussian,
}

/// Deterministic generator for `(seed, stream)`. Different streams of the
/// same seed are independent.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn sample(rng: &mut impl Rng, dist: Distribution) -> f64 {
    match dist {
        Distribution::Uniform => rng.gen_range(-1.0..=1.0),
        Distribution::Gaussian => rng.sample(StandardNormal),
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64, dist: Distribution) -> Matrix {
    let mut rng = rng_for(seed, 0);
    Matrix::from_fn(rows, cols, |_, _| sample(&mut rng, dist))
}

pub fn random_vector(len: usize, seed: u64, dist: Distribution) -> Vector {
    let mut rng = rng_for(seed, 0);
    (0..len).map(|_| sample(&mut rng, dist)).collect()
}

/// Latin-hypercube sample of `count` points in `[lo, hi]^dim`, one point per
/// column of the returned `dim × count` matrix.
pub fn latin_hypercube(dim: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut rng = rng_for(seed, 7);
    let mut out = Matrix::zeros(dim, count);
    let width = (hi - lo) / count as f64;
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (j, s) in strata.into_iter().enumerate() {
            let u: f64 = rng.gen();
            out.set(d, j, lo + (s as f64 + u) * width);
        }
    }
    out
}
