//! Rank-1 hidden layers: what they can interpolate and what they cannot.
//!
//! A [`Rank1Net`] computes `f(x) = v2ᵀ σ(u1·(v1ᵀx) + b1) + b2`. Because the
//! input only enters through the scalar `v1ᵀx`, such a network can fit any
//! scalar targets on distinct inputs ([`scalar_interpolate`],
//! [`thermometer_interpolate`]) but is blind to every direction orthogonal to
//! `v1` ([`blindness_check`]) and, with a rank-1 outer layer, can only place
//! vector outputs on an affine line ([`affine_collapse_witness`]).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{ActivationKind, ActivationSpec};
use crate::linalg::{condition_number, rng_for, svd, LinalgError, Lu, Matrix, Vector};

pub const MAX_ATTEMPTS: usize = 64;
/// Evaluation matrices with a larger condition estimate are rejected.
pub const CONDITION_LIMIT: f64 = 1e10;
/// Interpolation tolerance relative to `max(1, ‖z‖_∞)`.
pub const INTERPOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rank1Error {
    #[error("no projection separates the inputs after {attempts} attempts (duplicate columns?)")]
    ProjectionDegenerate { attempts: usize },
    #[error("evaluation matrix stayed singular; best condition number {best_condition:e}")]
    EvaluationMatrixSingular { best_condition: f64 },
    #[error("activation {0} is not continuous")]
    NotContinuous(ActivationKind),
    #[error("need at least one data point")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, Rank1Error>;

/// Single hidden layer whose weight `u1·v1ᵀ` has rank one, scalar readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Net {
    pub v1: Vector,
    pub u1: Vector,
    pub b1: Vector,
    pub v2: Vector,
    pub b2: f64,
    pub activation: ActivationSpec,
}

impl Rank1Net {
    pub fn width(&self) -> usize {
        self.u1.len()
    }

    pub fn project(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.v1, x)
    }

    /// `σ(u1·y + b1)` for the scalar projection `y`.
    pub fn hidden_from_projection(&self, y: f64) -> Vector {
        hidden(&self.u1, &self.b1, self.activation, y)
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let h = self.hidden_from_projection(self.project(x));
        // left-to-right, the order the thermometer weights were fitted in
        let mut acc = 0.0;
        for (w, hi) in self.v2.iter().zip(h.iter()) {
            acc += w * hi;
        }
        acc + self.b2
    }

    /// Forward pass on every column of `x_cols`.
    pub fn forward_batch(&self, x_cols: &Matrix) -> Vector {
        (0..x_cols.cols())
            .map(|j| self.forward(&x_cols.column(j)))
            .collect()
    }

    /// Hidden matrix `H[i, j] = σ(u1_i·v1ᵀx_j + b1_i)`.
    pub fn hidden_matrix(&self, x_cols: &Matrix) -> Matrix {
        let ys: Vec<f64> = (0..x_cols.cols()).map(|j| self.project(&x_cols.column(j))).collect();
        evaluation_matrix(&self.u1, &self.b1, self.activation, &ys)
    }

    /// The rank-1 hidden weight `u1·v1ᵀ`.
    pub fn hidden_weight(&self) -> Matrix {
        Matrix::outer(&self.u1, &self.v1)
    }
}

/// Rank-1 hidden layer followed by a full `k × N` outer layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullOuterNet {
    pub v1: Vector,
    pub u1: Vector,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    pub activation: ActivationSpec,
}

impl FullOuterNet {
    pub fn forward(&self, x: &[f64]) -> Vector {
        let y = crate::linalg::dot(&self.v1, x);
        let h = hidden(&self.u1, &self.b1, self.activation, y);
        self.w2.matvec(&h).add(&self.b2)
    }

    /// Outputs as columns, `k × M`.
    pub fn forward_batch(&self, x_cols: &Matrix) -> Matrix {
        let outs: Vec<Vector> = (0..x_cols.cols())
            .map(|j| self.forward(&x_cols.column(j)))
            .collect();
        Matrix::from_columns(&outs).expect("equal-length outputs")
    }
}

fn hidden(u1: &[f64], b1: &[f64], act: ActivationSpec, y: f64) -> Vector {
    u1.iter().zip(b1).map(|(u, b)| act.eval(u * y + b)).collect()
}

fn evaluation_matrix(u1: &[f64], b1: &[f64], act: ActivationSpec, ys: &[f64]) -> Matrix {
    Matrix::from_fn(u1.len(), ys.len(), |i, j| act.eval(u1[i] * ys[j] + b1[i]))
}

fn projections(v1: &[f64], x_cols: &Matrix) -> Vec<f64> {
    (0..x_cols.cols())
        .map(|j| crate::linalg::dot(v1, &x_cols.column(j)))
        .collect()
}

/// Indices sorting `ys` ascending.
fn sort_order(ys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ys.len()).collect();
    idx.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
    idx
}

/// Smallest gap between consecutive sorted projections, and the spread.
fn gap_and_spread(ys: &[f64]) -> (f64, f64) {
    let mut s = ys.to_vec();
    s.sort_by(f64::total_cmp);
    let spread = s[s.len() - 1] - s[0];
    let gap = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    (gap, spread)
}

fn separates(ys: &[f64]) -> bool {
    if ys.len() < 2 {
        return true;
    }
    let (gap, spread) = gap_and_spread(ys);
    gap > 1e-10 * spread && gap > 0.0
}

/// Unit direction `v1` whose projections `v1ᵀx_i` are pairwise distinct.
///
/// In one dimension `v1 = (1)`; otherwise gaussian directions are drawn until
/// the smallest gap exceeds `1e-10` of the spread.
pub fn distinct_projection(x_cols: &Matrix, seed: u64) -> Result<Vector> {
    let d = x_cols.rows();
    if x_cols.cols() == 0 || d == 0 {
        return Err(Rank1Error::Empty);
    }
    if d == 1 {
        let v = Vector::new(vec![1.0]);
        if separates(&projections(&v, x_cols)) {
            return Ok(v);
        }
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, 100 + attempt as u64);
        let g: Vector = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let n = g.norm();
        if n == 0.0 {
            continue;
        }
        let v = g.scale(1.0 / n);
        if separates(&projections(&v, x_cols)) {
            return Ok(v);
        }
    }
    Err(Rank1Error::ProjectionDegenerate {
        attempts: MAX_ATTEMPTS,
    })
}

fn check_data(x_cols: &Matrix, m: usize) -> Result<()> {
    if x_cols.cols() == 0 {
        return Err(Rank1Error::Empty);
    }
    if x_cols.cols() != m {
        return Err(Rank1Error::DimensionMismatch(format!(
            "{} inputs but {} targets",
            x_cols.cols(),
            m
        )));
    }
    Ok(())
}

/// Heaviside rank-1 network interpolating `z` (zero error in exact arithmetic).
///
/// Hidden unit `j` fires for the `j`-th smallest projection and above
/// (thresholds at midpoints, the first one `δ` below the minimum), so the
/// hidden matrix is lower-triangular ones in sorted order and the readout
/// weights are the successive differences of the sorted targets.
///
/// The forward pass sums the active weights left to right, and each weight
/// is nudged by ulps so that this running sum hits its target. That is exact
/// whenever the target can be reached from the previous one by adding a
/// double (e.g. dyadic targets). Otherwise, such as a small target after a
/// much larger one, the result is off by at most about one ulp of the
/// previous partial sum.
pub fn thermometer_interpolate(x_cols: &Matrix, z: &[f64]) -> Result<Rank1Net> {
    check_data(x_cols, z.len())?;
    let v1 = distinct_projection(x_cols, 0)?;
    let ys = projections(&v1, x_cols);
    let order = sort_order(&ys);
    let (_, spread) = gap_and_spread(&ys);
    let delta = (1e-3 * spread).max(1e-6);

    let m = ys.len();
    let mut b1 = Vec::with_capacity(m);
    let mut v2 = Vec::with_capacity(m);
    let mut running = 0.0_f64;
    for (j, &i) in order.iter().enumerate() {
        let t = if j == 0 {
            ys[i] - delta
        } else {
            0.5 * (ys[order[j - 1]] + ys[i])
        };
        b1.push(-t);
        let target = z[i];
        let w = readout_weight(running, target);
        running += w;
        v2.push(w);
    }
    Ok(Rank1Net {
        v1,
        u1: Vector::filled(m, 1.0),
        b1: Vector::new(b1),
        v2: Vector::new(v2),
        b2: 0.0,
        activation: ActivationSpec::heaviside(),
    })
}

/// Weight `w` whose floating-point sum `running + w` lands closest to
/// `target` (exactly on it whenever some double does).
fn readout_weight(running: f64, target: f64) -> f64 {
    let mut best = target - running;
    let mut best_err = (running + best - target).abs();
    let (mut up, mut down) = (best, best);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        for w in [up, down] {
            let err = (running + w - target).abs();
            if err < best_err {
                best = w;
                best_err = err;
            }
        }
    }
    best
}

/// Rank-1 hidden layer `(v1, u1, b1)` with an invertible evaluation matrix
/// on the data; returns it together with an LU of `Hᵀ`.
struct HiddenLayer {
    v1: Vector,
    u1: Vector,
    b1: Vector,
    lu_ht: Lu,
}

/// Chooses thresholds at the midpoints of the sorted projections (the first
/// one half a gap below the minimum), rescaled so the smallest gap is 4,
/// then jitters them until `H` is well conditioned.
fn build_hidden(x_cols: &Matrix, act: ActivationSpec, seed: u64) -> Result<HiddenLayer> {
    let v1 = distinct_projection(x_cols, seed)?;
    let ys = projections(&v1, x_cols);
    let m = ys.len();
    let order = sort_order(&ys);
    let sorted: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    let (gap, _) = gap_and_spread(&ys);
    let (scale, gap) = if m == 1 || act.name == ActivationKind::Heaviside {
        (1.0, if m == 1 { 1.0 } else { gap })
    } else {
        (4.0 / gap, gap)
    };
    let u1 = Vector::filled(m, scale);

    let mut best = f64::INFINITY;
    let mut rng = rng_for(seed, 200);
    for attempt in 0..MAX_ATTEMPTS {
        let t: Vec<f64> = (0..m)
            .map(|j| {
                let (lo, hi) = if j == 0 {
                    (sorted[0] - gap, sorted[0])
                } else {
                    (sorted[j - 1], sorted[j])
                };
                let frac = if attempt == 0 {
                    0.5
                } else {
                    rng.gen_range(0.1..0.9)
                };
                lo + frac * (hi - lo)
            })
            .collect();
        let b1: Vector = t.iter().map(|ti| -scale * ti).collect();
        let h = evaluation_matrix(&u1, &b1, act, &ys);
        let cond = condition_number(&h)?;
        if cond < best {
            best = cond;
        }
        if cond <= CONDITION_LIMIT {
            let lu_ht = Lu::factorize(&h.transpose())?;
            if !lu_ht.is_singular() {
                return Ok(HiddenLayer { v1, u1, b1, lu_ht });
            }
        }
    }
    Err(Rank1Error::EvaluationMatrixSingular {
        best_condition: best,
    })
}

/// Rank-1 network with a continuous activation interpolating `z` on the
/// columns of `x_cols`, readout from `Hᵀ v2 = z`.
pub fn scalar_interpolate(
    x_cols: &Matrix,
    z: &[f64],
    activation: ActivationSpec,
    seed: u64,
) -> Result<Rank1Net> {
    if !activation.name.is_continuous() {
        return Err(Rank1Error::NotContinuous(activation.name));
    }
    check_data(x_cols, z.len())?;
    let layer = build_hidden(x_cols, activation, seed)?;
    let v2 = layer.lu_ht.solve_vec(z)?;
    Ok(Rank1Net {
        v1: layer.v1,
        u1: layer.u1,
        b1: layer.b1,
        v2,
        b2: 0.0,
        activation,
    })
}

/// Rank-1 hidden layer plus full outer layer `W2 = Z H⁻¹` (`b2 = 0`)
/// memorizing the `k × M` targets `z`.
pub fn full_outer_memorize(
    x_cols: &Matrix,
    z: &Matrix,
    activation: ActivationSpec,
    seed: u64,
) -> Result<FullOuterNet> {
    check_data(x_cols, z.cols())?;
    let layer = build_hidden(x_cols, activation, seed)?;
    let w2 = layer.lu_ht.solve(&z.transpose())?.transpose();
    Ok(FullOuterNet {
        v1: layer.v1,
        u1: layer.u1,
        b1: layer.b1,
        w2,
        b2: Vector::zeros(z.rows()),
        activation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCollapse {
    pub collinear: bool,
    /// Largest distance from a target to the total-least-squares line.
    pub max_line_distance: f64,
}

/// Whether the target columns of `z` (`k × M`) lie on one affine line.
///
/// The line through the centroid along the top left singular vector of the
/// centered targets minimizes the squared distances; the certificate is the
/// largest distance of any target from it. Targets count as collinear when
/// that distance is at most `1e-9` of the largest pairwise distance.
pub fn affine_collapse_witness(z: &Matrix) -> AffineCollapse {
    let (k, m) = z.shape();
    if m <= 2 || k == 0 {
        return AffineCollapse {
            collinear: true,
            max_line_distance: 0.0,
        };
    }
    let cols = z.columns();
    let mean = cols
        .iter()
        .fold(Vector::zeros(k), |acc, c| acc.add(c))
        .scale(1.0 / m as f64);
    let centered: Vec<Vector> = cols.iter().map(|c| c.sub(&mean)).collect();
    let spread = cols
        .iter()
        .flat_map(|a| cols.iter().map(move |b| a.sub(b).norm()))
        .fold(0.0, f64::max);
    if spread == 0.0 {
        return AffineCollapse {
            collinear: true,
            max_line_distance: 0.0,
        };
    }
    let c = Matrix::from_columns(&centered).expect("equal lengths");
    let dir = svd(&c).expect("non-empty").u.column(0);
    let dist = centered
        .iter()
        .map(|p| p.sub(&dir.scale(dir.dot(p))).norm())
        .fold(0.0, f64::max);
    AffineCollapse {
        collinear: dist <= 1e-9 * spread,
        max_line_distance: dist,
    }
}

/// A map that sees its input only through `vᵀx`.
pub trait RidgeMap {
    fn direction(&self) -> &[f64];
    fn eval(&self, x: &[f64]) -> f64;
}

impl RidgeMap for Rank1Net {
    fn direction(&self) -> &[f64] {
        &self.v1
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.forward(x)
    }
}

/// `g(vᵀx)` for an arbitrary scalar profile `g`.
pub struct Ridge<F: Fn(f64) -> f64> {
    pub v: Vector,
    pub g: F,
}

impl<F: Fn(f64) -> f64> RidgeMap for Ridge<F> {
    fn direction(&self) -> &[f64] {
        &self.v
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(crate::linalg::dot(&self.v, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blindness {
    pub x_perp: Vector,
    pub delta: f64,
}

/// Random `x_perp ⊥ v` and `|f(x + x_perp) − f(x)|`.
pub fn blindness_check(map: &impl RidgeMap, x: &[f64], seed: u64) -> Blindness {
    let v = Vector::new(map.direction().to_vec());
    let mut rng = rng_for(seed, 300);
    let raw: Vector = (0..v.len())
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let x_perp = orthogonalize(&raw, &v);
    blindness_along(map, x, x_perp)
}

/// `|f(x + x_perp) − f(x)|` for a caller-chosen direction.
pub fn blindness_along(map: &impl RidgeMap, x: &[f64], x_perp: Vector) -> Blindness {
    let shifted: Vec<f64> = x.iter().zip(x_perp.iter()).map(|(a, b)| a + b).collect();
    let delta = (map.eval(&shifted) - map.eval(x)).abs();
    Blindness { x_perp, delta }
}

/// Removes the `v` component from `raw` (two Gram-Schmidt passes).
pub fn orthogonalize(raw: &Vector, v: &Vector) -> Vector {
    let nv = v.norm();
    if nv == 0.0 {
        return raw.clone();
    }
    let unit = v.scale(1.0 / nv);
    let once = raw.sub(&unit.scale(unit.dot(raw)));
    once.sub(&unit.scale(unit.dot(&once)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_matrix, random_vector, Distribution};

    fn row(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&[xs.to_vec()]).unwrap()
    }

    #[test]
    fn projection_one_dimensional() {
        assert_eq!(distinct_projection(&row(&[0.0, 1.0, 2.0]), 0).unwrap().as_slice(), &[1.0]);
        assert!(matches!(
            distinct_projection(&row(&[0.0, 1.0, 1.0]), 0),
            Err(Rank1Error::ProjectionDegenerate { .. })
        ));
    }

    #[test]
    fn thermometer_example() {
        let net = thermometer_interpolate(&row(&[0.0, 1.0, 2.0]), &[5.0, -1.0, 3.0]).unwrap();
        assert_eq!(net.v2.as_slice(), &[5.0, -6.0, 4.0]);
        let out = net.forward_batch(&row(&[0.0, 1.0, 2.0]));
        assert_eq!(out.as_slice(), &[5.0, -1.0, 3.0]);
    }

    #[test]
    fn thermometer_single_point() {
        let net = thermometer_interpolate(&row(&[0.3]), &[7.5]).unwrap();
        assert_eq!(net.v2.as_slice(), &[7.5]);
        assert!(-net.b1[0] < 0.3);
        assert_eq!(net.forward(&[0.3]), 7.5);
    }

    #[test]
    fn thermometer_hidden_is_lower_triangular() {
        let x = random_matrix(2, 12, 4, Distribution::Uniform);
        let z = random_vector(12, 5, Distribution::Gaussian);
        let net = thermometer_interpolate(&x, &z).unwrap();
        let h = net.hidden_matrix(&x);
        let ys: Vec<f64> = (0..12).map(|j| net.project(&x.column(j))).collect();
        let order = sort_order(&ys);
        for i in 0..12 {
            for (j, &col) in order.iter().enumerate() {
                assert_eq!(h.get(i, col), if j >= i { 1.0 } else { 0.0 });
            }
        }
        let err = net.forward_batch(&x).max_abs_diff(&z);
        assert!(err <= 2.0 * f64::EPSILON * z.norm_inf(), "err {err}");
    }

    #[test]
    fn thermometer_dyadic_targets_are_exact() {
        let x = random_matrix(3, 16, 3, Distribution::Uniform);
        let z: Vector = random_vector(16, 3, Distribution::Gaussian)
            .iter()
            .map(|v| (v * 1024.0).round() / 1024.0)
            .collect();
        let net = thermometer_interpolate(&x, &z).unwrap();
        assert_eq!(net.forward_batch(&x), z);
    }

    #[test]
    fn readout_weight_unreachable_target() {
        // 0.3 is not 10 plus any double; the closest sum is kept
        let w = readout_weight(10.0, 0.3);
        assert!((10.0 + w - 0.3).abs() <= 4.0 * f64::EPSILON * 10.0);
        assert_eq!(10.0 + readout_weight(10.0, -1.5), -1.5);
    }

    #[test]
    fn scalar_constant_targets() {
        let x = random_matrix(3, 10, 2, Distribution::Uniform);
        let net = scalar_interpolate(&x, &[4.0; 10], ActivationSpec::softplus(), 1).unwrap();
        assert!(net.forward_batch(&x).max_abs_diff(&Vector::filled(10, 4.0)) <= 4e-6);
    }

    #[test]
    fn scalar_single_point() {
        let net = scalar_interpolate(&row(&[2.0]), &[-3.0], ActivationSpec::softplus(), 0).unwrap();
        assert!((net.forward(&[2.0]) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_rejects_heaviside() {
        assert_eq!(
            scalar_interpolate(&row(&[0.0]), &[1.0], ActivationSpec::heaviside(), 0).unwrap_err(),
            Rank1Error::NotContinuous(ActivationKind::Heaviside)
        );
    }

    #[test]
    fn outer_layer_escapes_collapse() {
        let x = row(&[0.0, 1.0, 2.0]);
        let z = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let net = full_outer_memorize(&x, &z, ActivationSpec::softplus(), 0).unwrap();
        assert!(net.forward_batch(&x).sub(&z).max_abs() <= 1e-6);
        let zero = full_outer_memorize(&x, &Matrix::zeros(2, 3), ActivationSpec::softplus(), 0).unwrap();
        assert_eq!(zero.w2.max_abs(), 0.0);
    }

    #[test]
    fn affine_examples() {
        let diag = Matrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]]).unwrap();
        assert!(affine_collapse_witness(&diag).collinear);
        let tri = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let w = affine_collapse_witness(&tri);
        assert!(!w.collinear);
        assert!((w.max_line_distance - 2f64.sqrt() / 3.0).abs() < 1e-12);
        let two = Matrix::from_rows(&[vec![0.0, 5.0], vec![1.0, -2.0]]).unwrap();
        assert!(affine_collapse_witness(&two).collinear);
    }

    #[test]
    fn blindness_axis_direction() {
        let ridge = Ridge {
            v: Vector::new(vec![1.0, 0.0]),
            g: |y: f64| y.sin() * 3.0,
        };
        let b = blindness_along(&ridge, &[0.4, -1.0], Vector::new(vec![0.0, 1.0]));
        assert_eq!(b.delta, 0.0);
        let b = blindness_check(&ridge, &[0.4, -1.0], 3);
        assert_eq!(b.x_perp[0], 0.0);
        assert_eq!(b.delta, 0.0);
    }
}
