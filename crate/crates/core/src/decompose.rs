//! Exact matrix-level DLoR decompositions.
//!
//! * [`additive_split`] writes `W` as a sum of low-rank summands grouped from
//!   its SVD, paired with zero-sum mixing weights for the wide construction.
//! * [`multiplicative_factorize`] writes an invertible `W` as a product
//!   `M_L ··· M_1` of components `M_l = αI + U_l V_lᵀ` with `rank ≤ r`.
//! * [`embed_rectangular`] places a rectangular weight inside a square one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, condition_number, svd, LinalgError, Lu, Matrix, Vector,
};

/// Relative SVD threshold used by every rank check in the crate.
pub const RANK_TOL: f64 = 1e-9;
/// Condition bound a random basis has to meet for every mixed-block matrix.
pub const BASIS_CONDITION_LIMIT: f64 = 1e8;
pub const BASIS_ATTEMPTS: usize = 64;
pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_PAD_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("expected a square matrix, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("alpha must be finite and nonzero, got {0}")]
    InvalidAlpha(f64),
    #[error("rank cap {rank} outside 1..={n}")]
    InvalidRank { rank: usize, n: usize },
    #[error("number of parts must be at least 1")]
    InvalidParts,
    #[error("input matrix is singular (smallest pivot {pivot:e})")]
    SingularInput { pivot: f64 },
    #[error("no admissible basis after {attempts} attempts (worst block k={k}, condition {condition:e})")]
    BasisSearchFailed {
        attempts: usize,
        k: usize,
        condition: f64,
    },
    #[error("partial product P_{k} is singular (smallest pivot {pivot:e})")]
    PartialProductSingular { k: usize, pivot: f64 },
    #[error("zero-sum mixing weights need at least two parts")]
    BetaDegenerate,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, DecomposeError>;

/// `αI + U Vᵀ` with `U, V ∈ R^{n×r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlorComponent {
    pub alpha: f64,
    pub u: Matrix,
    pub v: Matrix,
}

impl DlorComponent {
    pub fn new(alpha: f64, u: Matrix, v: Matrix) -> Self {
        assert_eq!(u.shape(), v.shape(), "U and V must have the same shape");
        DlorComponent { alpha, u, v }
    }

    pub fn n(&self) -> usize {
        self.u.rows()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn dense(&self) -> Matrix {
        self.u
            .matmul(&self.v.transpose())
            .add_scaled_identity(self.alpha)
    }

    /// `αx + U(Vᵀx)` without forming the dense matrix.
    pub fn apply(&self, x: &[f64]) -> Vector {
        let t = self.v.tr_matvec(x);
        let ut = self.u.matvec(&t);
        x.iter().zip(ut.iter()).map(|(xi, ui)| self.alpha * xi + ui).collect()
    }

    /// `αX + U(VᵀX)`. Much more accurate than `dense()·X` when `UVᵀ`
    /// dwarfs `α`.
    pub fn apply_matrix(&self, x: &Matrix) -> Matrix {
        let t = self.v.transpose().matmul(x);
        self.u.matmul(&t).add(&x.scale(self.alpha))
    }

    /// Trainable scalars: α plus both factors.
    pub fn param_count(&self) -> usize {
        1 + 2 * self.n() * self.rank()
    }
}

/// Size of the (rank+1)-th singular value of `w − scalar·I`, relative to
/// `max(1, ‖w‖_F)`. Zero when the difference has rank ≤ `rank`.
pub fn dlor_shape_residual(w: &Matrix, scalar: f64, rank: usize) -> linalg::Result<f64> {
    let diff = w.add_scaled_identity(-scalar);
    let s = svd(&diff)?;
    let excess = s.sigma.get(rank).copied().unwrap_or(0.0);
    Ok(excess / w.frob_norm().max(1.0))
}

/// True when `w` is `scalar·I` plus a matrix of rank ≤ `rank` (to [`RANK_TOL`]).
pub fn is_dlor_shaped(w: &Matrix, scalar: f64, rank: usize) -> linalg::Result<bool> {
    Ok(dlor_shape_residual(w, scalar, rank)? <= RANK_TOL)
}

/// `W = M_L ··· M_1`; `components[0]` is applied first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplicativeFactorization {
    pub alpha: f64,
    pub components: Vec<DlorComponent>,
    pub basis_z: Matrix,
    /// `‖M_L···M_1 − W‖_F / ‖W‖_F`.
    pub residual: f64,
}

impl MultiplicativeFactorization {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `M_k ··· M_1`, with `partial_product(0) = I`.
    pub fn partial_product(&self, k: usize) -> Matrix {
        let n = self.components[0].n();
        self.components[..k]
            .iter()
            .fold(Matrix::identity(n), |acc, m| m.apply_matrix(&acc))
    }

    pub fn product(&self) -> Matrix {
        self.partial_product(self.components.len())
    }

    pub fn apply(&self, x: &[f64]) -> Vector {
        self.components
            .iter()
            .fold(Vector::new(x.to_vec()), |acc, m| m.apply(&acc))
    }
}

fn block_widths(n: usize, r: usize) -> Vec<usize> {
    let l = n.div_ceil(r);
    (0..l).map(|i| if i + 1 < l { r } else { n - (l - 1) * r }).collect()
}

/// `[W Z[:, ..split] | Z[:, split..]]`.
fn mixed_block(wz: &Matrix, z: &Matrix, split: usize) -> Matrix {
    Matrix::from_fn(z.rows(), z.cols(), |i, j| {
        if j < split {
            wz.get(i, j)
        } else {
            z.get(i, j)
        }
    })
}

/// Exact factorization of an invertible `w` into `⌈N/r⌉` DLoR components.
///
/// A random orthogonal change of basis `Z` is drawn (and redrawn) until
/// every mixed block `[WZ_{1:kr} | Z_{kr+1:N}]` is well conditioned and the
/// factored product reproduces `W`. With
/// `E = W − α^L I` split into column blocks `C_j` of `EZ` and row blocks
/// `D_jᵀ` of `Z⁻¹`, the partial products
/// `P_k = α^{k−L}(α^L I + Σ_{j≤k} C_j D_jᵀ)` interpolate `P_0 = I`,
/// `P_L = W`, and the factors are `U_k = α^{k−L} C_k`,
/// `V_k = P_{k−1}^{−T} D_k`.
pub fn multiplicative_factorize(
    w: &Matrix,
    rank_cap: usize,
    alpha: f64,
    seed: u64,
) -> Result<MultiplicativeFactorization> {
    let (n, m) = w.shape();
    if n != m || n == 0 {
        return Err(DecomposeError::NotSquare(n, m));
    }
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(DecomposeError::InvalidAlpha(alpha));
    }
    if rank_cap == 0 || rank_cap > n {
        return Err(DecomposeError::InvalidRank { rank: rank_cap, n });
    }
    let lu_w = Lu::factorize(w)?;
    if lu_w.is_singular() {
        return Err(DecomposeError::SingularInput {
            pivot: lu_w.min_pivot(),
        });
    }

    let widths = block_widths(n, rank_cap);
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0, |acc, &w| {
            let start = *acc;
            *acc += w;
            Some(start)
        })
        .collect();

    let mut best: Option<MultiplicativeFactorization> = None;
    let mut least_bad = (0, f64::INFINITY);
    let mut singular = None;
    for attempt in 0..BASIS_ATTEMPTS {
        let z = random_orthogonal(n, seed, attempt as u64);
        let wz = w.matmul(&z);
        if let Some((k, cond)) = ill_conditioned_block(&wz, &z, &offsets)? {
            if cond < least_bad.1 {
                least_bad = (k, cond);
            }
            continue;
        }
        let fact = match factor_with_basis(w, &wz, z, alpha, &offsets, &widths) {
            Ok(f) => f,
            Err(e @ DecomposeError::PartialProductSingular { .. }) => {
                singular = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        if fact.residual <= RESIDUAL_TARGET {
            return Ok(fact);
        }
        if best.as_ref().is_none_or(|b| fact.residual < b.residual) {
            best = Some(fact);
        }
    }
    match (best, singular) {
        (Some(f), _) => Ok(f),
        (None, Some(e)) => Err(e),
        (None, None) => Err(DecomposeError::BasisSearchFailed {
            attempts: BASIS_ATTEMPTS,
            k: least_bad.0,
            condition: least_bad.1,
        }),
    }
}

/// Residual at which the basis search stops early. Later bases are tried
/// because the rounding error of the product depends strongly on `Z` when
/// `α^L` is small.
const RESIDUAL_TARGET: f64 = 1e-9;

fn factor_with_basis(
    w: &Matrix,
    wz: &Matrix,
    z: Matrix,
    alpha: f64,
    offsets: &[usize],
    widths: &[usize],
) -> Result<MultiplicativeFactorization> {
    let (n, l) = (w.rows(), widths.len());
    let alpha_l = alpha.powi(l as i32);
    let c = w.add_scaled_identity(-alpha_l).matmul(&z);

    // P_{k-1} = α^{k-1-L}·[WZ_{<k} | α^L Z_{≥k}]·Z⁻¹, so the solve
    // P_{k-1}ᵀ V_k = D_k reduces to V_k = α^{1-k}·B_{k-1}^{-T} e_k with the
    // mixed block B_{k-1} = [WZ_{<k} | Z_{≥k}], which the basis search keeps
    // well conditioned.
    let mut components = Vec::with_capacity(l);
    for k in 0..l {
        let (start, end) = (offsets[k], offsets[k] + widths[k]);
        let lu_t = Lu::factorize(&mixed_block(wz, &z, start).transpose())?;
        if lu_t.is_singular() {
            return Err(DecomposeError::PartialProductSingular {
                k,
                pivot: lu_t.min_pivot(),
            });
        }
        let unit = Matrix::from_fn(n, end - start, |i, j| if i == start + j { 1.0 } else { 0.0 });
        let v_k = lu_t.solve(&unit)?.scale(alpha.powi(-(k as i32)));
        let u_k = c.column_block(start, end).scale(alpha.powi(k as i32 + 1 - l as i32));
        components.push(DlorComponent::new(alpha, u_k, v_k));
    }

    let mut fact = MultiplicativeFactorization {
        alpha,
        components,
        basis_z: z,
        residual: 0.0,
    };
    fact.residual = fact.product().sub(w).frob_norm() / w.frob_norm();
    Ok(fact)
}

/// First mixed block whose condition number exceeds the limit.
fn ill_conditioned_block(
    wz: &Matrix,
    z: &Matrix,
    offsets: &[usize],
) -> Result<Option<(usize, f64)>> {
    for (k, &split) in offsets.iter().enumerate().skip(1) {
        let cond = condition_number(&mixed_block(wz, z, split))?;
        if cond.is_nan() || cond > BASIS_CONDITION_LIMIT {
            return Ok(Some((k, cond)));
        }
    }
    Ok(None)
}

/// Haar-distributed orthogonal matrix: Gram-Schmidt on a gaussian matrix.
fn random_orthogonal(n: usize, seed: u64, attempt: u64) -> Matrix {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + attempt);
    loop {
        let cols: Vec<Vector> = (0..n)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect();
        let q = gram_schmidt(&cols);
        if q.len() == n {
            return Matrix::from_columns(&q).expect("square orthonormal basis");
        }
    }
}

/// SVD-grouped additive split `W = Σ_l summands[l]` with optional zero-sum weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditiveSplit {
    pub summands: Vec<Matrix>,
    /// `None` when only one part was requested.
    pub betas: Option<Vector>,
}

impl AdditiveSplit {
    pub fn betas(&self) -> Result<&Vector> {
        self.betas.as_ref().ok_or(DecomposeError::BetaDegenerate)
    }

    pub fn sum(&self) -> Matrix {
        let first = self.summands[0].clone();
        self.summands[1..].iter().fold(first, |acc, m| acc.add(m))
    }
}

/// `(1, …, 1, −(L−1))`; sums to exactly zero in floating point.
pub fn zero_sum_betas(parts: usize) -> Result<Vector> {
    if parts < 2 {
        return Err(DecomposeError::BetaDegenerate);
    }
    let mut betas = vec![1.0; parts];
    betas[parts - 1] = -((parts - 1) as f64);
    Ok(Vector::new(betas))
}

/// Splits `w` into `parts` summands by dealing its singular triplets out
/// round-robin (σ₁ → part 1, σ₂ → part 2, …). Numerically zero triplets are
/// dropped, so each summand has rank ≤ ⌈rank(W)/parts⌉.
pub fn additive_split(w: &Matrix, parts: usize) -> Result<AdditiveSplit> {
    if parts == 0 {
        return Err(DecomposeError::InvalidParts);
    }
    let s = svd(w)?;
    let cutoff = 1e-13 * s.sigma[0];
    let mut summands = vec![Matrix::zeros(w.rows(), w.cols()); parts];
    for (i, &sigma) in s.sigma.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let left: Vec<f64> = s.u.column(i).iter().map(|x| x * sigma).collect();
        let term = Matrix::outer(&left, s.vt.row(i));
        let slot = &mut summands[i % parts];
        *slot = slot.add(&term);
    }
    Ok(AdditiveSplit {
        summands,
        betas: zero_sum_betas(parts).ok(),
    })
}

/// How to fill the padding of a rectangular weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum PadStrategy {
    /// Remaining diagonal entries set to this value.
    Diagonal(f64),
    /// Padding rows/columns are an orthonormal complement of `W`'s
    /// row/column space, scaled by this value.
    Orthogonal(f64),
}

impl Default for PadStrategy {
    fn default() -> Self {
        PadStrategy::Diagonal(DEFAULT_PAD_EPSILON)
    }
}

/// Shape bookkeeping for a rectangular layer embedded in `dim × dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub dim: usize,
}

impl PadSpec {
    pub fn square(n: usize) -> Self {
        PadSpec {
            in_dim: n,
            out_dim: n,
            dim: n,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.in_dim == self.dim && self.out_dim == self.dim
    }

    /// `[x; 0]`.
    pub fn pad_input(&self, x: &[f64]) -> Vector {
        let mut v = x.to_vec();
        v.resize(self.dim, 0.0);
        Vector::new(v)
    }

    pub fn truncate_output(&self, y: &[f64]) -> Vector {
        Vector::new(y[..self.out_dim].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub w_square: Matrix,
    pub pad: PadSpec,
}

pub fn embed_rectangular(w: &Matrix) -> Embedding {
    embed_rectangular_with(w, PadStrategy::default())
}

pub fn embed_rectangular_with(w: &Matrix, strategy: PadStrategy) -> Embedding {
    let (m, n) = w.shape();
    let d = m.max(n);
    let mut sq = Matrix::zeros(d, d);
    sq.set_block(0, 0, w);
    let pad = PadSpec {
        in_dim: n,
        out_dim: m,
        dim: d,
    };
    if m == n {
        return Embedding { w_square: sq, pad };
    }
    match strategy {
        PadStrategy::Diagonal(eps) => {
            for i in m.min(n)..d {
                sq.set(i, i, eps);
            }
        }
        PadStrategy::Orthogonal(scale) => {
            if m > n {
                // extra columns orthogonal to the column space of w
                let extra = orthonormal_complement(&w.columns(), m);
                for (j, col) in extra.iter().enumerate().take(d - n) {
                    for i in 0..m {
                        sq.set(i, n + j, scale * col[i]);
                    }
                }
            } else {
                let rows: Vec<Vector> = (0..m).map(|i| Vector::new(w.row(i).to_vec())).collect();
                let extra = orthonormal_complement(&rows, n);
                for (i, row) in extra.iter().enumerate().take(d - m) {
                    for j in 0..n {
                        sq.set(m + i, j, scale * row[j]);
                    }
                }
            }
        }
    }
    Embedding { w_square: sq, pad }
}

/// Orthonormalizes `vectors` in order (two Gram-Schmidt passes), skipping
/// any that are numerically dependent on the earlier ones.
pub fn gram_schmidt(vectors: &[Vector]) -> Vec<Vector> {
    let mut basis: Vec<Vector> = Vec::new();
    for v in vectors {
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut e = v.clone();
        for _ in 0..2 {
            for b in &basis {
                e = e.sub(&b.scale(b.dot(&e)));
            }
        }
        let nrm = e.norm();
        if nrm > 1e-8 * norm0 {
            basis.push(e.scale(1.0 / nrm));
        }
    }
    basis
}

/// Orthonormal basis of the orthogonal complement of `span(vectors)` in R^dim.
pub fn orthonormal_complement(vectors: &[Vector], dim: usize) -> Vec<Vector> {
    let span = gram_schmidt(vectors).len();
    let mut all = vectors.to_vec();
    all.extend((0..dim).map(|i| {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        Vector::new(e)
    }));
    let basis = gram_schmidt(&all);
    basis.into_iter().skip(span).take(dim - span).collect()
}

/// Returns `w` if invertible to pivot tolerance, else `w + εI` with ε doubled
/// from `epsilon` until it is.
pub fn perturb_to_invertible(w: &Matrix, epsilon: f64) -> Result<Matrix> {
    if !w.is_square() {
        return Err(DecomposeError::NotSquare(w.rows(), w.cols()));
    }
    if !Lu::factorize(w)?.is_singular() {
        return Ok(w.clone());
    }
    let mut eps = epsilon.abs().max(f64::MIN_POSITIVE);
    loop {
        let candidate = w.add_scaled_identity(eps);
        if !Lu::factorize(&candidate)?.is_singular() {
            return Ok(candidate);
        }
        eps *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{det, numerical_rank, random_matrix, Distribution};

    #[test]
    fn identity_factorization_is_trivial() {
        let f = multiplicative_factorize(&Matrix::identity(2), 1, 1.0, 0).unwrap();
        assert_eq!(f.len(), 2);
        for c in &f.components {
            assert!(c.dense().sub(&Matrix::identity(2)).max_abs() < 1e-15);
        }
        assert!(f.residual < 1e-15);
    }

    #[test]
    fn single_block_collapses_to_w() {
        let w = Matrix::scaled_identity(2, 2.0);
        let f = multiplicative_factorize(&w, 2, 0.8, 3).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f.components[0].dense().sub(&w).max_abs() < 1e-12);
    }

    #[test]
    fn random_sixteen_rank_six() {
        let w = random_matrix(16, 16, 9, Distribution::Gaussian);
        let f = multiplicative_factorize(&w, 6, 0.8, 9).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(
            f.components.iter().map(DlorComponent::rank).collect::<Vec<_>>(),
            vec![6, 6, 4]
        );
        assert!(f.residual <= 1e-8, "residual {}", f.residual);
        assert!(f.partial_product(0).sub(&Matrix::identity(16)).max_abs() == 0.0);
        for c in &f.components {
            assert!(is_dlor_shaped(&c.dense(), c.alpha, c.rank()).unwrap());
        }
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        assert!(f.apply(&x).max_abs_diff(&w.matvec(&x)) < 1e-8);
    }

    #[test]
    fn factorization_errors() {
        let w = Matrix::identity(3);
        assert_eq!(
            multiplicative_factorize(&Matrix::zeros(2, 3), 1, 0.8, 0).unwrap_err(),
            DecomposeError::NotSquare(2, 3)
        );
        assert!(matches!(
            multiplicative_factorize(&w, 1, 0.0, 0),
            Err(DecomposeError::InvalidAlpha(_))
        ));
        assert!(matches!(
            multiplicative_factorize(&w, 4, 0.8, 0),
            Err(DecomposeError::InvalidRank { .. })
        ));
        assert!(matches!(
            multiplicative_factorize(&Matrix::outer(&[1.0, 1.0], &[1.0, 2.0]), 1, 0.8, 0),
            Err(DecomposeError::SingularInput { .. })
        ));
    }

    #[test]
    fn additive_diagonal() {
        let w = Matrix::diag(&[3.0, 2.0, 1.0]);
        let s = additive_split(&w, 3).unwrap();
        for (l, m) in s.summands.iter().enumerate() {
            assert_eq!(numerical_rank(m, RANK_TOL).unwrap(), 1);
            assert!((m.get(l, l).abs() - [3.0, 2.0, 1.0][l]).abs() < 1e-15);
        }
        assert!(s.sum().sub(&w).max_abs() < 1e-15);
        assert_eq!(s.betas().unwrap().as_slice(), &[1.0, 1.0, -2.0]);
    }

    #[test]
    fn additive_single_part() {
        let w = random_matrix(4, 4, 1, Distribution::Uniform);
        let s = additive_split(&w, 1).unwrap();
        assert_eq!(s.summands.len(), 1);
        assert!(s.sum().sub(&w).frob_norm() < 1e-12);
        assert_eq!(s.betas().unwrap_err(), DecomposeError::BetaDegenerate);
        assert_eq!(additive_split(&w, 0).unwrap_err(), DecomposeError::InvalidParts);
    }

    #[test]
    fn additive_random_rank_bound() {
        let w = random_matrix(8, 8, 5, Distribution::Gaussian);
        let s = additive_split(&w, 4).unwrap();
        assert!(s.sum().sub(&w).frob_norm() <= 1e-10);
        for m in &s.summands {
            assert!(numerical_rank(m, RANK_TOL).unwrap() <= 2);
        }
    }

    #[test]
    fn embedding_shapes() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 7.0]]).unwrap();
        let e = embed_rectangular(&w);
        assert_eq!(e.pad, PadSpec { in_dim: 3, out_dim: 2, dim: 3 });
        assert_eq!(e.w_square.get(2, 2), DEFAULT_PAD_EPSILON);
        let x = [1.0, -1.0, 0.5];
        let y = e.w_square.matvec(&e.pad.pad_input(&x));
        assert_eq!(e.pad.truncate_output(&y), w.matvec(&x));

        let sq = random_matrix(3, 3, 1, Distribution::Uniform);
        let e = embed_rectangular(&sq);
        assert!(e.pad.is_trivial());
        assert_eq!(e.w_square, sq);
    }

    #[test]
    fn orthogonal_padding_is_well_conditioned() {
        let w = random_matrix(16, 1, 4, Distribution::Uniform);
        let e = embed_rectangular_with(&w, PadStrategy::Orthogonal(w.frob_norm()));
        let cond = condition_number(&e.w_square).unwrap();
        assert!(cond < 1.0 + 1e-10, "cond {cond}");
        let x = [0.7];
        let y = e.w_square.matvec(&e.pad.pad_input(&x));
        assert!(e.pad.truncate_output(&y).max_abs_diff(&w.matvec(&x)) < 1e-15);

        let wide = w.transpose();
        let e = embed_rectangular_with(&wide, PadStrategy::Orthogonal(1.0));
        assert!(condition_number(&e.w_square).unwrap() < 1e3);
    }

    #[test]
    fn perturbation() {
        let w = random_matrix(4, 4, 2, Distribution::Gaussian);
        assert_eq!(perturb_to_invertible(&w, 1e-6).unwrap(), w);
        let z = perturb_to_invertible(&Matrix::zeros(2, 2), 1e-6).unwrap();
        assert_eq!(z, Matrix::scaled_identity(2, 1e-6));
        let r1 = Matrix::outer(&[1.0; 8], &[0.5; 8]);
        let p = perturb_to_invertible(&r1, 1e-6).unwrap();
        assert!(det(&p).unwrap() != 0.0);
        assert!(p.sub(&r1).frob_norm() <= 1e-4);
    }

    #[test]
    fn component_param_count() {
        let c = DlorComponent::new(0.8, Matrix::zeros(16, 6), Matrix::zeros(16, 6));
        assert_eq!(c.param_count(), 193);
    }
}
