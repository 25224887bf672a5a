use super::{LinalgError, Matrix, Result, Vector};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `a = u · diag(sigma) · vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m×k, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative; k = min(m, n).
    pub sigma: Vector,
    /// k×n, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.sigma.len();
        let us = Matrix::from_fn(self.u.rows(), k, |i, j| self.u.get(i, j) * self.sigma[j]);
        us.matmul(&self.vt)
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        let s0 = self.sigma.first().copied().unwrap_or(0.0);
        let cutoff = rel_tol * s0.max(1.0);
        self.sigma.iter().filter(|&&s| s > cutoff).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Wide inputs are handled through the transpose.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        });
    }
    svd_tall(a)
}

fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    // Work column-major: w[j] is column j of the rotated matrix, v[j] column j of V.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).into_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON;
    // Columns below this squared norm are rounding noise; rotating against
    // them cannot change the result.
    let negligible = w.iter().flatten().map(|x| x * x).sum::<f64>() * eps * eps * 1e-2;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += wp[i] * wp[i];
                        be += wq[i] * wq[i];
                        ga += wp[i] * wq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                    || alpha.min(beta) <= negligible
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<(f64, usize)> = w
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let sigma: Vector = order.iter().map(|&(s, _)| s).collect();
    let s_max = sigma[0];
    let tiny = f64::MIN_POSITIVE.max(s_max * eps * (m as f64));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(s, j)) in order.iter().enumerate() {
        if s > tiny {
            ucols.push(w[j].iter().map(|x| x / s).collect());
        } else {
            ucols.push(vec![0.0; m]);
            missing.push(k);
        }
    }
    complete_orthonormal(&mut ucols, &missing, m);

    let u = Matrix::from_fn(m, n, |i, k| ucols[k][i]);
    let vt = Matrix::from_fn(n, n, |k, i| v[order[k].1][i]);
    Ok(SvdResult { u, sigma, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fill the columns listed in `missing` with unit vectors orthogonal to all others.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(candidate < m, "orthonormal completion ran out of basis vectors");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == k || c.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let d: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= d * ci;
                    }
                }
            }
            let nrm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-6 {
                cols[k] = e.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

/// Ratio of the largest to the smallest singular value (`inf` when singular).
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let s = svd(a)?;
    let smax = s.sigma[0];
    let smin = *s.sigma.last().unwrap();
    Ok(if smin == 0.0 { f64::INFINITY } else { smax / smin })
}

/// Number of singular values above `rel_tol · max(1, σ₁)`.
pub fn numerical_rank(a: &Matrix, rel_tol: f64) -> Result<usize> {
    Ok(svd(a)?.rank(rel_tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_matrix, Distribution};

    fn orthonormality_error(cols_as_rows: &Matrix) -> f64 {
        let g = cols_as_rows.matmul(&cols_as_rows.transpose());
        g.sub(&Matrix::identity(g.rows())).max_abs()
    }

    #[test]
    fn identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma.as_slice(), &[1.0, 1.0, 1.0]);

        let s = svd(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(s.sigma.as_slice(), &[3.0, 2.0, 1.0]);
        for k in 0..3 {
            // singular vectors are coordinate axes up to sign
            assert_eq!(s.u.column(k).norm_inf(), 1.0);
        }
    }

    #[test]
    fn random_square_reconstructs() {
        let a = random_matrix(8, 8, 17, Distribution::Gaussian);
        let s = svd(&a).unwrap();
        assert!(s.reconstruct().sub(&a).frob_norm() <= 1e-10 * a.frob_norm().max(1.0));
        assert!(orthonormality_error(&s.u.transpose()) < 1e-10);
        assert!(orthonormality_error(&s.vt) < 1e-10);
    }

    #[test]
    fn rank_deficient_and_wide() {
        let a = Matrix::outer(&[1.0, 2.0, 3.0], &[1.0, -1.0]);
        let s = svd(&a).unwrap();
        assert_eq!(s.rank(1e-9), 1);
        assert!(orthonormality_error(&s.u.transpose()) < 1e-10);
        let wide = a.transpose();
        let s = svd(&wide).unwrap();
        assert_eq!(s.u.shape(), (2, 2));
        assert_eq!(s.vt.shape(), (2, 3));
        assert!(s.reconstruct().sub(&wide).frob_norm() < 1e-12);

        let z = svd(&Matrix::zeros(3, 3)).unwrap();
        assert!(orthonormality_error(&z.u.transpose()) < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(svd(&Matrix::zeros(0, 3)).unwrap_err(), LinalgError::Empty);
    }
}
