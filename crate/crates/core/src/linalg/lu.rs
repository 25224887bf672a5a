use super::{LinalgError, Matrix, Result, Vector};

/// Pivots below `PIVOT_TOLERANCE · ‖a‖_∞` mark a matrix as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// LU factorization with partial pivoting, `P·a = L·U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
    min_pivot: f64,
    scale: f64,
}

impl Lu {
    /// Factorize without a singularity check. Exactly-zero pivots are skipped.
    pub fn factorize(a: &Matrix) -> Result<Lu> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch(format!(
                "LU needs a square matrix, got {:?}",
                a.shape()
            )));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu.get(i, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            min_pivot = min_pivot.min(pmax);
            if p != k {
                for j in 0..n {
                    let t = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, t);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let piv = lu.get(k, k);
            if piv == 0.0 {
                continue;
            }
            for i in (k + 1)..n {
                let f = lu.get(i, k) / piv;
                lu.set(i, k, f);
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu.set(i, j, lu.get(i, j) - f * lu.get(k, j));
                    }
                }
            }
        }
        Ok(Lu {
            lu,
            perm,
            sign,
            min_pivot: if n == 0 { 0.0 } else { min_pivot },
            scale: a.norm_inf(),
        })
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn is_singular(&self) -> bool {
        self.min_pivot.is_nan() || self.min_pivot <= PIVOT_TOLERANCE * self.scale
    }

    pub fn det(&self) -> f64 {
        (0..self.lu.rows()).fold(self.sign, |d, i| d * self.lu.get(i, i))
    }

    fn check(&self) -> Result<()> {
        if self.is_singular() {
            Err(LinalgError::SingularMatrix {
                pivot: self.min_pivot,
            })
        } else {
            Ok(())
        }
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.lu.rows();
        let b: Vec<f64> = self.perm.iter().map(|&p| x[p]).collect();
        x.copy_from_slice(&b);
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu.get(i, j) * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu.get(i, j) * x[j]).sum();
            x[i] = (x[i] - s) / self.lu.get(i, i);
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vector> {
        self.check()?;
        if b.len() != self.lu.rows() {
            return Err(LinalgError::DimensionMismatch("rhs length".into()));
        }
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(Vector::new(x))
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        self.check()?;
        if b.rows() != self.lu.rows() {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs has {} rows, system has {}",
                b.rows(),
                self.lu.rows()
            )));
        }
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let mut col = b.column(j).into_vec();
            self.solve_in_place(&mut col);
            for (i, v) in col.into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}

/// Solve `a·x = b` for a square, non-singular `a`.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Lu::factorize(a)?.solve(b)
}

pub fn lu_solve_vec(a: &Matrix, b: &[f64]) -> Result<Vector> {
    Lu::factorize(a)?.solve_vec(b)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Lu::factorize(a)?.solve(&Matrix::identity(a.rows()))
}

/// Determinant; singular matrices yield (near) zero rather than an error.
pub fn det(a: &Matrix) -> Result<f64> {
    Ok(Lu::factorize(a)?.det())
}
