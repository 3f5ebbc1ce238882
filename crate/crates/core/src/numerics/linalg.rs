use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::numerics::svd::svd;

/// Default relative cutoff for [`pseudo_inverse`]: singular values below
/// `DEFAULT_PINV_CUTOFF · σ_max` are treated as zero.
pub const DEFAULT_PINV_CUTOFF: f64 = 1e-10;

/// Inputs with `σ_min / σ_max` below this are rejected by [`solve_linear`].
pub const SINGULAR_RATIO: f64 = 1e-12;

/// Moore–Penrose pseudo-inverse via SVD.
pub fn pseudo_inverse(m: &Matrix, rel_cutoff: f64) -> Result<Matrix> {
    if !(rel_cutoff > 0.0 && rel_cutoff < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pseudo-inverse cutoff must lie in (0, 1), got {rel_cutoff}"
        )));
    }
    let d = svd(m)?;
    let threshold = rel_cutoff * d.sigma_max();
    let (rows, cols) = m.shape();
    let r = d.singular_values.len();
    // V · Σ⁺ · Uᵀ, accumulated one singular triplet at a time
    let mut out = Matrix::zeros(cols, rows);
    for k in 0..r {
        let s = d.singular_values[k];
        if s <= threshold || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..cols {
            let vik = d.vt.get(k, i) * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..rows {
                let cur = out.get(i, j);
                out.set(i, j, cur + vik * d.u.get(j, k));
            }
        }
    }
    Ok(out)
}

/// `σ_max(m)`, an upper bound on the spectral radius of a square matrix.
pub fn spectral_radius_bound(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(svd(m)?.sigma_max())
}

/// Solve `a · x = b` for square, well-conditioned `a`.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.rows() != a.rows() {
        return Err(Error::shape(
            "solve_linear",
            format!("rhs with {} rows", a.rows()),
            format!("{} rows", b.rows()),
        ));
    }
    let d = svd(a)?;
    let ratio = if d.sigma_max() == 0.0 {
        0.0
    } else {
        d.sigma_min() / d.sigma_max()
    };
    if ratio < SINGULAR_RATIO {
        return Err(Error::Singular { ratio });
    }
    let lu = Lu::factor(a)?;
    Ok(lu.refined_solve(a, b))
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NonSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        let mut lu = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs == 0.0 {
                return Err(Error::Singular { ratio: 0.0 });
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap(k * n + j, pivot_row * n + j);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    /// Solve `A · X = B`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.n;
        assert_eq!(b.rows(), n);
        let m = b.cols();
        let mut x = Matrix::from_fn(n, m, |i, j| b.get(self.perm[i], j));
        let data = x.as_mut_slice();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[i * n + k];
                if l != 0.0 {
                    for j in 0..m {
                        data[i * m + j] -= l * data[k * m + j];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.lu[i * n + k];
                if u != 0.0 {
                    for j in 0..m {
                        data[i * m + j] -= u * data[k * m + j];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..m {
                data[i * m + j] /= d;
            }
        }
        x
    }

    /// Solve `Aᵀ · X = B`.
    pub fn solve_transpose(&self, b: &Matrix) -> Matrix {
        let n = self.n;
        assert_eq!(b.rows(), n);
        let m = b.cols();
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ z = y, x = Pᵀ z.
        let mut y = b.clone();
        let data = y.as_mut_slice();
        for i in 0..n {
            for k in 0..i {
                let u = self.lu[k * n + i];
                if u != 0.0 {
                    for j in 0..m {
                        data[i * m + j] -= u * data[k * m + j];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..m {
                data[i * m + j] /= d;
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let l = self.lu[k * n + i];
                if l != 0.0 {
                    for j in 0..m {
                        data[i * m + j] -= l * data[k * m + j];
                    }
                }
            }
        }
        let mut x = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                x.set(self.perm[i], j, y.get(i, j));
            }
        }
        x
    }

    /// Solve with one step of iterative refinement against the original `a`.
    pub fn refined_solve(&self, a: &Matrix, b: &Matrix) -> Matrix {
        let mut x = self.solve(b);
        let residual = b.sub(&a.matmul(&x));
        x.add_scaled(1.0, &self.solve(&residual));
        x
    }
}
