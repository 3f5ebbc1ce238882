//! Simplex equiangular tight frames and distances to them.
//!
//! A frame is `S = α·√(K/(K−1))·P·(I_K − 11ᵀ/K)` for a partial-orthogonal
//! `P` (D×K, `PᵀP = I_K`). Its Gram is `α²·K/(K−1)·(I_K − 11ᵀ/K)`: every
//! column has norm `|α|` and every pair has cosine `−1/(K−1)`.

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct EtfFrame {
    pub s: Matrix,
    pub alpha: f64,
    pub p: Matrix,
    pub k: usize,
    pub d: usize,
}

impl EtfFrame {
    pub fn gram(&self) -> Matrix {
        self.s.t_matmul(&self.s)
    }
}

/// `I_K − 11ᵀ/K`.
pub fn centering(k: usize) -> Matrix {
    let inv = 1.0 / k as f64;
    Matrix::from_fn(k, k, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// Gram matrix of a K-simplex ETF with scale `alpha`.
pub fn etf_gram(k: usize, alpha: f64) -> Matrix {
    let c = alpha * alpha * k as f64 / (k as f64 - 1.0);
    centering(k).scale(c)
}

pub fn make_etf(k: usize, d: usize, alpha: f64, rng: &mut Rng) -> Result<EtfFrame> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("ETF needs k >= 2, got {k}")));
    }
    if d < k {
        return Err(Error::shape("make_etf", format!("d >= k = {k}"), format!("d = {d}")));
    }
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("ETF scale must be non-zero and finite, got {alpha}")));
    }
    let p = partial_orthogonal(d, k, rng);
    let factor = alpha * (k as f64 / (k as f64 - 1.0)).sqrt();
    let s = p.matmul(&centering(k)).scale(factor);
    Ok(EtfFrame { s, alpha, p, k, d })
}

/// Haar-distributed D×K matrix with orthonormal columns: Gram–Schmidt (with
/// one re-orthogonalization pass) applied to a Gaussian matrix.
pub fn partial_orthogonal(d: usize, k: usize, rng: &mut Rng) -> Matrix {
    assert!(d >= k && k >= 1);
    let g = rng.gaussian_matrix(d, k, 1.0);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = g.column(j);
        for _ in 0..2 {
            for prev in &q {
                let proj = dot(&v, prev);
                v.iter_mut().zip(prev).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        // a Gaussian column lies in the span of the previous ones with probability zero
        assert!(norm > 0.0, "degenerate Gaussian draw");
        q.push(v.iter().map(|x| x / norm).collect());
    }
    Matrix::from_fn(d, k, |i, j| q[j][i])
}

fn check_gram(op: &'static str, gram: &Matrix, k: usize) -> Result<()> {
    if gram.shape() != (k, k) {
        return Err(Error::shape(op, format!("{k}x{k} Gram"), format!("{}x{}", gram.rows(), gram.cols())));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("{op}: k must be >= 2")));
    }
    let scale = gram.frobenius_norm().max(f64::MIN_POSITIVE);
    if gram.asymmetry() > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!("{op}: Gram matrix is not symmetric")));
    }
    Ok(())
}

/// Scale-free distance from a Gram matrix to the ETF Gram:
/// `‖G/‖G‖_F − T/‖T‖_F‖_F` with `T = I_K − 11ᵀ/K`.
///
/// `‖T‖_F = √(K−1)`, so the target is `(I_K − 11ᵀ/K)/√(K−1)`; this is the
/// normalization under which an exact ETF has distance zero for every K.
pub fn gram_distance_to_etf(gram: &Matrix, k: usize) -> Result<f64> {
    check_gram("gram_distance_to_etf", gram, k)?;
    let norm = gram.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("Gram matrix"));
    }
    let target = centering(k).scale(1.0 / ((k - 1) as f64).sqrt());
    Ok(gram.scale(1.0 / norm).sub(&target).frobenius_norm())
}

/// Unnormalized distance `‖G − α²·K/(K−1)·(I_K − 11ᵀ/K)‖_F` against an ETF
/// Gram of caller-chosen scale.
pub fn raw_gram_distance(gram: &Matrix, k: usize, alpha: f64) -> Result<f64> {
    check_gram("raw_gram_distance", gram, k)?;
    Ok(gram.sub(&etf_gram(k, alpha)).frobenius_norm())
}
