//! Shared test helpers: central differences, and reference implementations
//! of the metrics with plain loops over samples and a nalgebra eigendecomposition for the pseudo-inverse of the symmetric
//! Σ_B. (nalgebra's general SVD loses several digits on the rank-deficient
//! Σ_B, so it is not used here.)

#![allow(dead_code)]

use deqnc_core::numerics::Matrix;
use nalgebra::DMatrix;

pub struct NaiveStats {
    pub means: Vec<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_b: Vec<Vec<f64>>,
}

pub fn naive_stats(h: &Matrix, labels: &[usize], k: usize) -> NaiveStats {
    let (d, n) = h.shape();
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    for j in 0..n {
        counts[labels[j]] += 1.0;
        for i in 0..d {
            means[labels[j]][i] += h.get(i, j);
        }
    }
    for c in 0..k {
        for i in 0..d {
            means[c][i] /= counts[c];
        }
    }
    let mut g = vec![0.0; d];
    for m in &means {
        for i in 0..d {
            g[i] += m[i] / k as f64;
        }
    }
    let mut sigma_w = vec![vec![0.0; d]; d];
    for j in 0..n {
        let m = &means[labels[j]];
        for a in 0..d {
            for b in 0..d {
                sigma_w[a][b] += (h.get(a, j) - m[a]) * (h.get(b, j) - m[b]) / n as f64;
            }
        }
    }
    let mut sigma_b = vec![vec![0.0; d]; d];
    for m in &means {
        for a in 0..d {
            for b in 0..d {
                sigma_b[a][b] += (m[a] - g[a]) * (m[b] - g[b]) / k as f64;
            }
        }
    }
    NaiveStats { means, sigma_w, sigma_b }
}

pub fn naive_nc1(h: &Matrix, labels: &[usize], k: usize, cutoff: f64) -> f64 {
    let s = naive_stats(h, labels, k);
    let d = s.sigma_b.len();
    let b = DMatrix::from_fn(d, d, |i, j| s.sigma_b[i][j]);
    let eig = b.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut pinv = DMatrix::zeros(d, d);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff * top {
            let v = eig.eigenvectors.column(i);
            pinv += v * v.transpose() / l;
        }
    }
    let mut tr = 0.0;
    for i in 0..d {
        for j in 0..d {
            tr += s.sigma_w[i][j] * pinv[(j, i)];
        }
    }
    tr / k as f64
}

pub fn naive_nc2(h: &Matrix, labels: &[usize], k: usize) -> f64 {
    let s = naive_stats(h, labels, k);
    let mut gram = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            for i in 0..s.means[a].len() {
                gram[a][b] += s.means[a][i] * s.means[b][i];
            }
        }
    }
    let norm: f64 = gram.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            // unit-Frobenius simplex Gram
            let target = if a == b { 1.0 - 1.0 / k as f64 } else { -1.0 / k as f64 } / (k as f64 - 1.0).sqrt();
            total += (gram[a][b] / norm - target).powi(2);
        }
    }
    total.sqrt()
}

pub fn naive_nc3(w: &Matrix, h: &Matrix, labels: &[usize], k: usize) -> f64 {
    let s = naive_stats(h, labels, k);
    let d = w.cols();
    let nw: f64 = (0..k).flat_map(|c| (0..d).map(move |i| (c, i))).map(|(c, i)| w.get(c, i).powi(2)).sum::<f64>().sqrt();
    let nh: f64 = s.means.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let mut total = 0.0;
    for c in 0..k {
        for i in 0..d {
            total += (w.get(c, i) / nw - s.means[c][i] / nh).powi(2);
        }
    }
    total.sqrt()
}

/// Central differences of `f` at every entry of `x`, step 1e-6.
pub fn central_difference(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let step = 1e-6;
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let mut plus = x.clone();
        plus.set(i, j, x.get(i, j) + step);
        let mut minus = x.clone();
        minus.set(i, j, x.get(i, j) - step);
        (f(&plus) - f(&minus)) / (2.0 * step)
    })
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1e-12)
}
