//! Neural-collapse metrics on last-layer features.
//!
//! Conventions:
//! - the global mean is the unweighted mean of the class means, also under
//!   class imbalance;
//! - NC3 pairs row `k` of `W` with class mean `k`, i.e. compares `W` with `H̄ᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::gram_distance_to_etf;
use crate::numerics::{dot, pseudo_inverse, svd, Matrix};

/// Value reported for the minority cosine when a tracked classifier row is
/// numerically zero and the cosine is undefined.
pub const UNDEFINED_COSINE: f64 = -2.0;

#[derive(Debug, Clone)]
pub struct ClassStatistics {
    /// D×K, column k is the mean of class k.
    pub class_means: Matrix,
    pub global_mean: Vec<f64>,
    pub sigma_w: Matrix,
    pub sigma_b: Matrix,
    pub k: usize,
}

pub fn class_statistics(features: &Matrix, labels: &[usize], k: usize) -> Result<ClassStatistics> {
    let (d, n) = features.shape();
    if labels.len() != n {
        return Err(Error::shape("class_statistics", format!("{n} labels"), format!("{}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for k = {k}")));
    }
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; d]; k];
    for (j, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (i, s) in sums[l].iter_mut().enumerate() {
            *s += features.get(i, j);
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(empty));
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let global_mean: Vec<f64> = (0..d).map(|i| means.iter().map(|m| m[i]).sum::<f64>() / k as f64).collect();

    // Σ_W = (1/N) Σ (h − h̄_y)(h − h̄_y)ᵀ as Dᵀ·D / N with centred columns
    let centred = Matrix::from_fn(d, n, |i, j| features.get(i, j) - means[labels[j]][i]);
    let sigma_w = centred.matmul_t(&centred).scale(1.0 / n as f64);
    let between = Matrix::from_fn(d, k, |i, c| means[c][i] - global_mean[i]);
    let sigma_b = between.matmul_t(&between).scale(1.0 / k as f64);

    Ok(ClassStatistics {
        class_means: Matrix::from_fn(d, k, |i, c| means[c][i]),
        global_mean,
        sigma_w,
        sigma_b,
        k,
    })
}

/// `(1/K)·tr(Σ_W · Σ_B⁺)`.
pub fn nc1(stats: &ClassStatistics, cutoff: f64) -> Result<f64> {
    let pinv = pseudo_inverse(&stats.sigma_b, cutoff)?;
    // tr(A·B) = Σ_ij A_ij B_ji
    let d = stats.sigma_w.rows();
    let mut tr = 0.0;
    for i in 0..d {
        for j in 0..d {
            tr += stats.sigma_w.get(i, j) * pinv.get(j, i);
        }
    }
    Ok((tr / stats.k as f64).max(0.0))
}

/// Normalized distance of the class-mean Gram `H̄ᵀH̄` to the simplex ETF Gram.
pub fn nc2(class_means: &Matrix) -> Result<f64> {
    if class_means.frobenius_norm() == 0.0 {
        return Err(Error::ZeroNorm("class means"));
    }
    gram_distance_to_etf(&class_means.t_matmul(class_means), class_means.cols())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Nc3Norm {
    #[default]
    Frobenius,
    Spectral,
}

/// `‖W/‖W‖_F − H̄ᵀ/‖H̄‖_F‖` (Frobenius outer norm).
pub fn nc3(w: &Matrix, class_means: &Matrix) -> Result<f64> {
    nc3_with_norm(w, class_means, Nc3Norm::Frobenius)
}

pub fn nc3_with_norm(w: &Matrix, class_means: &Matrix, norm: Nc3Norm) -> Result<f64> {
    let means_t = class_means.transpose();
    if w.shape() != means_t.shape() {
        return Err(Error::shape(
            "nc3",
            format!("W of shape {}x{}", means_t.rows(), means_t.cols()),
            format!("{}x{}", w.rows(), w.cols()),
        ));
    }
    let nw = w.frobenius_norm();
    let nh = means_t.frobenius_norm();
    if nw == 0.0 {
        return Err(Error::ZeroNorm("classifier W"));
    }
    if nh == 0.0 {
        return Err(Error::ZeroNorm("class means"));
    }
    let diff = w.scale(1.0 / nw).sub(&means_t.scale(1.0 / nh));
    Ok(match norm {
        Nc3Norm::Frobenius => diff.frobenius_norm(),
        Nc3Norm::Spectral => svd(&diff)?.sigma_max(),
    })
}

/// Mean pairwise cosine among the classifier rows listed in `classes`:
/// 1 under full minority collapse, `−1/(K−1)` for an ETF.
pub fn minority_collapse_index(w: &Matrix, classes: &[usize]) -> Result<f64> {
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("minority collapse index needs at least two classes".into()));
    }
    if let Some(bad) = classes.iter().find(|&&c| c >= w.rows()) {
        return Err(Error::InvalidArgument(format!("class {bad} out of range")));
    }
    let norms: Vec<f64> = classes.iter().map(|&c| w.row_norm(c)).collect();
    let scale = (0..w.rows()).map(|r| w.row_norm(r)).fold(0.0, f64::max);
    if norms.iter().any(|&n| n <= 1e-12 * scale || n == 0.0) {
        return Err(Error::ZeroNorm("minority classifier row"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..classes.len() {
        for b in (a + 1)..classes.len() {
            total += dot(w.row(classes[a]), w.row(classes[b])) / (norms[a] * norms[b]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Cosine between each class mean and its classifier row.
pub fn class_alignment(w: &Matrix, class_means: &Matrix) -> Vec<f64> {
    (0..w.rows())
        .map(|k| {
            let m = class_means.column(k);
            let denom = w.row_norm(k) * dot(&m, &m).sqrt();
            if denom == 0.0 {
                0.0
            } else {
                dot(w.row(k), &m) / denom
            }
        })
        .collect()
}

/// Metrics for one training snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_weight_norm: Vec<f64>,
    /// See [`UNDEFINED_COSINE`].
    pub minority_mean_pairwise_cosine: f64,
}

/// Classes tracked by the minority cosine: those with the smallest sample
/// count, or every class when that leaves fewer than two.
pub fn default_minority_classes(class_counts: &[usize]) -> Vec<usize> {
    let min = class_counts.iter().copied().min().unwrap_or(0);
    let minority: Vec<usize> = (0..class_counts.len()).filter(|&k| class_counts[k] == min).collect();
    if minority.len() >= 2 && minority.len() < class_counts.len() {
        minority
    } else {
        (0..class_counts.len()).collect()
    }
}

pub struct ReportInputs<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
    pub k: usize,
    pub w: &'a Matrix,
    pub logits: &'a Matrix,
    pub loss: f64,
    pub cutoff: f64,
    pub minority: &'a [usize],
}

pub fn nc_report(inputs: &ReportInputs<'_>) -> Result<NcReport> {
    let stats = class_statistics(inputs.features, inputs.labels, inputs.k)?;
    let nc1 = nc1(&stats, inputs.cutoff)?;
    let nc2 = nc2(&stats.class_means)?;
    let nc3 = nc3(inputs.w, &stats.class_means)?;
    let (accuracy, per_class_accuracy) = crate::lpm::accuracy_by_class(inputs.logits, inputs.labels, inputs.k)?;
    let per_class_weight_norm = (0..inputs.w.rows()).map(|r| inputs.w.row_norm(r)).collect();
    let minority = match minority_collapse_index(inputs.w, inputs.minority) {
        Ok(v) => v,
        Err(Error::ZeroNorm(_)) => UNDEFINED_COSINE,
        Err(e) => return Err(e),
    };
    Ok(NcReport {
        nc1,
        nc2,
        nc3,
        loss: inputs.loss,
        accuracy,
        per_class_accuracy,
        per_class_weight_norm,
        minority_mean_pairwise_cosine: minority,
    })
}
