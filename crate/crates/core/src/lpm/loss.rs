use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn check_labels(op: &'static str, logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.cols() {
        return Err(Error::shape(op, format!("{} labels", logits.cols()), format!("{}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= logits.rows()) {
        return Err(Error::InvalidArgument(format!("{op}: label {bad} out of range for {} classes", logits.rows())));
    }
    Ok(())
}

/// Mean negative log-softmax of the true-class logit (K×N logits, one column
/// per sample), max-shifted for stability.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels("cross_entropy", logits, labels)?;
    let n = logits.cols();
    let total: f64 = (0..n).map(|j| column_nll(logits, j, labels[j])).sum();
    Ok(total / n as f64)
}

fn column_nll(logits: &Matrix, j: usize, label: usize) -> f64 {
    let k = logits.rows();
    let max = (0..k).map(|c| logits.get(c, j)).fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = (0..k).map(|c| (logits.get(c, j) - max).exp()).sum::<f64>().ln() + max;
    lse - logits.get(label, j)
}

/// `∂CE/∂logits = (softmax − onehot)/N`.
pub(crate) fn cross_entropy_grad(logits: &Matrix, labels: &[usize]) -> Matrix {
    let (k, n) = logits.shape();
    let mut g = Matrix::zeros(k, n);
    let inv_n = 1.0 / n as f64;
    for j in 0..n {
        let max = (0..k).map(|c| logits.get(c, j)).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = (0..k).map(|c| (logits.get(c, j) - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..k {
            let onehot = if c == labels[j] { 1.0 } else { 0.0 };
            g.set(c, j, (exps[c] / z - onehot) * inv_n);
        }
    }
    g
}

fn argmax_column(logits: &Matrix, j: usize) -> usize {
    let mut best = 0;
    for c in 1..logits.rows() {
        // strict comparison keeps the lowest index on ties
        if logits.get(c, j) > logits.get(best, j) {
            best = c;
        }
    }
    best
}

/// Fraction of columns whose argmax equals the label; ties go to the lowest
/// class index.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels("accuracy", logits, labels)?;
    let hits = (0..logits.cols()).filter(|&j| argmax_column(logits, j) == labels[j]).count();
    Ok(hits as f64 / logits.cols() as f64)
}

/// Overall accuracy and per-class accuracy (0 for classes without samples).
pub fn accuracy_by_class(logits: &Matrix, labels: &[usize], k: usize) -> Result<(f64, Vec<f64>)> {
    check_labels("accuracy_by_class", logits, labels)?;
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (j, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        if argmax_column(logits, j) == l {
            hits[l] += 1;
        }
    }
    let total: usize = hits.iter().sum();
    let per_class = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect();
    Ok((total as f64 / labels.len() as f64, per_class))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let l = Matrix::zeros(2, 5);
        let ce = cross_entropy(&l, &[0, 1, 1, 0, 1]).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_samples() {
        let right = Matrix::column_vector(&[10.0, 0.0]);
        let oracle = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((cross_entropy(&right, &[0]).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 4.54e-5).abs() < 1e-7);

        let wrong = Matrix::column_vector(&[0.0, 10.0]);
        assert!((cross_entropy(&wrong, &[0]).unwrap() - 10.0000454).abs() < 1e-7);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let l = Matrix::column_vector(&[1e300, -1e300]);
        assert_eq!(cross_entropy(&l, &[0]).unwrap(), 0.0);
        assert!(cross_entropy(&l, &[1]).unwrap().is_finite());
    }

    #[test]
    fn accuracy_examples() {
        let onehot = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(accuracy(&onehot, &[0, 1, 1]).unwrap(), 1.0);
        let flat = Matrix::from_fn(3, 4, |_, _| 0.7);
        assert_eq!(accuracy(&flat, &[0, 1, 0, 2]).unwrap(), 0.5);
        let (acc, per) = accuracy_by_class(&flat, &[0, 1, 0, 2], 4).unwrap();
        assert_eq!(acc, 0.5);
        assert_eq!(per, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn label_errors() {
        let l = Matrix::zeros(2, 2);
        assert!(cross_entropy(&l, &[0]).is_err());
        assert!(accuracy(&l, &[0, 2]).is_err());
    }
}
