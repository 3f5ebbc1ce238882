//! Numerical checks of the analytic results: the Jensen-type log bound and
//! its optimal constant ratio, the balanced loss lower bounds for the two
//! heads, the imbalanced-regime comparison conditions and the
//! extreme-imbalance limit.
//!
//! Naming: `c1`, `c2` are the free positive weights of the log bound. With
//! `gap = log δ_k − mean_{k'≠k} log δ_{k'}` the bound reads
//!
//! ```text
//! log(δ_k / Σ δ) ≤ M1·gap + M2
//! M1 = c2/(c1+c2),  c3 = c2/((K−1)(c1+c2))
//! M2 = M1·log c3 − (c1/(c1+c2))·log((c1+c2)/c1)
//! ```
//!
//! It follows from Jensen's inequality for `log` on `Σδ` written as a convex
//! combination: weight `c1/(c1+c2)` on `δ_k·(c1+c2)/c1` and weight `c3` on
//! each `δ_{k'}/c3`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etf::gram_distance_to_etf;
use crate::lpm::{head_features, TrainTrace};
use crate::metrics::class_statistics;
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub m1: f64,
    pub m2: f64,
    pub k: usize,
}

impl BoundConstants {
    pub fn new(c1: f64, c2: f64, k: usize) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) || !c1.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidArgument(format!("bound constants must be positive, got {c1}, {c2}")));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need k >= 2, got {k}")));
        }
        let sum = c1 + c2;
        let c3 = c2 / ((k as f64 - 1.0) * sum);
        let m1 = c2 / sum;
        let m2 = m1 * c3.ln() - (c1 / sum) * (sum / c1).ln();
        Ok(Self { c1, c2, c3, m1, m2, k })
    }
}

fn check_deltas(deltas: &[f64], k: usize) -> Result<()> {
    if deltas.len() < 2 {
        return Err(Error::InvalidArgument("need at least two deltas".into()));
    }
    if k >= deltas.len() {
        return Err(Error::InvalidArgument(format!("class index {k} out of range")));
    }
    if let Some(bad) = deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidArgument(format!("deltas must be positive and finite, got {bad}")));
    }
    Ok(())
}

/// `log δ_k − (1/(K−1))·Σ_{k'≠k} log δ_{k'}`.
pub fn log_gap(deltas: &[f64], k: usize) -> Result<f64> {
    check_deltas(deltas, k)?;
    let others: f64 = deltas.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, d)| d.ln()).sum();
    Ok(deltas[k].ln() - others / (deltas.len() as f64 - 1.0))
}

/// `(lhs, rhs)` of the log bound for class `k`; `lhs ≤ rhs` for every
/// positive choice of constants.
pub fn lemma1_bound(deltas: &[f64], k: usize, consts: &BoundConstants) -> Result<(f64, f64)> {
    let gap = log_gap(deltas, k)?;
    if consts.k != deltas.len() {
        return Err(Error::shape("lemma1_bound", format!("{} deltas", consts.k), format!("{}", deltas.len())));
    }
    let total: f64 = deltas.iter().sum();
    let lhs = (deltas[k] / total).ln();
    Ok((lhs, consts.m1 * gap + consts.m2))
}

/// The ratio `c1/c2 = e^{gap}/(K−1)` at which the bound is tightest.
///
/// Minimizing `M1·gap + M2` over `c2/c1` gives `c2/c1 = (K−1)·e^{−gap}`; the
/// value returned is its reciprocal. At all-equal deltas the bound then holds
/// with equality. Equivalently this ratio maximizes the loss lower bound
/// `−rhs`.
pub fn remark1_optimal_ratio(deltas: &[f64], k: usize) -> Result<f64> {
    let gap = log_gap(deltas, k)?;
    Ok(ratio_from_gap(gap, deltas.len()))
}

/// [`remark1_optimal_ratio`] from a precomputed log gap.
pub fn ratio_from_gap(gap: f64, k: usize) -> f64 {
    gap.exp() / (k as f64 - 1.0)
}

/// Constants with `c1/c2 = ratio`, normalized to `c2 = 1`.
pub fn constants_from_ratio(ratio: f64, k: usize) -> Result<BoundConstants> {
    BoundConstants::new(ratio, 1.0, k)
}

/// Mean over samples of the true-class logit minus the mean of the other
/// logits (the log gap with `δ = exp(logit)`).
pub fn mean_logit_gap(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    let (k, n) = logits.shape();
    if labels.len() != n || n == 0 {
        return Err(Error::shape("mean_logit_gap", format!("{n} labels"), format!("{}", labels.len())));
    }
    if k < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        let col_sum: f64 = (0..k).map(|c| logits.get(c, j)).sum();
        let own = logits.get(y, j);
        total += own - (col_sum - own) / (k as f64 - 1.0);
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancedBounds {
    pub deq_bound: f64,
    pub explicit_bound: f64,
}

/// Lower bounds on the balanced mean cross-entropy.
///
/// Summing the log bound over samples and applying Cauchy–Schwarz to
/// `(1/K)·Σ_k (w_k − w̄)ᵀ·h̄_k` under the classifier budget `e_w` and the
/// feature budget `e_h` gives
///
/// ```text
/// explicit_bound = −M1·K/(K−1)·√(e_w·e_h) − M2
/// deq_bound      = −2·M1·K/(K−1)·√(e_w·e_h) − M2
/// ```
///
/// so the theorem-level constants are `M1` (slope) and `−M2` (shared
/// offset), not the lemma's `c1`, `c2`.
pub fn balanced_lower_bounds(e_w: f64, e_h: f64, k: usize, consts: &BoundConstants) -> Result<BalancedBounds> {
    if !(e_w > 0.0 && e_h > 0.0) {
        return Err(Error::InvalidArgument(format!("budgets must be positive, got {e_w}, {e_h}")));
    }
    if k < 2 || consts.k != k {
        return Err(Error::InvalidArgument(format!("constants built for k = {}, asked for k = {k}", consts.k)));
    }
    let slope = consts.m1 * k as f64 / (k as f64 - 1.0) * (e_w * e_h).sqrt();
    Ok(BalancedBounds {
        deq_bound: -2.0 * slope - consts.m2,
        explicit_bound: -slope - consts.m2,
    })
}

/// `−c1·log c1 − (K_A−1)·c2·log c2 − K_B·c3·log c3`, the constant of the
/// imbalanced bound, for caller-chosen constants.
pub fn imbalanced_constant(c1: f64, c2: f64, c3: f64, k_a: usize, k_b: usize) -> f64 {
    -c1 * c1.ln() - (k_a as f64 - 1.0) * c2 * c2.ln() - k_b as f64 * c3 * c3.ln()
}

/// `K_A` majority classes with `n_a` samples each and `K_B` minority classes
/// with `n_b` each. Majority classes come first in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub k_a: usize,
    pub k_b: usize,
    pub n_a: usize,
    pub n_b: usize,
}

impl ImbalanceSpec {
    pub fn new(k_a: usize, k_b: usize, n_a: usize, n_b: usize) -> Result<Self> {
        if k_a == 0 || k_b == 0 {
            return Err(Error::InvalidArgument("need at least one majority and one minority class".into()));
        }
        if !(n_a > n_b && n_b >= 1) {
            return Err(Error::InvalidArgument(format!("need n_a > n_b >= 1, got {n_a}, {n_b}")));
        }
        Ok(Self { k_a, k_b, n_a, n_b })
    }

    /// `n_b = n_a / r`, which must come out a whole number.
    pub fn from_ratio(k_a: usize, k_b: usize, n_a: usize, r: f64) -> Result<Self> {
        let n_b = n_a as f64 / r;
        if !(r > 1.0) || (n_b - n_b.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("n_a / r must be a whole number below n_a, got {n_a} / {r}")));
        }
        Self::new(k_a, k_b, n_a, n_b.round() as usize)
    }

    /// Sample ratio `n_a / n_b`.
    pub fn r(&self) -> f64 {
        self.n_a as f64 / self.n_b as f64
    }

    pub fn k_r(&self) -> f64 {
        self.k_a as f64 / self.k_b as f64
    }

    pub fn k(&self) -> usize {
        self.k_a + self.k_b
    }

    pub fn n_total(&self) -> usize {
        self.k_a * self.n_a + self.k_b * self.n_b
    }

    /// `K_A·n_A / N`.
    pub fn majority_fraction(&self) -> f64 {
        (self.k_a * self.n_a) as f64 / self.n_total() as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        (0..self.k()).map(|c| if c < self.k_a { self.n_a } else { self.n_b }).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    pub fn minority_classes(&self) -> Vec<usize> {
        (self.k_a..self.k()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub nc2_condition_holds: bool,
    /// Worst case over off-diagonal entries of `min(v − e_h, 1/(1−e_h) − v)`
    /// with `v = 2·S_ij − m_ij`; positive iff the condition holds.
    pub nc2_margin: f64,
    /// Same, with the tighter lower limit `e_h/2 + 1/(2(1−e_h))`.
    pub nc2_appendix_margin: f64,
    pub nc3_condition_holds: bool,
    /// `2 − (e_h/(e_w+e_h) + e_h·(1−e_h))`.
    pub nc3_margin: f64,
    /// Measured quantities, filled in by the harness after both heads train.
    pub nc2_distance_explicit: Option<f64>,
    pub nc2_distance_deq: Option<f64>,
    pub nc3_cosine_ratio: Option<f64>,
}

/// Evaluates the two sufficient conditions of the imbalanced comparison.
/// `gram_h0` supplies `m_ij`, `etf_gram` supplies `S_ij`.
pub fn theorem2_conditions(e_w: f64, e_h: f64, gram_h0: &Matrix, etf_gram: &Matrix) -> Result<ConditionReport> {
    if !(e_h > 0.0 && e_h < 1.0) {
        return Err(Error::InvalidArgument(format!("e_h must lie in (0, 1), got {e_h}")));
    }
    if !(e_w > 0.0) {
        return Err(Error::InvalidArgument(format!("e_w must be positive, got {e_w}")));
    }
    let k = etf_gram.rows();
    for (name, m) in [("gram_h0", gram_h0), ("etf_gram", etf_gram)] {
        if m.shape() != (k, k) || k < 2 {
            return Err(Error::shape("theorem2_conditions", format!("{name} {k}x{k}"), format!("{}x{}", m.rows(), m.cols())));
        }
    }
    let upper = 1.0 / (1.0 - e_h);
    let appendix_lower = e_h / 2.0 + upper / 2.0;
    let mut margin = f64::INFINITY;
    let mut appendix = f64::INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let v = 2.0 * etf_gram.get(i, j) - gram_h0.get(i, j);
            margin = margin.min((v - e_h).min(upper - v));
            appendix = appendix.min((v - appendix_lower).min(upper - v));
        }
    }
    let nc3_margin = 2.0 - (e_h / (e_w + e_h) + e_h * (1.0 - e_h));
    if !margin.is_finite() || !appendix.is_finite() || !nc3_margin.is_finite() {
        return Err(Error::NonFinite("theorem2_conditions"));
    }
    Ok(ConditionReport {
        nc2_condition_holds: margin > 0.0,
        nc2_margin: margin,
        nc2_appendix_margin: appendix,
        nc3_condition_holds: nc3_margin > 0.0,
        nc3_margin,
        nc2_distance_explicit: None,
        nc2_distance_deq: None,
        nc3_cosine_ratio: None,
    })
}

/// Scale-free distance of the first `majority_count` class-mean Gram to the
/// `majority_count`-simplex ETF Gram.
pub fn majority_etf_distance(h: &Matrix, labels: &[usize], k: usize, majority_count: usize) -> Result<f64> {
    if majority_count < 2 || majority_count > k {
        return Err(Error::InvalidArgument(format!("majority count must be in [2, {k}], got {majority_count}")));
    }
    let stats = class_statistics(h, labels, k)?;
    let idx: Vec<usize> = (0..majority_count).collect();
    let means = stats.class_means.select_columns(&idx);
    gram_distance_to_etf(&means.t_matmul(&means), majority_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition1Report {
    pub max_minority_weight_norm: f64,
    pub mean_majority_weight_norm: f64,
    /// `max_minority_weight_norm / mean_majority_weight_norm`.
    pub weight_ratio: f64,
    pub max_minority_feature_norm: f64,
    pub mean_majority_feature_norm: f64,
    pub feature_ratio: f64,
    /// `None` when there is a single majority class.
    pub majority_etf_distance: Option<f64>,
    pub tol: f64,
    pub weights_vanish: bool,
    pub features_vanish: bool,
    pub majority_is_etf: bool,
}

/// Extreme-imbalance diagnostics on a trained run: minority classifier rows
/// and minority features should vanish relative to the majority, and the
/// majority class means should form a `K_A`-simplex ETF.
pub fn proposition1_check(trace: &TrainTrace, spec: &ImbalanceSpec, tol: f64) -> Result<Proposition1Report> {
    let h = head_features(&trace.head, &trace.features.h0)?;
    proposition1_from_parts(&h, trace.features.labels(), &trace.cls.w, spec, tol)
}

/// [`proposition1_check`] on explicit features `H` and classifier `W`.
pub fn proposition1_from_parts(h: &Matrix, labels: &[usize], w: &Matrix, spec: &ImbalanceSpec, tol: f64) -> Result<Proposition1Report> {
    let k = spec.k();
    if w.rows() != k || labels.len() != h.cols() {
        return Err(Error::shape("proposition1_check", format!("{k} classifier rows"), format!("{}", w.rows())));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);

    let maj_w: Vec<f64> = (0..spec.k_a).map(|c| w.row_norm(c)).collect();
    let min_w: Vec<f64> = (spec.k_a..k).map(|c| w.row_norm(c)).collect();
    let mut maj_h = Vec::new();
    let mut min_h = Vec::new();
    for (j, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
        if l < spec.k_a { &mut maj_h } else { &mut min_h }.push(h.column_norm(j));
    }
    if maj_h.is_empty() || min_h.is_empty() {
        return Err(Error::InvalidArgument("labels must cover majority and minority classes".into()));
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { f64::INFINITY } else { num / den };
    let weight_ratio = ratio(max(&min_w), mean(&maj_w));
    let feature_ratio = ratio(max(&min_h), mean(&maj_h));
    let majority_etf_distance = if spec.k_a >= 2 {
        Some(majority_etf_distance(h, labels, k, spec.k_a)?)
    } else {
        None
    };
    Ok(Proposition1Report {
        max_minority_weight_norm: max(&min_w),
        mean_majority_weight_norm: mean(&maj_w),
        weight_ratio,
        max_minority_feature_norm: max(&min_h),
        mean_majority_feature_norm: mean(&maj_h),
        feature_ratio,
        majority_etf_distance,
        tol,
        weights_vanish: weight_ratio <= tol,
        features_vanish: feature_ratio <= tol,
        majority_is_etf: majority_etf_distance.is_none_or(|d| d <= tol),
    })
}

/// Slack allowed on `lhs ≤ rhs` in [`lemma1_fuzz`].
pub const LEMMA1_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub draws: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen; negative when every draw had room to spare.
    pub worst_excess: f64,
    /// Largest `|lhs − rhs|` at all-equal deltas with the optimal ratio.
    pub symmetric_gap: f64,
}

/// Random instances of the log bound: `K ∈ [2, 10]`, deltas log-uniform over
/// `[e^{−5}, e^{5}]`, `c1` and `c2` log-uniform over `[0.01, 100]`. Each draw
/// is also repeated at all-equal deltas with the optimal ratio, where the
/// bound is an equality.
pub fn lemma1_fuzz(draws: usize, seed: u64) -> Result<FuzzReport> {
    let mut rng = Rng::new(seed);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut symmetric_gap: f64 = 0.0;
    for _ in 0..draws {
        let k = 2 + rng.below(9);
        let deltas: Vec<f64> = (0..k).map(|_| rng.uniform_in(-5.0, 5.0).exp()).collect();
        let class = rng.below(k);
        let span = 100f64.ln();
        let c1 = rng.uniform_in(-span, span).exp();
        let c2 = rng.uniform_in(-span, span).exp();
        let (lhs, rhs) = lemma1_bound(&deltas, class, &BoundConstants::new(c1, c2, k)?)?;
        worst_excess = worst_excess.max(lhs - rhs);
        if lhs > rhs + LEMMA1_SLACK {
            violations += 1;
        }

        let equal = vec![deltas[0]; k];
        let ratio = remark1_optimal_ratio(&equal, class)?;
        let (lhs, rhs) = lemma1_bound(&equal, class, &constants_from_ratio(ratio, k)?)?;
        symmetric_gap = symmetric_gap.max((lhs - rhs).abs());
    }
    Ok(FuzzReport {
        draws,
        violations,
        worst_excess,
        symmetric_gap,
    })
}
