//! The layer-peeled program: objective, feasible set and projected gradient
//! descent over `(W, head, H⁰)` for the explicit and DEQ heads.

mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::deq::{DeqWeights, SolverPolicy};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub use loss::{accuracy, accuracy_by_class, cross_entropy};
pub use model::{
    feature_energy, forward, head_features, loss_and_gradients, project_feasible, DeqPath, Gradients,
};
pub use train::{train, Snapshot, SolverStats, TrainTrace};

/// Backbone features `H⁰` (D₀×N, one column per sample) with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub h0: Matrix,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    k: usize,
}

impl FeatureSet {
    /// Every class must have at least one sample.
    pub fn new(h0: Matrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.len() != h0.cols() {
            return Err(Error::shape("FeatureSet", format!("{} labels", h0.cols()), format!("{}", labels.len())));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {k}")));
        }
        let mut class_counts = vec![0; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::InvalidArgument(format!("label {l} out of range for {k} classes")));
            }
            class_counts[l] += 1;
        }
        if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass(empty));
        }
        if !h0.is_finite() {
            return Err(Error::NonFinite("features"));
        }
        Ok(Self { h0, labels, class_counts, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_total(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.h0.rows()
    }

    /// Same labels, new feature matrix.
    pub fn with_h0(&self, h0: Matrix) -> Result<Self> {
        if h0.shape() != self.h0.shape() {
            return Err(Error::shape(
                "FeatureSet::with_h0",
                format!("{}x{}", self.h0.rows(), self.h0.cols()),
                format!("{}x{}", h0.rows(), h0.cols()),
            ));
        }
        Ok(Self { h0, ..self.clone() })
    }
}

/// Classifier `W` (K×D) under the mean-square row budget
/// `(1/K)·Σ_k ‖w_k‖² ≤ e_w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub w: Matrix,
    pub e_w: f64,
}

impl ClassifierWeights {
    pub fn new(w: Matrix, e_w: f64) -> Result<Self> {
        if !(e_w > 0.0) {
            return Err(Error::InvalidArgument(format!("classifier budget must be positive, got {e_w}")));
        }
        Ok(Self { w, e_w })
    }

    pub fn mean_sq_norm(&self) -> f64 {
        self.w.frobenius_norm_sq() / self.w.rows() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Explicit,
    Deq,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Explicit => "explicit",
            HeadKind::Deq => "deq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadModel {
    /// `H = W_EX·H⁰` with `‖W_EX‖_F ≤ e_h`.
    Explicit { w_ex: Matrix, e_h: f64 },
    /// `H = (I − W_DEQ)⁻¹·H⁰`.
    Deq { weights: DeqWeights, policy: SolverPolicy },
}

impl HeadModel {
    pub fn explicit(w_ex: Matrix, e_h: f64) -> Result<Self> {
        if !(e_h > 0.0) {
            return Err(Error::InvalidArgument(format!("head budget must be positive, got {e_h}")));
        }
        Ok(HeadModel::Explicit { w_ex, e_h })
    }

    pub fn deq(w_deq: Matrix, e_h: f64, policy: SolverPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(HeadModel::Deq {
            weights: DeqWeights::new(w_deq, e_h)?,
            policy,
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            HeadModel::Explicit { .. } => HeadKind::Explicit,
            HeadModel::Deq { .. } => HeadKind::Deq,
        }
    }

    pub fn weight(&self) -> &Matrix {
        match self {
            HeadModel::Explicit { w_ex, .. } => w_ex,
            HeadModel::Deq { weights, .. } => &weights.w_deq,
        }
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Matrix {
        match self {
            HeadModel::Explicit { w_ex, .. } => w_ex,
            HeadModel::Deq { weights, .. } => &mut weights.w_deq,
        }
    }

    pub fn budget(&self) -> f64 {
        match self {
            HeadModel::Explicit { e_h, .. } => *e_h,
            HeadModel::Deq { weights, .. } => weights.e_h,
        }
    }

    /// Input dimension D₀.
    pub fn in_dim(&self) -> usize {
        self.weight().cols()
    }

    /// Output dimension D.
    pub fn out_dim(&self) -> usize {
        self.weight().rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Heavy-ball coefficient.
    pub momentum: f64,
    pub steps: usize,
    pub e_w: f64,
    pub e_h: f64,
    /// Bound on `(1/K)·Σ_k (1/n_k)·Σ_i ‖h_{k,i}‖²` for the post-head features.
    pub feature_budget: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Relative singular-value cutoff for the NC1 pseudo-inverse.
    pub metric_cutoff: f64,
    pub deq_path: DeqPath,
    /// Classes whose classifier rows enter the minority-collapse index;
    /// `None` picks the smallest classes.
    pub minority_classes: Option<Vec<usize>>,
}

impl TrainConfig {
    /// Desk-scale defaults: unit budgets, lr 0.05, momentum 0.9, 8000 steps.
    pub fn desk() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            steps: 8000,
            e_w: 1.0,
            e_h: 1.0,
            feature_budget: 1.0,
            seed: 0,
            log_every: 100,
            metric_cutoff: crate::numerics::DEFAULT_PINV_CUTOFF,
            deq_path: DeqPath::Auto,
            minority_classes: None,
        }
    }

    /// The published settings: budgets 0.01, lr 1e-4.
    pub fn paper() -> Self {
        Self {
            learning_rate: 1e-4,
            e_w: 0.01,
            e_h: 0.01,
            feature_budget: 0.01,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it turns a run into a pure evaluation
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0 and finite, got {}", self.learning_rate)));
        }
        let positive = [
            ("e_w", self.e_w),
            ("e_h", self.e_h),
            ("feature_budget", self.feature_budget),
            ("metric_cutoff", self.metric_cutoff),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        if self.metric_cutoff >= 1.0 {
            return Err(Error::Config(format!("metric_cutoff must be below 1, got {}", self.metric_cutoff)));
        }
        Ok(())
    }
}

/// Gaussian matrix rescaled to a given Frobenius norm.
pub(crate) fn gaussian_with_norm(rng: &mut Rng, rows: usize, cols: usize, norm: f64) -> Matrix {
    let g = rng.gaussian_matrix(rows, cols, 1.0);
    let n = g.frobenius_norm();
    g.scale(norm / n)
}

/// Initial head and classifier, each at half its budget.
///
/// The classifier starts at `(1/K)·Σ‖w_k‖² = e_w/2`, the head at
/// `‖·‖_F = e_h/2`. Draws come from `rng` in the order W, head.
pub fn init_parameters(
    kind: HeadKind,
    k: usize,
    d0: usize,
    d: usize,
    cfg: &TrainConfig,
    policy: SolverPolicy,
    rng: &mut Rng,
) -> Result<(HeadModel, ClassifierWeights)> {
    if kind == HeadKind::Deq && d0 != d {
        return Err(Error::shape("init_parameters", format!("d0 = d for a DEQ head, d = {d}"), format!("d0 = {d0}")));
    }
    let w = gaussian_with_norm(rng, k, d, (k as f64 * cfg.e_w / 2.0).sqrt());
    let head_w = gaussian_with_norm(rng, d, d0, cfg.e_h / 2.0);
    let head = match kind {
        HeadKind::Explicit => HeadModel::explicit(head_w, cfg.e_h)?,
        HeadKind::Deq => HeadModel::deq(head_w, cfg.e_h, policy)?,
    };
    Ok((head, ClassifierWeights::new(w, cfg.e_w)?))
}

/// Backbone features with balanced-by-design energy: Gaussian `H⁰` scaled so
/// `(1/K)·Σ_k (1/n_k)·Σ_i ‖h⁰_{k,i}‖² = energy`.
pub fn init_features(labels: Vec<usize>, k: usize, d0: usize, energy: f64, rng: &mut Rng) -> Result<FeatureSet> {
    let g = rng.gaussian_matrix(d0, labels.len(), 1.0);
    let fs = FeatureSet::new(g, labels, k)?;
    let current = feature_energy(&fs.h0, fs.labels(), fs.class_counts());
    let h0 = fs.h0.scale((energy / current).sqrt());
    fs.with_h0(h0)
}
