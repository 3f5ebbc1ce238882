use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, cross_entropy_grad};
use super::{ClassifierWeights, FeatureSet, HeadModel, TrainConfig};
use crate::deq::{iterate_columns, ColumnSolve, OnFailure, SolverPolicy, CLOSED_FORM_MAX_DIM};
use crate::error::{Error, Result};
use crate::numerics::{svd, Lu, Matrix};

/// Blocks are only rescaled when they exceed their budget by more than this
/// relative amount, which makes a second projection a no-op.
const PROJECTION_SLACK: f64 = 1e-13;

/// How the DEQ equilibrium is computed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeqPath {
    /// Closed form up to [`CLOSED_FORM_MAX_DIM`], Picard iteration above.
    #[default]
    Auto,
    ClosedForm,
    Iterative,
}

impl DeqPath {
    fn closed_form(self, dim: usize) -> bool {
        match self {
            DeqPath::Auto => dim <= CLOSED_FORM_MAX_DIM,
            DeqPath::ClosedForm => true,
            DeqPath::Iterative => false,
        }
    }
}

/// Gradients of the mean cross-entropy with respect to every block.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Matrix,
    pub head: Matrix,
    pub h0: Matrix,
}

pub(crate) enum HeadState {
    Explicit,
    Closed(Lu),
    Iterated(ColumnSolve),
}

pub(crate) struct Evaluation {
    pub features: Matrix,
    pub logits: Matrix,
    pub loss: f64,
    pub state: HeadState,
}

fn check_shapes(fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights) -> Result<()> {
    if head.in_dim() != fs.dim() {
        return Err(Error::shape("forward", format!("head input dim {}", head.in_dim()), format!("features with {} rows", fs.dim())));
    }
    if cls.w.cols() != head.out_dim() {
        return Err(Error::shape("forward", format!("classifier with {} columns", head.out_dim()), format!("{}", cls.w.cols())));
    }
    if cls.w.rows() != fs.k() {
        return Err(Error::shape("forward", format!("classifier with {} rows", fs.k()), format!("{}", cls.w.rows())));
    }
    Ok(())
}

fn head_pass(head: &HeadModel, h0: &Matrix, path: DeqPath) -> Result<(Matrix, HeadState)> {
    match head {
        HeadModel::Explicit { w_ex, .. } => Ok((w_ex.matmul(h0), HeadState::Explicit)),
        HeadModel::Deq { weights, policy } => {
            if weights.dim() != h0.rows() {
                return Err(Error::shape("deq head", format!("{} rows", weights.dim()), format!("{}", h0.rows())));
            }
            if path.closed_form(weights.dim()) {
                let lu = weights.factor()?;
                Ok((lu.solve(h0), HeadState::Closed(lu)))
            } else {
                // σ_max < 1 is still required for the iteration to mean anything
                weights.factor()?;
                let solve = iterate_columns(&weights.w_deq, h0, policy)?;
                Ok((solve.z_star.clone(), HeadState::Iterated(solve)))
            }
        }
    }
}

/// Post-head features `H` (`W_EX·H⁰` or the equilibrium `z★`).
pub fn head_features(head: &HeadModel, h0: &Matrix) -> Result<Matrix> {
    if head.in_dim() != h0.rows() {
        return Err(Error::shape("head_features", format!("{} rows", head.in_dim()), format!("{}", h0.rows())));
    }
    Ok(head_pass(head, h0, DeqPath::Auto)?.0)
}

/// Logits `W·H` (K×N).
pub fn forward(fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights) -> Result<Matrix> {
    check_shapes(fs, head, cls)?;
    let (h, _) = head_pass(head, &fs.h0, DeqPath::Auto)?;
    Ok(cls.w.matmul(&h))
}

pub(crate) fn evaluate(fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights, path: DeqPath) -> Result<Evaluation> {
    check_shapes(fs, head, cls)?;
    let (features, state) = head_pass(head, &fs.h0, path)?;
    let logits = cls.w.matmul(&features);
    let loss = cross_entropy(&logits, fs.labels())?;
    Ok(Evaluation { features, logits, loss, state })
}

pub(crate) fn gradients(fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights, eval: &Evaluation) -> Result<Gradients> {
    let mut g = cross_entropy_grad(&eval.logits, fs.labels());
    if let (HeadState::Iterated(solve), HeadModel::Deq { policy, .. }) = (&eval.state, head) {
        if policy.on_failure == OnFailure::Skip {
            for (j, ok) in solve.converged.iter().enumerate() {
                if !ok {
                    g.set_column(j, &vec![0.0; g.rows()]);
                }
            }
        }
    }
    let grad_w = g.matmul_t(&eval.features);
    let upstream = cls.w.t_matmul(&g);
    let (grad_head, grad_h0) = match (&eval.state, head) {
        (HeadState::Explicit, HeadModel::Explicit { w_ex, .. }) => (upstream.matmul_t(&fs.h0), w_ex.t_matmul(&upstream)),
        (HeadState::Closed(lu), HeadModel::Deq { .. }) => {
            let adjoint = lu.solve_transpose(&upstream);
            (adjoint.matmul_t(&eval.features), adjoint)
        }
        (HeadState::Iterated(_), HeadModel::Deq { weights, policy }) => {
            let adjoint = adjoint_iterate(&weights.w_deq, &upstream, policy)?;
            (adjoint.matmul_t(&eval.features), adjoint)
        }
        _ => unreachable!("head state always matches the head variant"),
    };
    Ok(Gradients {
        w: grad_w,
        head: grad_head,
        h0: grad_h0,
    })
}

// Solves (I − Wᵀ)·a = upstream by Picard iteration. The gradient is tiny in
// absolute terms, so the tolerance is applied to the rescaled system.
fn adjoint_iterate(w: &Matrix, upstream: &Matrix, policy: &SolverPolicy) -> Result<Matrix> {
    let scale = (0..upstream.cols()).map(|j| upstream.column_norm(j)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(upstream.clone());
    }
    let adjoint_policy = SolverPolicy {
        on_failure: OnFailure::AcceptLast,
        ..*policy
    };
    let solve = iterate_columns(&w.transpose(), &upstream.scale(1.0 / scale), &adjoint_policy)?;
    Ok(solve.z_star.scale(scale))
}

/// Mean cross-entropy and its gradient with respect to `W`, the head weight
/// and `H⁰`.
pub fn loss_and_gradients(fs: &FeatureSet, head: &HeadModel, cls: &ClassifierWeights) -> Result<(f64, Gradients)> {
    let eval = evaluate(fs, head, cls, DeqPath::Auto)?;
    let grads = gradients(fs, head, cls, &eval)?;
    Ok((eval.loss, grads))
}

/// `(1/K)·Σ_k (1/n_k)·Σ_{i ∈ k} ‖h_i‖²`.
pub fn feature_energy(h: &Matrix, labels: &[usize], class_counts: &[usize]) -> f64 {
    let k = class_counts.len() as f64;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(j, &l)| h.column_norm(j).powi(2) / class_counts[l] as f64)
        .sum();
    total / k
}

fn needs_shrink(value: f64, budget: f64) -> bool {
    value > budget * (1.0 + PROJECTION_SLACK)
}

/// Linear map `H⁰ ↦ H` of the head as an explicit matrix.
fn head_operator(head: &HeadModel) -> Result<Matrix> {
    match head {
        HeadModel::Explicit { w_ex, .. } => Ok(w_ex.clone()),
        HeadModel::Deq { weights, .. } => Ok(weights.factor()?.solve(&Matrix::identity(weights.dim()))),
    }
}

/// Frobenius-nearest `X` to `Y` with `Σ_j c_j·‖A·x_j‖² ≤ budget`, assuming
/// `Y` violates it.
///
/// The minimizer is `x_j = (I + λ·c_j·AᵀA)⁻¹·y_j` for the multiplier `λ > 0`
/// that puts the constraint on its boundary. In the right singular basis of
/// `A` the constraint value is a decreasing scalar function of `λ`, found by
/// bisection.
fn project_onto_ellipsoid(y: &Matrix, a: &Matrix, weights: &[f64], budget: f64) -> Result<Matrix> {
    let s = svd(a)?;
    let s2: Vec<f64> = s.singular_values.iter().map(|v| v * v).collect();
    let coords = s.vt.matmul(y);
    let (r, n) = coords.shape();
    let energy = |lambda: f64| -> f64 {
        let mut total = 0.0;
        for j in 0..n {
            let mut col = 0.0;
            for i in 0..r {
                let d = 1.0 + lambda * weights[j] * s2[i];
                col += s2[i] * (coords.get(i, j) / d).powi(2);
            }
            total += weights[j] * col;
        }
        total
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while energy(hi) > budget {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NonFinite("feature projection multiplier"));
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if energy(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // hi is the feasible end of the bracket
    let delta = Matrix::from_fn(r, n, |i, j| {
        let t = hi * weights[j] * s2[i];
        -coords.get(i, j) * t / (1.0 + t)
    });
    let mut x = y.clone();
    x.add_scaled(1.0, &s.vt.t_matmul(&delta));
    Ok(x)
}

/// Euclidean projection of every block onto its constraint set.
///
/// The classifier and head are rescaled radially onto their balls, using the
/// budgets they carry. The feature budget `cfg.feature_budget` constrains
/// the post-head features `H = A·H⁰`; for the (projected) head this is an
/// ellipsoid in `H⁰`, and `H⁰` is moved to its nearest point.
pub fn project_feasible(
    fs: &FeatureSet,
    head: &HeadModel,
    cls: &ClassifierWeights,
    cfg: &TrainConfig,
) -> Result<(FeatureSet, HeadModel, ClassifierWeights)> {
    let mut cls = cls.clone();
    let mean_sq = cls.mean_sq_norm();
    if needs_shrink(mean_sq, cls.e_w) {
        cls.w.scale_in_place((cls.e_w / mean_sq).sqrt());
    }

    let mut head = head.clone();
    let budget = head.budget();
    let norm = head.weight().frobenius_norm();
    if needs_shrink(norm, budget) {
        head.weight_mut().scale_in_place(budget / norm);
    }
    if let HeadModel::Deq { weights, .. } = &head {
        if weights.e_h >= 1.0 {
            let sigma_max = weights.contraction_bound()?;
            if sigma_max >= 1.0 {
                return Err(Error::Divergence { sigma_max });
            }
        }
    }

    let h = head_features(&head, &fs.h0)?;
    let energy = feature_energy(&h, fs.labels(), fs.class_counts());
    if !needs_shrink(energy, cfg.feature_budget) {
        return Ok((fs.clone(), head, cls));
    }
    let k = fs.k() as f64;
    let weights: Vec<f64> = fs.labels().iter().map(|&l| 1.0 / (k * fs.class_counts()[l] as f64)).collect();
    let mut h0 = project_onto_ellipsoid(&fs.h0, &head_operator(&head)?, &weights, cfg.feature_budget)?;
    // absorb rounding from the change of basis so a second pass is a no-op
    let after = feature_energy(&head_features(&head, &h0)?, fs.labels(), fs.class_counts());
    if after > cfg.feature_budget {
        h0.scale_in_place((cfg.feature_budget / after).sqrt());
    }
    Ok((fs.with_h0(h0)?, head, cls))
}
