//! Linear deep-equilibrium head.
//!
//! The equilibrium of `z = W·z + h⁰` is `z★ = (I − W)⁻¹·h⁰ = Σ_{i≥0} Wⁱ·h⁰`,
//! which exists whenever `σ_max(W) < 1`. Two routes are provided: the closed
//! form (one LU solve) and Picard iteration with an ε / `t_max` early stop.
//! Training uses the closed form up to [`CLOSED_FORM_MAX_DIM`] and iteration
//! above it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_radius_bound, Lu, Matrix};

pub const CLOSED_FORM_MAX_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeqWeights {
    pub w_deq: Matrix,
    /// Frobenius budget: `‖w_deq‖_F ≤ e_h`.
    pub e_h: f64,
}

impl DeqWeights {
    pub fn new(w_deq: Matrix, e_h: f64) -> Result<Self> {
        if !w_deq.is_square() {
            return Err(Error::NonSquare {
                rows: w_deq.rows(),
                cols: w_deq.cols(),
            });
        }
        if !(e_h > 0.0) {
            return Err(Error::InvalidArgument(format!("DEQ budget must be positive, got {e_h}")));
        }
        let norm = w_deq.frobenius_norm();
        if norm > e_h * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "‖W_DEQ‖_F = {norm} exceeds budget {e_h}"
            )));
        }
        Ok(Self { w_deq, e_h })
    }

    pub fn dim(&self) -> usize {
        self.w_deq.rows()
    }

    /// `σ_max(W)`.
    pub fn contraction_bound(&self) -> Result<f64> {
        spectral_radius_bound(&self.w_deq)
    }

    // σ_max ≤ ‖·‖_F, so the SVD is only needed when the Frobenius norm is ≥ 1.
    fn ensure_contraction(&self) -> Result<()> {
        if self.w_deq.frobenius_norm() < 1.0 {
            return Ok(());
        }
        let sigma_max = spectral_radius_bound(&self.w_deq)?;
        if sigma_max >= 1.0 {
            return Err(Error::Divergence { sigma_max });
        }
        Ok(())
    }

    /// LU factors of `I − W`, checked for contraction first.
    pub fn factor(&self) -> Result<Lu> {
        self.ensure_contraction()?;
        let n = self.dim();
        Lu::factor(&Matrix::identity(n).sub(&self.w_deq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OnFailure {
    /// Report `converged = false`; the caller drops the affected samples.
    #[default]
    Skip,
    Error,
    AcceptLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverPolicy {
    pub epsilon: f64,
    pub t_max: usize,
    pub on_failure: OnFailure,
}

impl Default for SolverPolicy {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            t_max: 20,
            on_failure: OnFailure::Skip,
        }
    }
}

impl SolverPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.t_max == 0 {
            return Err(Error::InvalidArgument(format!(
                "solver policy needs epsilon > 0 and t_max >= 1, got {} / {}",
                self.epsilon, self.t_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub z_star: Matrix,
    pub iterations: usize,
    /// Final `‖z_{t+1} − z_t‖_F`.
    pub residual: f64,
    pub converged: bool,
    /// Residual after each iteration.
    pub history: Vec<f64>,
}

fn check_input(w: &DeqWeights, h0: &Matrix) -> Result<()> {
    if h0.rows() != w.dim() {
        return Err(Error::shape(
            "deq head",
            format!("input with {} rows", w.dim()),
            format!("{} rows", h0.rows()),
        ));
    }
    Ok(())
}

/// `(I − W)⁻¹·h0`.
pub fn fixed_point_closed_form(w: &DeqWeights, h0: &Matrix) -> Result<Matrix> {
    check_input(w, h0)?;
    let lu = w.factor()?;
    let a = Matrix::identity(w.dim()).sub(&w.w_deq);
    Ok(lu.refined_solve(&a, h0))
}

/// Picard iteration `z_{t+1} = W·z_t + h0` from `z_0 = h0`.
pub fn fixed_point_iterate(w: &DeqWeights, h0: &Matrix, policy: &SolverPolicy) -> Result<FixedPointResult> {
    check_input(w, h0)?;
    policy.validate()?;
    let mut z = h0.clone();
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < policy.t_max {
        let mut next = w.w_deq.matmul(&z);
        next.add_scaled(1.0, h0);
        residual = next.sub(&z).frobenius_norm();
        z = next;
        iterations += 1;
        history.push(residual);
        if residual <= policy.epsilon {
            break;
        }
    }
    let converged = residual <= policy.epsilon;
    if !converged && policy.on_failure == OnFailure::Error {
        return Err(Error::SolverNonConvergence { residual, iterations });
    }
    Ok(FixedPointResult {
        z_star: z,
        iterations,
        residual,
        converged,
        history,
    })
}

/// Per-sample outcome of a column-wise solve.
#[derive(Debug, Clone)]
pub struct ColumnSolve {
    pub z_star: Matrix,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
}

impl ColumnSolve {
    pub fn mean_iterations(&self) -> f64 {
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len().max(1) as f64
    }

    pub fn skipped(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }
}

/// Picard iteration run independently on each column of `rhs` against the
/// operator `op` (`W` for the forward pass, `Wᵀ` for the adjoint), so each
/// sample gets its own convergence verdict.
pub(crate) fn iterate_columns(op: &Matrix, rhs: &Matrix, policy: &SolverPolicy) -> Result<ColumnSolve> {
    policy.validate()?;
    let (d, n) = rhs.shape();
    let mut z_star = Matrix::zeros(d, n);
    let mut iterations = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut converged = Vec::with_capacity(n);
    for j in 0..n {
        let h = rhs.column(j);
        let mut z = h.clone();
        let mut next = vec![0.0; d];
        let mut residual = f64::INFINITY;
        let mut t = 0;
        while t < policy.t_max {
            let mut r2 = 0.0;
            for i in 0..d {
                let v = crate::numerics::dot(op.row(i), &z) + h[i];
                r2 += (v - z[i]).powi(2);
                next[i] = v;
            }
            std::mem::swap(&mut z, &mut next);
            residual = r2.sqrt();
            t += 1;
            if residual <= policy.epsilon {
                break;
            }
        }
        let ok = residual <= policy.epsilon;
        if !ok && policy.on_failure == OnFailure::Error {
            return Err(Error::SolverNonConvergence { residual, iterations: t });
        }
        z_star.set_column(j, &z);
        iterations.push(t);
        residuals.push(residual);
        converged.push(ok);
    }
    Ok(ColumnSolve {
        z_star,
        iterations,
        residuals,
        converged,
    })
}

/// Column-wise forward solve; see [`iterate_columns`].
pub fn fixed_point_iterate_columns(w: &DeqWeights, h0: &Matrix, policy: &SolverPolicy) -> Result<ColumnSolve> {
    check_input(w, h0)?;
    iterate_columns(&w.w_deq, h0, policy)
}

/// Exact gradient of a loss through the equilibrium.
///
/// With `A = (I − W)⁻¹` and `upstream = ∂L/∂z★`: `∂L/∂h0 = Aᵀ·upstream` and
/// `∂L/∂W = (Aᵀ·upstream)·z★ᵀ`.
pub fn head_gradient(w: &DeqWeights, h0: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
    check_input(w, h0)?;
    if upstream.shape() != h0.shape() {
        return Err(Error::shape(
            "head_gradient",
            format!("upstream {}x{}", h0.rows(), h0.cols()),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let lu = w.factor()?;
    let z_star = lu.solve(h0);
    let grad_h0 = lu.solve_transpose(upstream);
    let grad_w = grad_h0.matmul_t(&z_star);
    Ok((grad_w, grad_h0))
}
