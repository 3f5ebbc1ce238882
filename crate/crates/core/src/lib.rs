//! Layer-peeled neural collapse for explicit linear heads and linear
//! deep-equilibrium (DEQ) heads.
//!
//! The crate trains the unconstrained-features program
//!
//! ```text
//! min  (1/N) Σ_k Σ_i CE(W · head(h⁰_{k,i}), y_k)
//! s.t. (1/K) Σ_k ‖w_k‖² ≤ E_W,   ‖head‖_F ≤ E_H,
//!      (1/K) Σ_k (1/n_k) Σ_i ‖h_{k,i}‖² ≤ E_H
//! ```
//!
//! with `head(h⁰) = W_EX·h⁰` or the equilibrium `z★ = (I − W_DEQ)⁻¹·h⁰`,
//! measures the NC1/NC2/NC3 collapse metrics, and checks the analytic loss
//! bounds and imbalanced-regime comparison conditions numerically.
//!
//! Modules, bottom-up:
//! - [`numerics`]: dense matrices, SVD, pseudo-inverse, solves, seeded RNG
//! - [`etf`]: simplex equiangular tight frames
//! - [`deq`]: the linear fixed point, Picard solver and implicit gradient
//! - [`lpm`]: cross-entropy, projections and projected gradient descent
//! - [`metrics`]: NC1/NC2/NC3 and minority-collapse diagnostics
//! - [`theory`]: Jensen log-bound, loss lower bounds, comparison conditions
//! - [`harness`]: configs, dataset synthesis, runs, CSV/JSON artifacts

pub mod deq;
pub mod error;
pub mod etf;
pub mod harness;
pub mod lpm;
pub mod metrics;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
