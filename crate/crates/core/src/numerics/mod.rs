//! Dense linear algebra and seeded randomness shared by every other module.
//!
//! All arithmetic is `f64`; the collapse metrics approach zero over thousands
//! of steps and single precision would bottom out long before that.

mod linalg;
mod matrix;
mod rng;
mod svd;

pub use linalg::{pseudo_inverse, solve_linear, spectral_radius_bound, Lu, DEFAULT_PINV_CUTOFF, SINGULAR_RATIO};
pub use matrix::{dot, Matrix};
pub use rng::Rng;
pub use svd::{svd, SvdResult};
