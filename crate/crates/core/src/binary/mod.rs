//! EM for the Bernoulli-outcome model.
//!
//! The joint scores `ν = (t, u)` are integrated on a tensor Gauss–Hermite
//! grid, placed either on their prior or on their Gaussian conditional
//! given `(x, y)`; the block-specific scores are integrated analytically. The outcome coefficients take one Armijo
//! gradient step per iteration, the remaining parameters reuse the
//! Gaussian-model M-step on the quadrature moments.

mod ascent;
mod estep;
mod fit;
mod quadrature;

pub use ascent::{armijo_search, armijo_update, grad_q_beta, q_beta, ArmijoStep};
pub use estep::{
    conditional_prob_z, e_step_binary, e_step_binary_with, e_step_on_grid, log_likelihood_binary,
    log_likelihood_binary_with, log_likelihood_on_grid, pack_beta, unpack_beta, GridCenter, QuadratureOptions,
    SufficientStats,
};
pub use fit::{em_step_binary, fit_binary};
pub use quadrature::{build_grid, build_grid_for, gauss_hermite_rule, HermiteRule, QuadratureGrid, MAX_NODES};

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_BUDGET: usize = 1_000_000;
