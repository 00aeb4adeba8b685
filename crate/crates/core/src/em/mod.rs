//! EM fitting of the Gaussian-outcome model.
//!
//! The E-step is exact Gaussian conditioning; every block of the M-step is a
//! closed-form maximiser of its own term of the expected complete-data
//! log-likelihood, so the observed log-likelihood never decreases.

mod gaussian;
mod init;
mod mstep;

pub use gaussian::{em_step_gaussian, fit_gaussian};
pub use init::init_params;
pub use mstep::{
    expected_complete_loglik, m_step_outcome, m_step_po2pls_blocks, ExpectedLoglik, OutcomeUpdate,
    Po2plsBlocks,
};

pub(crate) use mstep::{th_transform, B_MIN};

use serde::{Deserialize, Serialize};

use crate::binary::{GridCenter, QuadratureOptions};
use crate::error::{Error, Result};
use crate::model::{LatentMoments, Theta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitStrategy {
    /// Leading singular vectors of `XᵀY` and of the deflated blocks.
    Svd,
    /// Random semi-orthogonal loadings drawn from a seeded generator.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop once `|Δℓ| / |ℓ|` falls below this.
    pub rel_tol: f64,
    pub init: InitStrategy,
    pub canonicalize_each_iter: bool,
    pub trace_likelihood: bool,
    /// Gauss–Hermite nodes per latent dimension (Bernoulli family only).
    pub quad_nodes: usize,
    /// Largest admissible tensor grid (Bernoulli family only).
    pub grid_budget: usize,
    /// Grid placement (Bernoulli family only).
    pub grid_center: GridCenter,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 1000,
            rel_tol: 1e-6,
            init: InitStrategy::Svd,
            canonicalize_each_iter: false,
            trace_likelihood: true,
            quad_nodes: 16,
            grid_budget: 1_000_000,
            grid_center: GridCenter::Conditional,
        }
    }
}

impl FitConfig {
    pub fn quadrature(&self) -> QuadratureOptions {
        QuadratureOptions {
            nodes: self.quad_nodes,
            budget: self.grid_budget,
            center: self.grid_center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Canonicalised estimate.
    pub theta: Theta,
    /// Observed-data log-likelihood at the start and after every iteration
    /// (empty unless `trace_likelihood`).
    pub loglik_trace: Vec<f64>,
    pub final_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Latent moments at the returned `theta`.
    pub final_moments: LatentMoments,
    /// Node count used by the binary fit, `None` for Gaussian fits.
    pub quad_nodes: Option<usize>,
    /// Iterations where the β line search found no admissible step.
    pub armijo_stalls: usize,
}

pub(crate) fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-12)
}
