//! Joint latent-variable modelling of two omics matrices and an outcome.
//!
//! Two feature blocks `x` (p columns) and `y` (q columns) are decomposed into
//! joint scores `t`, `u = tB + h`, block-specific scores `t_perp`, `u_perp`
//! and isotropic noise. The outcome `z` depends on the joint part only,
//! through `a0 + t a' + h b'`, with an identity link (Gaussian outcome) or a
//! logit link (Bernoulli outcome).
//!
//! * [`model`] holds parameters, the implied covariance, identifiability
//!   rules and exact Gaussian conditioning.
//! * [`em`] fits the Gaussian-outcome model by closed-form EM.
//! * [`binary`] fits the Bernoulli-outcome model by quadrature-based EM.
//! * [`inference`] computes the observed information of the outcome
//!   coefficients and the chi-square association tests.
//! * [`simbench`] contains the synthetic-data simulator, metrics, ridge
//!   baselines and the replication driver.
//! * [`io`] reads CSV input, persists fitted models and prints scree tables.

pub mod binary;
pub mod em;
pub mod error;
pub mod inference;
pub mod io;
pub(crate) mod linalg;
pub mod model;
pub mod simbench;
pub(crate) mod stats;

pub use error::{Error, Result};
pub use model::{DataSet, Family, LatentMoments, ModelDims, Theta};

/// Fits the model for the family declared by `data`.
pub fn fit(data: &DataSet, dims: &ModelDims, config: &em::FitConfig) -> Result<em::FitResult> {
    match data.family {
        Family::Gaussian => em::fit_gaussian(data, dims, config),
        Family::Bernoulli => binary::fit_binary(data, dims, config),
    }
}
