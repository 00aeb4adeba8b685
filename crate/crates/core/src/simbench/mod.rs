//! Synthetic-data study: generator, metrics, ridge baselines and the
//! replication driver.

mod generate;
mod metrics;
mod predict;
mod ridge;
mod study;

pub use generate::{generate_dataset, SimData};
pub use metrics::{loading_inner_product, rmsep, scaled_error, tpr_top_quarter};
pub use predict::predict_outcome;
pub use ridge::{lambda_grid, ridge_closed_form, ridge_fit_cv, RidgeFit};
pub use study::{run_study, Method, Record, ReplicationOutcome, StudyConfig, StudyReport, Summary};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Family;

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSetting {
    /// Label used in report rows.
    pub id: String,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Share of `Var(u)` due to `h`.
    pub heterogeneity: f64,
    /// Share of the total variance of `x` due to `e`.
    pub noise_x: f64,
    pub noise_y: f64,
    /// Share of `Var(z)` due to `g` (Gaussian family).
    pub outcome_noise: f64,
    pub a_true: f64,
    pub b_true: f64,
    pub r: usize,
    pub r_x: usize,
    pub r_y: usize,
    pub family: Family,
    pub replications: usize,
    pub test_n: usize,
    pub seed: u64,
}

impl Default for SimSetting {
    fn default() -> Self {
        SimSetting {
            id: "default".into(),
            n: 1000,
            p: 100,
            q: 10,
            heterogeneity: 0.4,
            noise_x: 0.4,
            noise_y: 0.4,
            outcome_noise: 0.2,
            a_true: 2.0,
            b_true: 1.0,
            r: 1,
            r_x: 1,
            r_y: 1,
            family: Family::Gaussian,
            replications: 50,
            test_n: 1000,
            seed: 1,
        }
    }
}

impl SimSetting {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("heterogeneity", self.heterogeneity),
            ("noise_x", self.noise_x),
            ("noise_y", self.noise_y),
            ("outcome_noise", self.outcome_noise),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.n < 2 || self.test_n < 1 {
            return Err(Error::InvalidArgument(format!(
                "need n >= 2 and test_n >= 1, got {} and {}",
                self.n, self.test_n
            )));
        }
        if self.r == 0 || self.r + self.r_x > self.p || self.r + self.r_y > self.q {
            return Err(Error::InvalidDims(format!(
                "r={}, r_x={}, r_y={} incompatible with p={}, q={}",
                self.r, self.r_x, self.r_y, self.p, self.q
            )));
        }
        if !self.a_true.is_finite() || !self.b_true.is_finite() {
            return Err(Error::InvalidArgument("a_true and b_true must be finite".into()));
        }
        Ok(())
    }
}

/// Independent stream for replication `rep` under `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}
