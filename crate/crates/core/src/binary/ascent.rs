use nalgebra::DVector;
use rayon::prelude::*;

use super::estep::{log_prob_z, SufficientStats};
use crate::model::DataSet;
use crate::stats::sigmoid;

/// Initial step, shrink factor and smallest step of the line search.
const STEP_INIT: f64 = 1.0;
const STEP_SHRINK: f64 = 0.8;
const STEP_MIN: f64 = 1e-12;

/// `Σ_i Σ_m π_im log p(z_i | ν_m; β)` with the posterior weights `π`
/// held at the E-step parameters.
pub fn q_beta(beta: &DVector<f64>, data: &DataSet, stats: &SufficientStats) -> f64 {
    let (eta, eta_shift) = stats.eta_parts(beta);
    let per_obs: Vec<f64> = (0..stats.n())
        .into_par_iter()
        .map(|i| {
            stats
                .posterior_weights(i)
                .iter()
                .map(|&(m, w)| w * log_prob_z(eta[m] + eta_shift[i], data.z[i]))
                .sum()
        })
        .collect();
    per_obs.iter().sum()
}

/// Gradient of [`q_beta`]: `Σ_i Σ_m π_im (z_i − σ(η_im)) (1, t_im, u_im − t_im B)`.
pub fn grad_q_beta(beta: &DVector<f64>, data: &DataSet, stats: &SufficientStats) -> DVector<f64> {
    let (eta, eta_shift) = stats.eta_parts(beta);
    let d = beta.len();
    let per_obs: Vec<DVector<f64>> = (0..stats.n())
        .into_par_iter()
        .map(|i| {
            let mut g = DVector::zeros(d);
            let mut total = 0.0;
            for &(m, w) in stats.posterior_weights(i) {
                let resid = w * (data.z[i] - sigmoid(eta[m] + eta_shift[i]));
                g += stats.features.row(m).transpose() * resid;
                total += resid;
            }
            g += stats.shift_features.row(i).transpose() * total;
            g
        })
        .collect();
    per_obs.iter().fold(DVector::zeros(d), |acc, g| acc + g)
}

/// Outcome of one backtracking line search.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoStep {
    pub beta: DVector<f64>,
    /// Accepted step size (0 when stalled).
    pub step: f64,
    pub q_before: f64,
    pub q_after: f64,
    /// No step down to the minimum size met the ascent condition;
    /// `beta` is the input.
    pub stalled: bool,
}

/// Backtracking along `grad` from `s = 1`, shrinking by 0.8 until
/// `q(β + s g) ≥ q(β) + ½ s ‖g‖²`.
pub fn armijo_search<F: Fn(&DVector<f64>) -> f64>(q: F, beta: &DVector<f64>, grad: &DVector<f64>) -> ArmijoStep {
    let q0 = q(beta);
    let g2 = grad.norm_squared();
    let mut s = STEP_INIT;
    while s >= STEP_MIN {
        let cand = beta + grad * s;
        let qc = q(&cand);
        if qc >= q0 + 0.5 * s * g2 {
            return ArmijoStep {
                beta: cand,
                step: s,
                q_before: q0,
                q_after: qc,
                stalled: false,
            };
        }
        s *= STEP_SHRINK;
    }
    ArmijoStep {
        beta: beta.clone(),
        step: 0.0,
        q_before: q0,
        q_after: q0,
        stalled: true,
    }
}

/// One Armijo gradient-ascent step on [`q_beta`].
pub fn armijo_update(beta: &DVector<f64>, data: &DataSet, stats: &SufficientStats) -> ArmijoStep {
    let grad = grad_q_beta(beta, data, stats);
    armijo_search(|b| q_beta(b, data, stats), beta, &grad)
}
