use log::{debug, warn};

use super::ascent::armijo_update;
use super::estep::{e_step_binary_with, pack_beta, unpack_beta, SufficientStats};
use crate::em::{init_params, m_step_po2pls_blocks, relative_change, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{canonicalize, DataSet, Family, ModelDims, Theta};

/// One generalised-EM iteration from the E-step statistics of `theta`.
/// Returns the new parameters and whether the β line search stalled.
pub fn em_step_binary(theta: &Theta, data: &DataSet, stats: &SufficientStats) -> Result<(Theta, bool)> {
    let blocks = m_step_po2pls_blocks(&stats.moments, data, theta)?;
    let step = armijo_update(&pack_beta(theta), data, stats);
    let mut next = blocks.apply(theta);
    unpack_beta(&mut next, &step.beta);
    // keep t a + (u − tB) b unchanged under the new B
    let shift = (&next.b_tu - &theta.b_tu).component_mul(&next.b);
    next.a += shift;
    next.check_variance_floor()?;
    Ok((next, step.stalled))
}

fn e_step(theta: &Theta, data: &DataSet, config: &FitConfig) -> Result<SufficientStats> {
    e_step_binary_with(theta, data, &config.quadrature())
}

/// Fits the Bernoulli-outcome model: quadrature E-step, one Armijo
/// gradient step for `(a0, a, b)` and the closed-form two-block M-step
/// per iteration, until the relative change of the quadrature
/// log-likelihood drops below `rel_tol`.
pub fn fit_binary(data: &DataSet, dims: &ModelDims, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    data.check_dims(dims)?;
    if data.family != Family::Bernoulli {
        return Err(Error::InvalidArgument("fit_binary needs a bernoulli-family data set".into()));
    }
    // fail fast on the grid size before any work
    let points = (config.quad_nodes as u128).checked_pow(2 * dims.r as u32).unwrap_or(u128::MAX);
    if points > config.grid_budget as u128 {
        return Err(Error::GridBudget {
            points,
            nodes: config.quad_nodes,
            dim: 2 * dims.r,
            budget: config.grid_budget,
        });
    }

    let mut theta = init_params(data, dims, config)?;
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;
    let final_loglik = loop {
        let stats = e_step(&theta, data, config)?;
        let ll = stats.loglik;
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration: iterations });
        }
        if config.trace_likelihood {
            trace.push(ll);
        }
        debug!("binary EM iteration {iterations}: loglik {ll:.10e}");
        if let Some(prev) = prev {
            if relative_change(prev, ll) < config.rel_tol {
                converged = true;
                break ll;
            }
        }
        if iterations == config.max_iter {
            break ll;
        }
        let (next, stalled) = em_step_binary(&theta, data, &stats)?;
        if stalled {
            stalls += 1;
            warn!("beta line search stalled at iteration {iterations}");
        }
        theta = if config.canonicalize_each_iter { canonicalize(&next) } else { next };
        iterations += 1;
        prev = Some(ll);
    };

    let theta = canonicalize(&theta);
    let final_moments = e_step(&theta, data, config)?.moments;
    Ok(FitResult {
        theta,
        loglik_trace: trace,
        final_loglik,
        iterations,
        converged,
        final_moments,
        quad_nodes: Some(config.quad_nodes),
        armijo_stalls: stalls,
    })
}
