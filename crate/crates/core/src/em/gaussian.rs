use log::debug;

use super::{init_params, m_step_outcome, m_step_po2pls_blocks, relative_change, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{
    canonicalize, conditional_latent_moments, DataSet, Family, GaussianConditioner, LatentMoments, ModelDims, Theta,
};

/// Largest `|mean(z)| / max(1, rms(z))` accepted as centred.
const Z_CENTER_TOL: f64 = 1e-8;

/// Fits the Gaussian-outcome model by EM.
///
/// Each iteration evaluates the observed log-likelihood and the conditional
/// moments from one factorisation, then applies the closed-form M-step.
/// Stops when the relative likelihood change drops below `rel_tol` or after
/// `max_iter` M-steps.
pub fn fit_gaussian(data: &DataSet, dims: &ModelDims, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    data.check_dims(dims)?;
    if data.family != Family::Gaussian {
        return Err(Error::InvalidArgument(
            "fit_gaussian needs a gaussian-family data set".into(),
        ));
    }
    check_centered(data)?;

    let mut theta = init_params(data, dims, config)?;
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    let mut converged = false;
    let final_loglik = loop {
        let cond = GaussianConditioner::new(&theta, true)?;
        let ll = cond.log_likelihood(&data.x, &data.y, Some(&data.z));
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration: iterations });
        }
        if config.trace_likelihood {
            trace.push(ll);
        }
        debug!("gaussian EM iteration {iterations}: loglik {ll:.10e}");
        if let Some(prev) = prev {
            if relative_change(prev, ll) < config.rel_tol {
                converged = true;
                break ll;
            }
        }
        if iterations == config.max_iter {
            break ll;
        }
        let moments = cond.moments(&data.x, &data.y, Some(&data.z));
        theta = m_step(&theta, &moments, data)?;
        if config.canonicalize_each_iter {
            theta = canonicalize(&theta);
        }
        iterations += 1;
        prev = Some(ll);
    };

    let theta = canonicalize(&theta);
    let final_moments = conditional_latent_moments(&theta, data)?;
    Ok(FitResult {
        theta,
        loglik_trace: trace,
        final_loglik,
        iterations,
        converged,
        final_moments,
        quad_nodes: None,
        armijo_stalls: 0,
    })
}

/// One full EM iteration (E-step at `theta`, then every M-step block).
pub fn em_step_gaussian(theta: &Theta, data: &DataSet) -> Result<Theta> {
    let moments = conditional_latent_moments(theta, data)?;
    m_step(theta, &moments, data)
}

fn m_step(theta: &Theta, moments: &LatentMoments, data: &DataSet) -> Result<Theta> {
    let blocks = m_step_po2pls_blocks(moments, data, theta)?;
    let outcome = m_step_outcome(moments, &data.z, &theta.b_tu)?;
    // (a, b) were fitted against h = u − tB_old; re-express them against the
    // new B so that the predictor t a + h b is the one that was maximised.
    let shift = (&blocks.b_tu - &theta.b_tu).component_mul(&outcome.b);
    let mut next = blocks.apply(theta);
    next.a = outcome.a + shift;
    next.b = outcome.b;
    next.sigma_g2 = outcome.sigma_g2;
    next.check_variance_floor()?;
    Ok(next)
}

fn check_centered(data: &DataSet) -> Result<()> {
    let n = data.n() as f64;
    let mean = data.z.sum() / n;
    let rms = (data.z.norm_squared() / n).sqrt();
    if mean.abs() > Z_CENTER_TOL * rms.max(1.0) {
        return Err(Error::InvalidData(format!(
            "gaussian outcome must be centred, mean is {mean:e}"
        )));
    }
    Ok(())
}
