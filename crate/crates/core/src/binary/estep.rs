use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use super::quadrature::{build_grid, build_grid_for, QuadratureGrid};
use super::DEFAULT_GRID_BUDGET;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DataSet, Family, GaussianConditioner, LatentCov, LatentMoments, Theta};
use crate::stats::log_sigmoid;

/// Posterior weights below this fraction of the largest one are dropped.
const PRUNE_RELATIVE: f64 = 1e-14;

/// `(a0, a, b)` of `theta` as one vector.
pub fn pack_beta(theta: &Theta) -> DVector<f64> {
    let r = theta.r();
    let mut beta = DVector::zeros(2 * r + 1);
    beta[0] = theta.a0;
    beta.rows_mut(1, r).copy_from(&theta.a);
    beta.rows_mut(1 + r, r).copy_from(&theta.b);
    beta
}

/// Writes `(a0, a, b)` back into `theta`.
pub fn unpack_beta(theta: &mut Theta, beta: &DVector<f64>) {
    let r = theta.r();
    theta.a0 = beta[0];
    theta.a = beta.rows(1, r).into_owned();
    theta.b = beta.rows(1 + r, r).into_owned();
}

/// `P(z | ν)` under the logit link, with `ν = (t, u)` and
/// linear predictor `a0 + t a + (u − tB) b`.
pub fn conditional_prob_z(beta: &DVector<f64>, nu: &[f64], b_tu: &DVector<f64>, z: f64) -> f64 {
    let eta = linear_predictor(beta, nu, b_tu);
    if z == 1.0 {
        log_sigmoid(eta).exp()
    } else {
        log_sigmoid(-eta).exp()
    }
}

fn linear_predictor(beta: &DVector<f64>, nu: &[f64], b_tu: &DVector<f64>) -> f64 {
    let r = b_tu.len();
    let mut eta = beta[0];
    for k in 0..r {
        let (t, u) = (nu[k], nu[r + k]);
        eta += t * beta[1 + k] + (u - t * b_tu[k]) * beta[1 + r + k];
    }
    eta
}

pub(crate) fn log_prob_z(eta: f64, z: f64) -> f64 {
    if z == 1.0 {
        log_sigmoid(eta)
    } else {
        log_sigmoid(-eta)
    }
}

/// Density of one observed block given its joint scores, block-specific
/// scores integrated out: `x | t ~ N(t Jᵀ, A S Aᵀ + σ² I)`, evaluated
/// through the `s × s` capacitance `P = S⁻¹ + AᵀA/σ²`.
pub(crate) struct BlockDensity {
    dim: usize,
    sigma2: f64,
    gram_jj: DMatrix<f64>,
    gram_js: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    logdet: f64,
    joint: DMatrix<f64>,
    spec: DMatrix<f64>,
}

/// Per-observation projections used by [`BlockDensity`].
pub(crate) struct Projected {
    joint: DMatrix<f64>,
    spec: DMatrix<f64>,
    sq: DVector<f64>,
}

impl BlockDensity {
    pub(crate) fn new(joint: &DMatrix<f64>, spec: &DMatrix<f64>, spec_var: &DVector<f64>, sigma2: f64) -> Result<Self> {
        let s = spec.ncols();
        let dim = joint.nrows();
        let mut logdet = dim as f64 * sigma2.ln();
        let p_inv = if s == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let mut cap = spec.transpose() * spec / sigma2;
            for j in 0..s {
                cap[(j, j)] += 1.0 / spec_var[j];
                logdet += spec_var[j].ln();
            }
            linalg::symmetrize(&mut cap);
            let chol = linalg::cholesky(&cap, "block capacitance")?;
            logdet += linalg::logdet(&chol);
            let mut inv = chol.inverse();
            linalg::symmetrize(&mut inv);
            inv
        };
        Ok(BlockDensity {
            dim,
            sigma2,
            gram_jj: joint.transpose() * joint,
            gram_js: joint.transpose() * spec,
            p_inv,
            logdet,
            joint: joint.clone(),
            spec: spec.clone(),
        })
    }

    pub(crate) fn project(&self, x: &DMatrix<f64>) -> Projected {
        Projected {
            joint: x * &self.joint,
            spec: x * &self.spec,
            sq: DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.norm_squared())),
        }
    }

    /// Grid-point terms `l JᵀJ lᵀ` and `l JᵀA` for the joint rows `l`.
    fn grid_terms(&self, latent: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let quad = DVector::from_iterator(
            latent.nrows(),
            latent.row_iter().map(|l| (l * &self.gram_jj).dot(&l)),
        );
        (quad, latent * &self.gram_js)
    }

    fn log_density(&self, proj: &Projected, i: usize, latent: &[f64], quad: f64, cross_spec: &[f64]) -> f64 {
        let mut vv = proj.sq[i] + quad;
        for (k, l) in latent.iter().enumerate() {
            vv -= 2.0 * proj.joint[(i, k)] * l;
        }
        let s = self.p_inv.nrows();
        let mut corr = 0.0;
        if s > 0 {
            let va: Vec<f64> = (0..s).map(|j| proj.spec[(i, j)] - cross_spec[j]).collect();
            for a in 0..s {
                let mut acc = 0.0;
                for b in 0..s {
                    acc += self.p_inv[(a, b)] * va[b];
                }
                corr += va[a] * acc;
            }
        }
        let quad_form = (vv - corr / self.sigma2) / self.sigma2;
        -0.5 * (self.dim as f64 * (2.0 * PI).ln() + self.logdet + quad_form)
    }

    /// Offsets `x A P⁻¹/σ²` of the specific-score posterior means.
    fn spec_offset(&self, proj: &Projected) -> DMatrix<f64> {
        &proj.spec * &self.p_inv / self.sigma2
    }

    /// Slope `−JᵀA P⁻¹/σ²` of the specific-score posterior mean in `l`.
    fn spec_slope(&self) -> DMatrix<f64> {
        -(&self.gram_js * &self.p_inv) / self.sigma2
    }
}

/// Where the Gauss–Hermite grid for `ν = (t, u)` is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridCenter {
    /// Scaled by the prior covariance of `ν`; the integrand carries
    /// `f(x|t) f(y|u) p(z|ν)`.
    Prior,
    /// `f(ν) f(x|t) f(y|u)` is Gaussian in `ν`, equal to
    /// `f(x, y) N(ν; μ_i, V)`. The grid follows `N(0, V)` shifted by `μ_i`
    /// and only `p(z|ν)` is integrated numerically.
    #[default]
    Conditional,
}

/// Node count, size cap and placement of the quadrature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureOptions {
    pub nodes: usize,
    pub budget: usize,
    pub center: GridCenter,
}

impl QuadratureOptions {
    pub fn new(nodes: usize) -> Self {
        QuadratureOptions {
            nodes,
            budget: DEFAULT_GRID_BUDGET,
            center: GridCenter::default(),
        }
    }

    pub fn with_center(mut self, center: GridCenter) -> Self {
        self.center = center;
        self
    }
}

/// Everything the binary M-step needs from one E-step.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// Posterior moments of `(t, u, t_perp, u_perp)`, one covariance per observation.
    pub moments: LatentMoments,
    /// Quadrature estimate of the observed log-likelihood at the E-step parameters.
    pub loglik: f64,
    /// Shared grid; observation `i` uses its points shifted by `shift_i`.
    pub grid: QuadratureGrid,
    /// `(1, t, u − tB)` at every grid point, with `B` from the E-step parameters.
    pub features: DMatrix<f64>,
    /// `(0, t, u − tB)` at every observation's grid shift (zero for prior grids).
    pub shift_features: DMatrix<f64>,
    weights: Vec<Vec<(usize, f64)>>,
}

impl SufficientStats {
    /// Non-negligible posterior weights of observation `i`, summing to 1.
    pub fn posterior_weights(&self, i: usize) -> &[(usize, f64)] {
        &self.weights[i]
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Linear predictors `η_im = (F_m + s_i) β`, returned as the grid part
    /// and the per-observation part.
    pub(crate) fn eta_parts(&self, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.features * beta, &self.shift_features * beta)
    }
}

struct ObsPosterior {
    loglik: f64,
    weights: Vec<(usize, f64)>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Grid-point terms of the block densities, needed only on prior grids.
struct PriorTerms {
    quad_x: DVector<f64>,
    cross_x: DMatrix<f64>,
    quad_y: DVector<f64>,
    cross_y: DMatrix<f64>,
}

/// Shared pieces of the integrand for one parameter value.
pub(crate) struct Integrand<'a> {
    theta: &'a Theta,
    grid: QuadratureGrid,
    dx: BlockDensity,
    dy: BlockDensity,
    px: Projected,
    py: Projected,
    prior: Option<PriorTerms>,
    /// Per-observation grid shift (`N × 2r`) and `log f(x_i, y_i)`.
    shift: DMatrix<f64>,
    base_ll: DVector<f64>,
    features: DMatrix<f64>,
    shift_features: DMatrix<f64>,
    eta: DVector<f64>,
    eta_shift: DVector<f64>,
}

fn predictor_features(theta: &Theta, nu: &DMatrix<f64>, intercept: f64) -> DMatrix<f64> {
    let r = theta.r();
    let mut f = DMatrix::zeros(nu.nrows(), 2 * r + 1);
    for m in 0..nu.nrows() {
        f[(m, 0)] = intercept;
        for k in 0..r {
            let (t, u) = (nu[(m, k)], nu[(m, r + k)]);
            f[(m, 1 + k)] = t;
            f[(m, 1 + r + k)] = u - t * theta.b_tu[k];
        }
    }
    f
}

impl<'a> Integrand<'a> {
    fn check(theta: &Theta, data: &DataSet) -> Result<()> {
        check_family(data, theta)?;
        data.check_theta(theta)?;
        for (name, v) in theta.variances() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NumericalDomain(format!("{name} = {v:e} is not a positive variance")));
            }
        }
        Ok(())
    }

    pub(crate) fn new(theta: &'a Theta, data: &DataSet, opts: &QuadratureOptions) -> Result<Self> {
        Self::check(theta, data)?;
        match opts.center {
            GridCenter::Prior => {
                let grid = build_grid(theta, opts.nodes, opts.budget)?;
                Self::on_prior_grid(theta, data, grid)
            }
            GridCenter::Conditional => {
                let r = theta.r();
                let cond = GaussianConditioner::new(theta, false)?;
                let moments = cond.moments(&data.x, &data.y, None);
                let v = match &moments.cov {
                    LatentCov::Shared(c) => c.view((0, 0), (2 * r, 2 * r)).into_owned(),
                    LatentCov::PerObservation(_) => unreachable!("Gaussian conditioning has a shared covariance"),
                };
                let grid = build_grid_for(&v, opts.nodes, opts.budget)?;
                let shift = moments.mean.columns(0, 2 * r).into_owned();
                let base_ll = cond.log_likelihood_rows(&data.x, &data.y, None);
                Self::assemble(theta, data, grid, None, shift, base_ll)
            }
        }
    }

    pub(crate) fn on_prior_grid(theta: &'a Theta, data: &DataSet, grid: QuadratureGrid) -> Result<Self> {
        Self::check(theta, data)?;
        let r = theta.r();
        if grid.dim != 2 * r {
            return Err(Error::DimensionMismatch(format!(
                "grid has dimension {}, model needs {}",
                grid.dim,
                2 * r
            )));
        }
        let n = data.n();
        Self::assemble(theta, data, grid, Some(()), DMatrix::zeros(n, 2 * r), DVector::zeros(n))
    }

    fn assemble(
        theta: &'a Theta,
        data: &DataSet,
        grid: QuadratureGrid,
        prior: Option<()>,
        shift: DMatrix<f64>,
        base_ll: DVector<f64>,
    ) -> Result<Self> {
        let r = theta.r();
        let dx = BlockDensity::new(&theta.w, &theta.w_perp, &theta.sigma_tperp, theta.sigma_e2)?;
        let dy = BlockDensity::new(&theta.c, &theta.c_perp, &theta.sigma_uperp, theta.sigma_f2)?;
        let prior = prior.map(|()| {
            let (quad_x, cross_x) = dx.grid_terms(&grid.points.columns(0, r).into_owned());
            let (quad_y, cross_y) = dy.grid_terms(&grid.points.columns(r, r).into_owned());
            PriorTerms {
                quad_x,
                cross_x,
                quad_y,
                cross_y,
            }
        });
        let features = predictor_features(theta, &grid.points, 1.0);
        let shift_features = predictor_features(theta, &shift, 0.0);
        let beta = pack_beta(theta);
        Ok(Integrand {
            theta,
            px: dx.project(&data.x),
            py: dy.project(&data.y),
            dx,
            dy,
            prior,
            eta: &features * &beta,
            eta_shift: &shift_features * &beta,
            grid,
            shift,
            base_ll,
            features,
            shift_features,
        })
    }

    /// Log of weight × integrand at every grid point for observation `i`,
    /// without the constant `log f(x_i, y_i)` of conditional grids.
    fn log_terms(&self, i: usize, z: f64) -> Vec<f64> {
        let r = self.theta.r();
        let g = self.grid.len();
        let mut out = Vec::with_capacity(g);
        for m in 0..g {
            out.push(self.grid.logweights[m] + log_prob_z(self.eta[m] + self.eta_shift[i], z));
        }
        if let Some(pt) = &self.prior {
            let (sx, sy) = (pt.cross_x.ncols(), pt.cross_y.ncols());
            let mut cx = vec![0.0; sx];
            let mut cy = vec![0.0; sy];
            let mut t = vec![0.0; r];
            let mut u = vec![0.0; r];
            for (m, term) in out.iter_mut().enumerate() {
                for k in 0..r {
                    t[k] = self.grid.points[(m, k)];
                    u[k] = self.grid.points[(m, r + k)];
                }
                for j in 0..sx {
                    cx[j] = pt.cross_x[(m, j)];
                }
                for j in 0..sy {
                    cy[j] = pt.cross_y[(m, j)];
                }
                *term += self.dx.log_density(&self.px, i, &t, pt.quad_x[m], &cx)
                    + self.dy.log_density(&self.py, i, &u, pt.quad_y[m], &cy);
            }
        }
        out
    }

    fn log_likelihood_obs(&self, i: usize, z: f64) -> Result<f64> {
        let terms = self.log_terms(i, z);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::PosteriorUnderflow { observation: i });
        }
        Ok(self.base_ll[i] + max + terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }

    fn posterior(&self, i: usize, z: f64, offset: &DVector<f64>, map: &DMatrix<f64>, spec_cov: &DMatrix<f64>) -> Result<ObsPosterior> {
        let terms = self.log_terms(i, z);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::PosteriorUnderflow { observation: i });
        }
        let total: f64 = terms.iter().map(|l| (l - max).exp()).sum();
        let log_total = max + total.ln();
        let cutoff = PRUNE_RELATIVE.ln();
        let mut weights: Vec<(usize, f64)> = terms
            .iter()
            .enumerate()
            .filter(|(_, &l)| l - max >= cutoff)
            .map(|(m, &l)| (m, (l - log_total).exp()))
            .collect();
        let kept: f64 = weights.iter().map(|(_, w)| w).sum();
        for (_, w) in weights.iter_mut() {
            *w /= kept;
        }

        let d = self.grid.dim;
        let mut mean_nu = DVector::zeros(d);
        for &(m, w) in &weights {
            mean_nu += self.grid.points.row(m).transpose() * w;
        }
        let mut cov_nu = DMatrix::zeros(d, d);
        for &(m, w) in &weights {
            let dev = self.grid.points.row(m).transpose() - &mean_nu;
            cov_nu += &dev * dev.transpose() * w;
        }
        mean_nu += self.shift.row(i).transpose();
        let mean = offset + map.transpose() * &mean_nu;
        let mut cov = map.transpose() * cov_nu * map + spec_cov;
        linalg::symmetrize(&mut cov);
        Ok(ObsPosterior {
            loglik: self.base_ll[i] + log_total,
            weights,
            mean,
            cov,
        })
    }
}

fn check_family(data: &DataSet, theta: &Theta) -> Result<()> {
    if data.family != Family::Bernoulli || theta.family != Family::Bernoulli {
        return Err(Error::InvalidArgument(
            "the quadrature E-step needs bernoulli-family data and parameters".into(),
        ));
    }
    Ok(())
}

fn sum_loglik(integrand: &Integrand<'_>, data: &DataSet) -> Result<f64> {
    let per_obs: Result<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|i| integrand.log_likelihood_obs(i, data.z[i]))
        .collect();
    Ok(per_obs?.iter().sum())
}

/// Quadrature estimate of the observed-data log-likelihood
/// `Σ_i log ∫ p(z_i|ν) f(x_i|t) f(y_i|u) f(ν) dν` with an `m`-node
/// conditional grid, accumulated in log space.
pub fn log_likelihood_binary(theta: &Theta, data: &DataSet, m: usize) -> Result<f64> {
    log_likelihood_binary_with(theta, data, &QuadratureOptions::new(m))
}

pub fn log_likelihood_binary_with(theta: &Theta, data: &DataSet, opts: &QuadratureOptions) -> Result<f64> {
    let integrand = Integrand::new(theta, data, opts)?;
    sum_loglik(&integrand, data)
}

/// `Σ_i log Σ_m w_m p(z_i|ν_m) f(x_i|t_m) f(y_i|u_m)` on a prebuilt prior grid.
pub fn log_likelihood_on_grid(theta: &Theta, data: &DataSet, grid: &QuadratureGrid) -> Result<f64> {
    let integrand = Integrand::on_prior_grid(theta, data, grid.clone())?;
    sum_loglik(&integrand, data)
}

/// Posterior moments and weights under `theta` with an `m`-node
/// conditional grid and the default grid budget.
pub fn e_step_binary(theta: &Theta, data: &DataSet, m: usize) -> Result<SufficientStats> {
    e_step_binary_with(theta, data, &QuadratureOptions::new(m))
}

/// E-step with explicit grid options. Posterior moments of `(t, u)` are
/// weighted grid averages; the specific scores are Gaussian given `(t, u)`
/// and the data, with a mean affine in `(t, u)`, so their moments follow
/// from the `(t, u)` moments exactly.
pub fn e_step_binary_with(theta: &Theta, data: &DataSet, opts: &QuadratureOptions) -> Result<SufficientStats> {
    let integrand = Integrand::new(theta, data, opts)?;
    e_step_from(integrand, data)
}

/// E-step on a prebuilt prior grid.
pub fn e_step_on_grid(theta: &Theta, data: &DataSet, grid: QuadratureGrid) -> Result<SufficientStats> {
    let integrand = Integrand::on_prior_grid(theta, data, grid)?;
    e_step_from(integrand, data)
}

fn e_step_from(integrand: Integrand<'_>, data: &DataSet) -> Result<SufficientStats> {
    let theta = integrand.theta;
    let (r, rx, ry) = (theta.r(), theta.r_x(), theta.r_y());
    let k = 2 * r + rx + ry;

    let mut map = DMatrix::zeros(2 * r, k);
    for j in 0..2 * r {
        map[(j, j)] = 1.0;
    }
    map.view_mut((0, 2 * r), (r, rx)).copy_from(&integrand.dx.spec_slope());
    map.view_mut((r, 2 * r + rx), (r, ry)).copy_from(&integrand.dy.spec_slope());
    let mut spec_cov = DMatrix::zeros(k, k);
    spec_cov.view_mut((2 * r, 2 * r), (rx, rx)).copy_from(&integrand.dx.p_inv);
    spec_cov
        .view_mut((2 * r + rx, 2 * r + rx), (ry, ry))
        .copy_from(&integrand.dy.p_inv);
    let off_x = integrand.dx.spec_offset(&integrand.px);
    let off_y = integrand.dy.spec_offset(&integrand.py);

    let posts: Result<Vec<ObsPosterior>> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let mut offset = DVector::zeros(k);
            for j in 0..rx {
                offset[2 * r + j] = off_x[(i, j)];
            }
            for j in 0..ry {
                offset[2 * r + rx + j] = off_y[(i, j)];
            }
            integrand.posterior(i, data.z[i], &offset, &map, &spec_cov)
        })
        .collect();
    let posts = posts?;

    let n = data.n();
    let mut mean = DMatrix::zeros(n, k);
    let mut covs = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut loglik = 0.0;
    for (i, p) in posts.into_iter().enumerate() {
        loglik += p.loglik;
        mean.row_mut(i).copy_from(&p.mean.transpose());
        covs.push(p.cov);
        weights.push(p.weights);
    }
    Ok(SufficientStats {
        moments: LatentMoments {
            r,
            r_x: rx,
            r_y: ry,
            mean,
            cov: LatentCov::PerObservation(covs),
        },
        loglik,
        grid: integrand.grid,
        features: integrand.features,
        shift_features: integrand.shift_features,
        weights,
    })
}
