//! Independent reference computations shared by the integration tests:
//! a direct sampler of the generative model, dense Gaussian algebra on the
//! full observation vector, Monte-Carlo integrals for the Bernoulli model
//! and a brute-force likelihood maximiser.

#![allow(dead_code)]

use argmin::core::{CostFunction, Error, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use glm_po2pls::{DataSet, Family, Theta};
use nalgebra::{DMatrix, DVector};
use rand::distr::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn uniform_vec(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> DVector<f64> {
    let u = Uniform::new(lo, hi).unwrap();
    DVector::from_fn(k, |_, _| u.sample(rng))
}

/// Orthonormal basis of the column space, signs fixed so `R` has a
/// positive diagonal (an orthonormal input is returned unchanged).
pub fn orthonormal(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = raw.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..q.ncols() {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// A valid, generally non-canonical parameter set. The joint and specific
/// loading blocks are drawn independently, so they are not orthogonal.
pub fn random_theta(rng: &mut ChaCha8Rng, p: usize, q: usize, r: usize, rx: usize, ry: usize, family: Family) -> Theta {
    let w = orthonormal(&normal_matrix(rng, p, r));
    let w_perp = orthonormal(&normal_matrix(rng, p, rx));
    let c = orthonormal(&normal_matrix(rng, q, r));
    let c_perp = orthonormal(&normal_matrix(rng, q, ry));
    let a0 = match family {
        Family::Gaussian => 0.0,
        Family::Bernoulli => 0.5 * rng.sample::<f64, _>(StandardNormal),
    };
    Theta {
        w,
        w_perp,
        c,
        c_perp,
        b_tu: uniform_vec(rng, r, 0.5, 1.5),
        sigma_t: uniform_vec(rng, r, 0.5, 2.0),
        sigma_tperp: uniform_vec(rng, rx, 0.3, 1.5),
        sigma_uperp: uniform_vec(rng, ry, 0.3, 1.5),
        sigma_h: uniform_vec(rng, r, 0.3, 1.5),
        sigma_e2: rng.random_range(0.2..1.0),
        sigma_f2: rng.random_range(0.2..1.0),
        a: normal_matrix(rng, r, 1).column(0).into_owned(),
        b: normal_matrix(rng, r, 1).column(0).into_owned(),
        a0,
        sigma_g2: match family {
            Family::Gaussian => rng.random_range(0.3..1.0),
            Family::Bernoulli => 1.0,
        },
        family,
    }
}

/// Latent draws behind a simulated data set.
pub struct Latents {
    pub t: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub t_perp: DMatrix<f64>,
    pub u_perp: DMatrix<f64>,
}

fn scaled_normals(rng: &mut ChaCha8Rng, n: usize, var: &DVector<f64>) -> DMatrix<f64> {
    let mut m = normal_matrix(rng, n, var.len());
    for (k, v) in var.iter().enumerate() {
        m.column_mut(k).scale_mut(v.sqrt());
    }
    m
}

/// Draws `n` rows straight from the generative model (no centring).
pub fn simulate(theta: &Theta, n: usize, rng: &mut ChaCha8Rng) -> (DataSet, Latents) {
    let (p, q, r) = (theta.w.nrows(), theta.c.nrows(), theta.w.ncols());
    let t = scaled_normals(rng, n, &theta.sigma_t);
    let h = scaled_normals(rng, n, &theta.sigma_h);
    let t_perp = scaled_normals(rng, n, &theta.sigma_tperp);
    let u_perp = scaled_normals(rng, n, &theta.sigma_uperp);
    let u = &t * DMatrix::from_diagonal(&theta.b_tu) + &h;
    let x = &t * theta.w.transpose() + &t_perp * theta.w_perp.transpose() + normal_matrix(rng, n, p) * theta.sigma_e2.sqrt();
    let y = &u * theta.c.transpose() + &u_perp * theta.c_perp.transpose() + normal_matrix(rng, n, q) * theta.sigma_f2.sqrt();
    let eta = DVector::from_fn(n, |i, _| {
        theta.a0 + (0..r).map(|k| t[(i, k)] * theta.a[k] + h[(i, k)] * theta.b[k]).sum::<f64>()
    });
    let z = match theta.family {
        Family::Gaussian => DVector::from_fn(n, |i, _| eta[i] + theta.sigma_g2.sqrt() * rng.sample::<f64, _>(StandardNormal)),
        Family::Bernoulli => DVector::from_fn(n, |i, _| {
            let pr = 1.0 / (1.0 + (-eta[i]).exp());
            f64::from(u8::from(rng.random::<f64>() < pr))
        }),
    };
    let data = DataSet::new(x, y, z, theta.family).unwrap();
    (data, Latents { t, h, u, t_perp, u_perp })
}

/// The model written as `obs = A ξ + noise` with independent
/// `ξ = (t, h, t_perp, u_perp)`, and `latent = M ξ` for
/// `latent = (t, u, t_perp, u_perp)`.
pub struct DenseModel {
    pub a: DMatrix<f64>,
    pub xi_var: DVector<f64>,
    pub noise: DVector<f64>,
    pub m: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl DenseModel {
    pub fn new(theta: &Theta, with_z: bool) -> Self {
        let (p, q, r) = (theta.w.nrows(), theta.c.nrows(), theta.w.ncols());
        let (rx, ry) = (theta.w_perp.ncols(), theta.c_perp.ncols());
        let k = 2 * r + rx + ry;
        let d = p + q + usize::from(with_z);
        let mut a = DMatrix::zeros(d, k);
        a.view_mut((0, 0), (p, r)).copy_from(&theta.w);
        a.view_mut((0, 2 * r), (p, rx)).copy_from(&theta.w_perp);
        a.view_mut((p, 0), (q, r)).copy_from(&(&theta.c * DMatrix::from_diagonal(&theta.b_tu)));
        a.view_mut((p, r), (q, r)).copy_from(&theta.c);
        a.view_mut((p, 2 * r + rx), (q, ry)).copy_from(&theta.c_perp);
        let mut noise = DVector::from_element(d, theta.sigma_e2);
        noise.rows_mut(p, q).fill(theta.sigma_f2);
        let mut offset = DVector::zeros(d);
        if with_z {
            for j in 0..r {
                a[(d - 1, j)] = theta.a[j];
                a[(d - 1, r + j)] = theta.b[j];
            }
            noise[d - 1] = theta.sigma_g2;
            offset[d - 1] = theta.a0;
        }
        let mut xi_var = DVector::zeros(k);
        xi_var.rows_mut(0, r).copy_from(&theta.sigma_t);
        xi_var.rows_mut(r, r).copy_from(&theta.sigma_h);
        xi_var.rows_mut(2 * r, rx).copy_from(&theta.sigma_tperp);
        xi_var.rows_mut(2 * r + rx, ry).copy_from(&theta.sigma_uperp);
        let mut m = DMatrix::identity(k, k);
        for j in 0..r {
            m[(r + j, j)] = theta.b_tu[j];
        }
        DenseModel { a, xi_var, noise, m, offset }
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.a * DMatrix::from_diagonal(&self.xi_var) * self.a.transpose() + DMatrix::from_diagonal(&self.noise)
    }

    pub fn latent_cov(&self) -> DMatrix<f64> {
        &self.m * DMatrix::from_diagonal(&self.xi_var) * self.m.transpose()
    }

    /// `Cov(latent, obs)`.
    pub fn cross_cov(&self) -> DMatrix<f64> {
        &self.m * DMatrix::from_diagonal(&self.xi_var) * self.a.transpose()
    }

    /// Sum over rows of the textbook multivariate normal log-density.
    pub fn log_likelihood(&self, obs: &DMatrix<f64>) -> f64 {
        let sigma = self.cov();
        let d = sigma.nrows() as f64;
        let chol = sigma.cholesky().expect("covariance is positive definite");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        obs.row_iter()
            .map(|row| {
                let o = row.transpose() - &self.offset;
                let quad = o.dot(&chol.solve(&o));
                -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
            })
            .sum()
    }

    /// Conditional mean rows and the shared conditional covariance.
    pub fn condition(&self, obs: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let sigma = self.cov();
        let inv = sigma.try_inverse().expect("invertible");
        let gain = self.cross_cov() * inv;
        let centred = DMatrix::from_fn(obs.nrows(), obs.ncols(), |i, j| obs[(i, j)] - self.offset[j]);
        let mean = centred * gain.transpose();
        let cov = self.latent_cov() - &gain * self.cross_cov().transpose();
        (mean, cov)
    }
}

/// `[x y z]` or `[x y]` as one matrix.
pub fn stacked(data: &DataSet, with_z: bool) -> DMatrix<f64> {
    let (n, p, q) = (data.n(), data.p(), data.q());
    let d = p + q + usize::from(with_z);
    let mut o = DMatrix::zeros(n, d);
    o.view_mut((0, 0), (n, p)).copy_from(&data.x);
    o.view_mut((0, p), (n, q)).copy_from(&data.y);
    if with_z {
        o.set_column(p + q, &data.z);
    }
    o
}

/// Gaussian log-density with a dense covariance, via its Cholesky factor.
struct DenseNormal {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    constant: f64,
}

impl DenseNormal {
    fn new(cov: DMatrix<f64>) -> Self {
        let d = cov.nrows() as f64;
        let chol = cov.cholesky().expect("positive definite");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        DenseNormal {
            chol,
            constant: -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet),
        }
    }

    fn log_density(&self, resid: &DVector<f64>) -> f64 {
        self.constant - 0.5 * resid.dot(&self.chol.solve(resid))
    }
}

/// Pieces of the Bernoulli-model integrand `p(z|ν) f(x|t) f(y|u)` with
/// `ν = (t, u)` drawn from its prior.
pub struct BinaryIntegrand<'a> {
    theta: &'a Theta,
    fx: DenseNormal,
    fy: DenseNormal,
}

impl<'a> BinaryIntegrand<'a> {
    pub fn new(theta: &'a Theta) -> Self {
        let (p, q) = (theta.w.nrows(), theta.c.nrows());
        let sx = &theta.w_perp * DMatrix::from_diagonal(&theta.sigma_tperp) * theta.w_perp.transpose()
            + DMatrix::identity(p, p) * theta.sigma_e2;
        let sy = &theta.c_perp * DMatrix::from_diagonal(&theta.sigma_uperp) * theta.c_perp.transpose()
            + DMatrix::identity(q, q) * theta.sigma_f2;
        BinaryIntegrand {
            theta,
            fx: DenseNormal::new(sx),
            fy: DenseNormal::new(sy),
        }
    }

    /// One prior draw of `ν = (t, u)`.
    pub fn draw_nu(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let r = self.theta.sigma_t.len();
        let mut nu = DVector::zeros(2 * r);
        for k in 0..r {
            let t = self.theta.sigma_t[k].sqrt() * rng.sample::<f64, _>(StandardNormal);
            let h = self.theta.sigma_h[k].sqrt() * rng.sample::<f64, _>(StandardNormal);
            nu[k] = t;
            nu[r + k] = self.theta.b_tu[k] * t + h;
        }
        nu
    }

    /// `log p(z_i|ν) + log f(x_i|t) + log f(y_i|u)`.
    pub fn log_integrand(&self, data: &DataSet, i: usize, nu: &DVector<f64>) -> f64 {
        let th = self.theta;
        let r = th.sigma_t.len();
        let t = nu.rows(0, r);
        let u = nu.rows(r, r);
        let mut eta = th.a0;
        for k in 0..r {
            eta += t[k] * th.a[k] + (u[k] - t[k] * th.b_tu[k]) * th.b[k];
        }
        let pr = 1.0 / (1.0 + (-eta).exp());
        let lz = if data.z[i] == 1.0 { pr.ln() } else { (1.0 - pr).ln() };
        let rx = data.x.row(i).transpose() - &th.w * t;
        let ry = data.y.row(i).transpose() - &th.c * u;
        lz + self.fx.log_density(&rx) + self.fy.log_density(&ry)
    }
}

/// Monte-Carlo estimate of the Bernoulli-model log-likelihood with fresh
/// prior draws per observation; returns the estimate and its delta-method
/// standard error.
pub fn mc_binary_loglik(theta: &Theta, data: &DataSet, draws: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let f = BinaryIntegrand::new(theta);
    let mut total = 0.0;
    let mut var = 0.0;
    let mut logs = vec![0.0; draws];
    for i in 0..data.n() {
        for v in logs.iter_mut() {
            *v = f.log_integrand(data, i, &f.draw_nu(rng));
        }
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in &logs {
            let w = (v - shift).exp();
            s1 += w;
            s2 += w * w;
        }
        let k = draws as f64;
        let mean = s1 / k;
        let sd = (s2 / k - mean * mean).max(0.0).sqrt();
        total += mean.ln() + shift;
        var += (sd / (k.sqrt() * mean)).powi(2);
    }
    (total, var.sqrt())
}

/// Self-normalised importance-sampling estimate (prior proposal) of
/// `E[ν | x_i, y_i, z_i]` and `E[ννᵀ | ·]` with their standard errors.
pub struct IsMoments {
    pub mean: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub second: DMatrix<f64>,
    pub second_se: DMatrix<f64>,
}

pub fn is_binary_moments(theta: &Theta, data: &DataSet, i: usize, draws: usize, rng: &mut ChaCha8Rng) -> IsMoments {
    let f = BinaryIntegrand::new(theta);
    let nus: Vec<DVector<f64>> = (0..draws).map(|_| f.draw_nu(rng)).collect();
    let logs: Vec<f64> = nus.iter().map(|nu| f.log_integrand(data, i, nu)).collect();
    let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|v| (v - shift).exp()).collect();
    let sw: f64 = w.iter().sum();
    let d = nus[0].len();
    let estimate = |phi: &dyn Fn(&DVector<f64>) -> f64| -> (f64, f64) {
        let mu = nus.iter().zip(&w).map(|(nu, wk)| wk * phi(nu)).sum::<f64>() / sw;
        let v = nus.iter().zip(&w).map(|(nu, wk)| (wk * (phi(nu) - mu)).powi(2)).sum::<f64>();
        (mu, v.sqrt() / sw)
    };
    let mut out = IsMoments {
        mean: DVector::zeros(d),
        mean_se: DVector::zeros(d),
        second: DMatrix::zeros(d, d),
        second_se: DMatrix::zeros(d, d),
    };
    for j in 0..d {
        let (m, se) = estimate(&|nu| nu[j]);
        out.mean[j] = m;
        out.mean_se[j] = se;
        for l in 0..d {
            let (m, se) = estimate(&|nu| nu[j] * nu[l]);
            out.second[(j, l)] = m;
            out.second_se[(j, l)] = se;
        }
    }
    out
}

/// Unconstrained coordinates of a parameter set: raw loading blocks, each
/// orthonormalised on its own on the way back, logs of all variances and of `B`,
/// and the outcome coefficients.
#[derive(Clone, Copy)]
pub struct Layout {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub rx: usize,
    pub ry: usize,
    pub family: Family,
}

impl Layout {
    pub fn of(theta: &Theta) -> Self {
        Layout {
            p: theta.w.nrows(),
            q: theta.c.nrows(),
            r: theta.w.ncols(),
            rx: theta.w_perp.ncols(),
            ry: theta.c_perp.ncols(),
            family: theta.family,
        }
    }

    pub fn pack(&self, theta: &Theta) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(theta.w.iter());
        v.extend(theta.w_perp.iter());
        v.extend(theta.c.iter());
        v.extend(theta.c_perp.iter());
        for var in [&theta.sigma_t, &theta.sigma_h, &theta.b_tu, &theta.sigma_tperp, &theta.sigma_uperp] {
            v.extend(var.iter().map(|x| x.ln()));
        }
        v.push(theta.sigma_e2.ln());
        v.push(theta.sigma_f2.ln());
        v.extend(theta.a.iter());
        v.extend(theta.b.iter());
        match self.family {
            Family::Gaussian => v.push(theta.sigma_g2.ln()),
            Family::Bernoulli => v.push(theta.a0),
        }
        v
    }

    pub fn unpack(&self, v: &[f64]) -> Theta {
        let Layout { p, q, r, rx, ry, family } = *self;
        let mut pos = 0;
        let mut take = |k: usize| {
            let s = &v[pos..pos + k];
            pos += k;
            s.to_vec()
        };
        let mut block = |rows: usize, cols: usize| orthonormal(&DMatrix::from_column_slice(rows, cols, &take(rows * cols)));
        let w = block(p, r);
        let w_perp = block(p, rx);
        let c = block(q, r);
        let c_perp = block(q, ry);
        let mut exp_vec = |k: usize| DVector::from_vec(take(k).iter().map(|x| x.exp()).collect());
        let sigma_t = exp_vec(r);
        let sigma_h = exp_vec(r);
        let b_tu = exp_vec(r);
        let sigma_tperp = exp_vec(rx);
        let sigma_uperp = exp_vec(ry);
        let sigma_e2 = exp_vec(1)[0];
        let sigma_f2 = exp_vec(1)[0];
        let a = DVector::from_vec(take(r));
        let b = DVector::from_vec(take(r));
        let last = take(1)[0];
        let (a0, sigma_g2) = match family {
            Family::Gaussian => (0.0, last.exp()),
            Family::Bernoulli => (last, 1.0),
        };
        Theta {
            w,
            w_perp,
            c,
            c_perp,
            b_tu,
            sigma_t,
            sigma_tperp,
            sigma_uperp,
            sigma_h,
            sigma_e2,
            sigma_f2,
            a,
            b,
            a0,
            sigma_g2,
            family,
        }
    }
}

struct Negated<'a> {
    objective: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

impl Negated<'_> {
    fn eval(&self, v: &[f64]) -> f64 {
        let value = (self.objective)(v);
        if value.is_finite() {
            -value
        } else {
            1e100
        }
    }
}

impl CostFunction for Negated<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Vec<f64>) -> Result<f64, Error> {
        Ok(self.eval(v))
    }
}

impl Gradient for Negated<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, v: &Vec<f64>) -> Result<Vec<f64>, Error> {
        let f = |x: &Vec<f64>| -> Result<f64, Error> { Ok(self.eval(x)) };
        let grad = finitediff::vec::central_diff(&f);
        grad(v)
    }
}

/// Maximises `objective` with L-BFGS (central-difference gradients).
pub fn maximize_vec(start: Vec<f64>, objective: &(dyn Fn(&[f64]) -> f64 + Sync), max_iters: u64) -> (Vec<f64>, f64) {
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(1e-7)
        .unwrap()
        .with_tolerance_cost(1e-13)
        .unwrap();
    let res = Executor::new(Negated { objective }, solver)
        .configure(|s| s.param(start).max_iters(max_iters))
        .run()
        .expect("optimizer runs");
    let best = res.state.best_param.clone().expect("best parameter");
    (best, -res.state.best_cost)
}

/// Maximises `objective` over all parameters, starting from `start`.
pub fn maximize(start: &Theta, objective: &(dyn Fn(&Theta) -> f64 + Sync), max_iters: u64) -> (Theta, f64) {
    let layout = Layout::of(start);
    let f = |v: &[f64]| objective(&layout.unpack(v));
    let (best, value) = maximize_vec(layout.pack(start), &f, max_iters);
    (layout.unpack(&best), value)
}

/// Entrywise largest absolute difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
