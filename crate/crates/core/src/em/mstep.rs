use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DataSet, LatentMoments, Theta, VARIANCE_FLOOR};

/// Lower clip applied to each diagonal entry of `B`.
pub(crate) const B_MIN: f64 = 1e-8;

/// Updated two-block parameters; outcome parameters are handled separately.
#[derive(Debug, Clone, PartialEq)]
pub struct Po2plsBlocks {
    pub w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub w_perp: DMatrix<f64>,
    pub c_perp: DMatrix<f64>,
    pub b_tu: DVector<f64>,
    pub sigma_t: DVector<f64>,
    pub sigma_h: DVector<f64>,
    pub sigma_tperp: DVector<f64>,
    pub sigma_uperp: DVector<f64>,
    pub sigma_e2: f64,
    pub sigma_f2: f64,
}

impl Po2plsBlocks {
    /// `theta` with its two-block parameters replaced.
    pub fn apply(self, theta: &Theta) -> Theta {
        Theta {
            w: self.w,
            c: self.c,
            w_perp: self.w_perp,
            c_perp: self.c_perp,
            b_tu: self.b_tu,
            sigma_t: self.sigma_t,
            sigma_h: self.sigma_h,
            sigma_tperp: self.sigma_tperp,
            sigma_uperp: self.sigma_uperp,
            sigma_e2: self.sigma_e2,
            sigma_f2: self.sigma_f2,
            ..theta.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeUpdate {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub sigma_g2: f64,
}

fn block(s: &DMatrix<f64>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    s.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

fn cols(m: &DMatrix<f64>, range: std::ops::Range<usize>) -> DMatrix<f64> {
    m.columns(range.start, range.len()).into_owned()
}

/// Maximises the loading, latent-variance and residual-variance terms of
/// the expected complete-data log-likelihood.
///
/// `W` and `W_perp` are semi-orthogonal Procrustes solutions (polar factor
/// of the cross-moment, corrected for the other block), updated in turn;
/// the same for `C` and `C_perp`. Variances are conditional-moment averages.
pub fn m_step_po2pls_blocks(
    moments: &LatentMoments,
    data: &DataSet,
    theta_prev: &Theta,
) -> Result<Po2plsBlocks> {
    let n = data.n();
    if moments.n() != n || moments.r != theta_prev.r() {
        return Err(Error::DimensionMismatch(format!(
            "moments cover {} observations and r={}, data has {n}, theta has r={}",
            moments.n(),
            moments.r,
            theta_prev.r()
        )));
    }
    let nf = n as f64;
    let (p, q) = (data.p() as f64, data.q() as f64);
    let s = moments.second_moment_sum();
    let (rt, ru, rtp, rup) = (
        moments.t_range(),
        moments.u_range(),
        moments.tperp_range(),
        moments.uperp_range(),
    );

    let xtm = data.x.transpose() * &moments.mean;
    let ytm = data.y.transpose() * &moments.mean;

    let (w, w_perp, sigma_e2) = update_block(
        &cols(&xtm, rt.clone()),
        &cols(&xtm, rtp.clone()),
        &block(&s, rt.clone(), rt.clone()),
        &block(&s, rtp.clone(), rtp.clone()),
        &block(&s, rt.clone(), rtp.clone()),
        &theta_prev.w_perp,
        data.x.norm_squared(),
        nf * p,
        ("W", "W_perp"),
    )?;
    let (c, c_perp, sigma_f2) = update_block(
        &cols(&ytm, ru.clone()),
        &cols(&ytm, rup.clone()),
        &block(&s, ru.clone(), ru.clone()),
        &block(&s, rup.clone(), rup.clone()),
        &block(&s, ru.clone(), rup.clone()),
        &theta_prev.c_perp,
        data.y.norm_squared(),
        nf * q,
        ("C", "C_perp"),
    )?;

    let r = moments.r;
    let mut b_tu = DVector::zeros(r);
    let mut sigma_t = DVector::zeros(r);
    let mut sigma_h = DVector::zeros(r);
    for k in 0..r {
        let stt = s[(rt.start + k, rt.start + k)];
        let stu = s[(rt.start + k, ru.start + k)];
        let suu = s[(ru.start + k, ru.start + k)];
        let bk = (stu / stt).max(B_MIN);
        b_tu[k] = bk;
        sigma_t[k] = stt / nf;
        sigma_h[k] = (suu - 2.0 * bk * stu + bk * bk * stt) / nf;
    }
    let sigma_tperp = DVector::from_iterator(rtp.len(), rtp.clone().map(|j| s[(j, j)] / nf));
    let sigma_uperp = DVector::from_iterator(rup.len(), rup.clone().map(|j| s[(j, j)] / nf));

    Ok(Po2plsBlocks {
        w,
        c,
        w_perp,
        c_perp,
        b_tu,
        sigma_t,
        sigma_h,
        sigma_tperp,
        sigma_uperp,
        sigma_e2,
        sigma_f2,
    })
}

/// One observed block: `x = t Wᵀ + t_perp W_perpᵀ + e`.
#[allow(clippy::too_many_arguments)]
fn update_block(
    xt_mean_joint: &DMatrix<f64>,
    xt_mean_spec: &DMatrix<f64>,
    s_jj: &DMatrix<f64>,
    s_ss: &DMatrix<f64>,
    s_js: &DMatrix<f64>,
    spec_prev: &DMatrix<f64>,
    sum_sq: f64,
    count: f64,
    names: (&str, &str),
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let joint = linalg::polar_factor(&(xt_mean_joint - spec_prev * s_js.transpose()), names.0)?;
    let spec = if xt_mean_spec.ncols() == 0 {
        xt_mean_spec.clone()
    } else {
        linalg::polar_factor(&(xt_mean_spec - &joint * s_js), names.1)?
    };
    let rss = residual_sum_of_squares(&joint, &spec, xt_mean_joint, xt_mean_spec, s_jj, s_ss, s_js, sum_sq);
    Ok((joint, spec, rss / count))
}

/// `Σ_i E‖x_i − t_i Wᵀ − t_perp,i W_perpᵀ‖²` from the conditional moments.
#[allow(clippy::too_many_arguments)]
fn residual_sum_of_squares(
    joint: &DMatrix<f64>,
    spec: &DMatrix<f64>,
    xt_mean_joint: &DMatrix<f64>,
    xt_mean_spec: &DMatrix<f64>,
    s_jj: &DMatrix<f64>,
    s_ss: &DMatrix<f64>,
    s_js: &DMatrix<f64>,
    sum_sq: f64,
) -> f64 {
    let lin = (joint.transpose() * xt_mean_joint).trace() + (spec.transpose() * xt_mean_spec).trace();
    let quad = (joint.transpose() * joint * s_jj).trace()
        + (spec.transpose() * spec * s_ss).trace()
        + 2.0 * (spec.transpose() * joint * s_js).trace();
    sum_sq - 2.0 * lin + quad
}

/// Linear map from `(t, u, t_perp, u_perp)` to `(t, h)` with `h = u − tB`.
pub(crate) fn th_transform(moments: &LatentMoments, b_tu: &DVector<f64>) -> DMatrix<f64> {
    let r = moments.r;
    let mut m = DMatrix::zeros(moments.dim(), 2 * r);
    for k in 0..r {
        m[(k, k)] = 1.0;
        m[(r + k, r + k)] = 1.0;
        m[(k, r + k)] = -b_tu[k];
    }
    m
}

/// Closed-form maximiser of the outcome term: `(a, b)` solve the normal
/// equations `E[(t,h)ᵀ(t,h)] (a,b)ᵀ = E[(t,h)]ᵀ z`, with `h = u − tB`
/// formed from `b_tu`, and `σ_g²` is the mean expected squared residual.
pub fn m_step_outcome(moments: &LatentMoments, z: &DVector<f64>, b_tu: &DVector<f64>) -> Result<OutcomeUpdate> {
    if z.len() != moments.n() || b_tu.len() != moments.r {
        return Err(Error::DimensionMismatch(format!(
            "outcome has {} entries and B has {}, moments cover {} observations with r={}",
            z.len(),
            b_tu.len(),
            moments.n(),
            moments.r
        )));
    }
    let tr = th_transform(moments, b_tu);
    let s_th = tr.transpose() * moments.second_moment_sum() * &tr;
    let m_th = &moments.mean * &tr;
    let rhs = m_th.transpose() * z;
    outcome_from_normal_equations(&s_th, &rhs, z.norm_squared(), z.len())
}

pub(crate) fn outcome_from_normal_equations(
    s_th: &DMatrix<f64>,
    rhs: &DVector<f64>,
    z_sq: f64,
    n: usize,
) -> Result<OutcomeUpdate> {
    let r = rhs.len() / 2;
    let mut s = s_th.clone();
    linalg::symmetrize(&mut s);
    let chol = s.clone().cholesky().ok_or_else(|| {
        Error::Singular(
            "E[(t,h)ᵀ(t,h)] is singular: the t and h scores are (nearly) collinear".into(),
        )
    })?;
    let alpha = chol.solve(rhs);
    let rss = z_sq - 2.0 * alpha.dot(rhs) + (alpha.transpose() * &s * &alpha)[(0, 0)];
    let sigma_g2 = rss / n as f64;
    if !(sigma_g2 >= VARIANCE_FLOOR) {
        return Err(Error::VarianceFloor {
            name: "sigma_g2".into(),
            value: sigma_g2,
            floor: VARIANCE_FLOOR,
        });
    }
    Ok(OutcomeUpdate {
        a: alpha.rows(0, r).into_owned(),
        b: alpha.rows(r, r).into_owned(),
        sigma_g2,
    })
}

/// Terms of `Q(θ | θ')`: expectations under the moments of `θ'`,
/// parameters from `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedLoglik {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u_given_t: f64,
    pub t: f64,
    pub tperp: f64,
    pub uperp: f64,
}

impl ExpectedLoglik {
    pub fn total(&self) -> f64 {
        self.x + self.y + self.z + self.u_given_t + self.t + self.tperp + self.uperp
    }
}

/// Evaluates every term of the expected complete-data log-likelihood of
/// the Gaussian-outcome model. The outcome term uses `h = u − tB` with the
/// `B` of `theta`.
pub fn expected_complete_loglik(
    theta: &Theta,
    moments: &LatentMoments,
    data: &DataSet,
) -> Result<ExpectedLoglik> {
    data.check_theta(theta)?;
    let n = data.n() as f64;
    let s = moments.second_moment_sum();
    let (rt, ru, rtp, rup) = (
        moments.t_range(),
        moments.u_range(),
        moments.tperp_range(),
        moments.uperp_range(),
    );
    let xtm = data.x.transpose() * &moments.mean;
    let ytm = data.y.transpose() * &moments.mean;
    let gauss = |rss: f64, count: f64, var: f64| -0.5 * (count * (2.0 * PI * var).ln() + rss / var);

    let rss_x = residual_sum_of_squares(
        &theta.w,
        &theta.w_perp,
        &cols(&xtm, rt.clone()),
        &cols(&xtm, rtp.clone()),
        &block(&s, rt.clone(), rt.clone()),
        &block(&s, rtp.clone(), rtp.clone()),
        &block(&s, rt.clone(), rtp.clone()),
        data.x.norm_squared(),
    );
    let rss_y = residual_sum_of_squares(
        &theta.c,
        &theta.c_perp,
        &cols(&ytm, ru.clone()),
        &cols(&ytm, rup.clone()),
        &block(&s, ru.clone(), ru.clone()),
        &block(&s, rup.clone(), rup.clone()),
        &block(&s, ru.clone(), rup.clone()),
        data.y.norm_squared(),
    );

    let tr = th_transform(moments, &theta.b_tu);
    let s_th = tr.transpose() * &s * &tr;
    let m_th = &moments.mean * &tr;
    let alpha = theta.alpha();
    let rss_z = data.z.norm_squared() - 2.0 * alpha.dot(&(m_th.transpose() * &data.z))
        + (alpha.transpose() * &s_th * &alpha)[(0, 0)];

    let mut u_given_t = 0.0;
    let mut t_term = 0.0;
    for k in 0..theta.r() {
        let (tk, uk) = (rt.start + k, ru.start + k);
        let bk = theta.b_tu[k];
        let rss_h = s[(uk, uk)] - 2.0 * bk * s[(tk, uk)] + bk * bk * s[(tk, tk)];
        u_given_t += gauss(rss_h, n, theta.sigma_h[k]);
        t_term += gauss(s[(tk, tk)], n, theta.sigma_t[k]);
    }
    let tperp = rtp
        .clone()
        .enumerate()
        .map(|(j, idx)| gauss(s[(idx, idx)], n, theta.sigma_tperp[j]))
        .sum();
    let uperp = rup
        .clone()
        .enumerate()
        .map(|(j, idx)| gauss(s[(idx, idx)], n, theta.sigma_uperp[j]))
        .sum();

    Ok(ExpectedLoglik {
        x: gauss(rss_x, n * data.p() as f64, theta.sigma_e2),
        y: gauss(rss_y, n * data.q() as f64, theta.sigma_f2),
        z: gauss(rss_z, n, theta.sigma_g2),
        u_given_t,
        t: t_term,
        tperp,
        uperp,
    })
}
