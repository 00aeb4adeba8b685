use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{DataSet, Family, LatentCov, LatentMoments, Theta};
use crate::error::{Error, Result};
use crate::linalg;

/// Exact Gaussian conditioning of the latent vector on observed blocks.
///
/// Internally the latent vector is `ζ = (t, h, t_perp, u_perp)`, whose prior
/// covariance is diagonal; observations are `ζ Λᵀ + noise` with diagonal
/// noise. Results are mapped to `(t, u, t_perp, u_perp)` with `u = tB + h`.
pub(crate) struct GaussianConditioner {
    r: usize,
    r_x: usize,
    r_y: usize,
    lambda_x: DMatrix<f64>,
    lambda_y: DMatrix<f64>,
    lambda_z: Option<DVector<f64>>,
    sigma_e2: f64,
    sigma_f2: f64,
    sigma_g2: f64,
    capacitance: Cholesky<f64, Dyn>,
    post_cov: DMatrix<f64>,
    logdet_sigma: f64,
    to_latent: DMatrix<f64>,
}

impl GaussianConditioner {
    pub(crate) fn new(theta: &Theta, with_z: bool) -> Result<Self> {
        theta.check_shapes()?;
        let (p, q, r, r_x, r_y) = (theta.p(), theta.q(), theta.r(), theta.r_x(), theta.r_y());
        let k = 2 * r + r_x + r_y;

        let mut prior = Vec::with_capacity(k);
        let groups = [
            ("Sigma_t", &theta.sigma_t),
            ("Sigma_h", &theta.sigma_h),
            ("Sigma_tperp", &theta.sigma_tperp),
            ("Sigma_uperp", &theta.sigma_uperp),
        ];
        for (name, v) in groups {
            for (j, &s) in v.iter().enumerate() {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::NumericalDomain(format!(
                        "covariance not positive definite: {name}[{j}] = {s:e}"
                    )));
                }
                prior.push(s);
            }
        }
        let mut noise = vec![("sigma_e2", theta.sigma_e2), ("sigma_f2", theta.sigma_f2)];
        if with_z {
            noise.push(("sigma_g2", theta.sigma_g2));
        }
        for (name, s) in noise {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::NumericalDomain(format!(
                    "covariance not positive definite: {name} = {s:e}"
                )));
            }
        }

        let mut lambda_x = DMatrix::zeros(p, k);
        lambda_x.view_mut((0, 0), (p, r)).copy_from(&theta.w);
        lambda_x.view_mut((0, 2 * r), (p, r_x)).copy_from(&theta.w_perp);

        let mut lambda_y = DMatrix::zeros(q, k);
        for j in 0..r {
            lambda_y.column_mut(j).copy_from(&(theta.c.column(j) * theta.b_tu[j]));
        }
        lambda_y.view_mut((0, r), (q, r)).copy_from(&theta.c);
        lambda_y.view_mut((0, 2 * r + r_x), (q, r_y)).copy_from(&theta.c_perp);

        let lambda_z = with_z.then(|| {
            let mut v = DVector::zeros(k);
            v.rows_mut(0, r).copy_from(&theta.a);
            v.rows_mut(r, r).copy_from(&theta.b);
            v
        });

        let mut cap = DMatrix::from_diagonal(&DVector::from_iterator(k, prior.iter().map(|s| 1.0 / s)));
        cap += lambda_x.transpose() * &lambda_x / theta.sigma_e2;
        cap += lambda_y.transpose() * &lambda_y / theta.sigma_f2;
        if let Some(lz) = &lambda_z {
            cap += lz * lz.transpose() / theta.sigma_g2;
        }
        linalg::symmetrize(&mut cap);
        let capacitance = Cholesky::new(cap).ok_or_else(|| {
            Error::NumericalDomain(format!(
                "covariance not positive definite (sigma_e2={:e}, sigma_f2={:e}, sigma_g2={:e})",
                theta.sigma_e2, theta.sigma_f2, theta.sigma_g2
            ))
        })?;
        let mut post_cov = capacitance.inverse();
        linalg::symmetrize(&mut post_cov);

        let mut logdet_sigma = p as f64 * theta.sigma_e2.ln()
            + q as f64 * theta.sigma_f2.ln()
            + prior.iter().map(|s| s.ln()).sum::<f64>()
            + linalg::logdet(&capacitance);
        if with_z {
            logdet_sigma += theta.sigma_g2.ln();
        }

        let mut to_latent = DMatrix::identity(k, k);
        for j in 0..r {
            to_latent[(j, r + j)] = theta.b_tu[j];
        }

        Ok(GaussianConditioner {
            r,
            r_x,
            r_y,
            lambda_x,
            lambda_y,
            lambda_z,
            sigma_e2: theta.sigma_e2,
            sigma_f2: theta.sigma_f2,
            sigma_g2: theta.sigma_g2,
            capacitance,
            post_cov,
            logdet_sigma,
            to_latent,
        })
    }

    fn obs_dim(&self) -> usize {
        self.lambda_x.nrows() + self.lambda_y.nrows() + usize::from(self.lambda_z.is_some())
    }

    /// Rows `o_i D⁻¹ Λ`.
    fn projected(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, z: Option<&DVector<f64>>) -> DMatrix<f64> {
        let mut pi = x * &self.lambda_x / self.sigma_e2;
        pi += y * &self.lambda_y / self.sigma_f2;
        if let (Some(lz), Some(z)) = (&self.lambda_z, z) {
            pi += z * lz.transpose() / self.sigma_g2;
        }
        pi
    }

    /// Log-density of each row of `(x, y, z)`.
    pub(crate) fn log_likelihood_rows(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, z: Option<&DVector<f64>>) -> DVector<f64> {
        let pi = self.projected(x, y, z);
        let solved = self.capacitance.solve(&pi.transpose());
        let constant = self.obs_dim() as f64 * (2.0 * std::f64::consts::PI).ln() + self.logdet_sigma;
        DVector::from_fn(x.nrows(), |i, _| {
            let mut quad = x.row(i).norm_squared() / self.sigma_e2 + y.row(i).norm_squared() / self.sigma_f2;
            if let (Some(_), Some(z)) = (&self.lambda_z, z) {
                quad += z[i] * z[i] / self.sigma_g2;
            }
            quad -= pi.row(i).dot(&solved.column(i).transpose());
            -0.5 * (constant + quad)
        })
    }

    pub(crate) fn log_likelihood(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, z: Option<&DVector<f64>>) -> f64 {
        let n = x.nrows() as f64;
        let pi = self.projected(x, y, z);
        let solved = self.capacitance.solve(&pi.transpose());
        let correction = pi.transpose().component_mul(&solved).sum();
        let mut quad = x.norm_squared() / self.sigma_e2 + y.norm_squared() / self.sigma_f2;
        if let (Some(_), Some(z)) = (&self.lambda_z, z) {
            quad += z.norm_squared() / self.sigma_g2;
        }
        quad -= correction;
        -0.5 * (n * self.obs_dim() as f64 * (2.0 * std::f64::consts::PI).ln()
            + n * self.logdet_sigma
            + quad)
    }

    pub(crate) fn moments(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, z: Option<&DVector<f64>>) -> LatentMoments {
        let pi = self.projected(x, y, z);
        let mean_zeta = pi * &self.post_cov;
        let mean = mean_zeta * &self.to_latent;
        let mut cov = self.to_latent.transpose() * &self.post_cov * &self.to_latent;
        linalg::symmetrize(&mut cov);
        LatentMoments {
            r: self.r,
            r_x: self.r_x,
            r_y: self.r_y,
            mean,
            cov: LatentCov::Shared(cov),
        }
    }
}

/// `E[(t,u,t_perp,u_perp) | x, y, z]` and the (data-independent)
/// conditional covariance under the Gaussian-outcome model.
pub fn conditional_latent_moments(theta: &Theta, data: &DataSet) -> Result<LatentMoments> {
    if theta.family != Family::Gaussian || data.family != Family::Gaussian {
        return Err(Error::InvalidArgument(
            "conditioning on z requires the gaussian family".into(),
        ));
    }
    data.check_theta(theta)?;
    let cond = GaussianConditioner::new(theta, true)?;
    Ok(cond.moments(&data.x, &data.y, Some(&data.z)))
}

/// Latent moments given `(x, y)` only; `z` is marginalised out.
pub fn conditional_moments_given_xy(
    theta: &Theta,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<LatentMoments> {
    check_xy(theta, x, y)?;
    let cond = GaussianConditioner::new(theta, false)?;
    Ok(cond.moments(x, y, None))
}

/// Marginal log-likelihood of `(x, y)` under the two-block part of the model.
pub fn log_likelihood_xy(theta: &Theta, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_xy(theta, x, y)?;
    let cond = GaussianConditioner::new(theta, false)?;
    Ok(cond.log_likelihood(x, y, None))
}

fn check_xy(theta: &Theta, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    theta.check_shapes()?;
    if x.ncols() != theta.p() || y.ncols() != theta.q() || x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "x is {}x{}, y is {}x{}, model expects p={}, q={}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            theta.p(),
            theta.q()
        )));
    }
    Ok(())
}
