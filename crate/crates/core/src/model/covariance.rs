use nalgebra::DMatrix;

use super::{DataSet, Family, GaussianConditioner, Theta};
use crate::error::{Error, Result};

/// Covariance of `(x, y, z)` implied by `theta` for the Gaussian outcome.
///
/// `theta` carries the coefficients on `(t, h)`; substituting
/// `z = t a' + h b' + g` gives the three outcome blocks
/// `Cov(x,z) = W Σ_t a'ᵀ`, `Cov(y,z) = C (B Σ_t a'ᵀ + Σ_h b'ᵀ)` and
/// `Var(z) = a' Σ_t a'ᵀ + b' Σ_h b'ᵀ + σ_g²`.
pub fn build_joint_covariance(theta: &Theta) -> Result<DMatrix<f64>> {
    theta.check_shapes()?;
    if theta.family != Family::Gaussian {
        return Err(Error::InvalidArgument(
            "the joint covariance of (x, y, z) exists only for the gaussian family".into(),
        ));
    }
    let (p, q, r) = (theta.p(), theta.q(), theta.r());
    let d = p + q + 1;
    let st = DMatrix::from_diagonal(&theta.sigma_t);
    let sb = DMatrix::from_diagonal(&theta.b_tu);
    let su = DMatrix::from_diagonal(&theta.sigma_u());
    let stp = DMatrix::from_diagonal(&theta.sigma_tperp);
    let sup = DMatrix::from_diagonal(&theta.sigma_uperp);

    let sxx = &theta.w * &st * theta.w.transpose()
        + &theta.w_perp * stp * theta.w_perp.transpose()
        + DMatrix::identity(p, p) * theta.sigma_e2;
    let sxy = &theta.w * &st * &sb * theta.c.transpose();
    let syy = &theta.c * su * theta.c.transpose()
        + &theta.c_perp * sup * theta.c_perp.transpose()
        + DMatrix::identity(q, q) * theta.sigma_f2;

    // Cov(u, z) as a column: B Σ_t a' + Σ_h b'
    let cov_uz = nalgebra::DVector::from_fn(r, |k, _| {
        theta.b_tu[k] * theta.sigma_t[k] * theta.a[k] + theta.sigma_h[k] * theta.b[k]
    });
    let cov_tz = nalgebra::DVector::from_fn(r, |k, _| theta.sigma_t[k] * theta.a[k]);
    let sxz = &theta.w * cov_tz;
    let syz = &theta.c * cov_uz;
    let szz = (0..r)
        .map(|k| {
            theta.a[k] * theta.a[k] * theta.sigma_t[k] + theta.b[k] * theta.b[k] * theta.sigma_h[k]
        })
        .sum::<f64>()
        + theta.sigma_g2;

    let mut out = DMatrix::zeros(d, d);
    out.view_mut((0, 0), (p, p)).copy_from(&sxx);
    out.view_mut((0, p), (p, q)).copy_from(&sxy);
    out.view_mut((p, 0), (q, p)).copy_from(&sxy.transpose());
    out.view_mut((p, p), (q, q)).copy_from(&syy);
    out.view_mut((0, p + q), (p, 1)).copy_from(&sxz);
    out.view_mut((p + q, 0), (1, p)).copy_from(&sxz.transpose());
    out.view_mut((p, p + q), (q, 1)).copy_from(&syz);
    out.view_mut((p + q, p), (1, q)).copy_from(&syz.transpose());
    out[(p + q, p + q)] = szz;
    crate::linalg::symmetrize(&mut out);
    Ok(out)
}

/// Observed-data log-likelihood of the Gaussian-outcome model.
///
/// `Σ_θ` is a diagonal-plus-rank-`(2r + r_x + r_y)` matrix, so the
/// determinant and the quadratic forms are evaluated through the Cholesky
/// factor of the small capacitance matrix rather than the full
/// `(p+q+1)`-dimensional one.
pub fn log_likelihood_gaussian(theta: &Theta, data: &DataSet) -> Result<f64> {
    if theta.family != Family::Gaussian || data.family != Family::Gaussian {
        return Err(Error::InvalidArgument(
            "log_likelihood_gaussian needs a gaussian theta and gaussian data".into(),
        ));
    }
    data.check_theta(theta)?;
    let cond = GaussianConditioner::new(theta, true)?;
    Ok(cond.log_likelihood(&data.x, &data.y, Some(&data.z)))
}
