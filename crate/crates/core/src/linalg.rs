use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::NumericalDomain(format!("{what} is not positive definite")))
}

pub(crate) fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Orthogonal polar factor `U Vᵀ` of `m = U S Vᵀ`, the maximiser of
/// `tr(Gᵀ m)` over semi-orthogonal `G`.
pub(crate) fn polar_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let scale = m.norm();
    if !scale.is_finite() || scale == 0.0 {
        return Err(Error::NumericalDomain(format!(
            "polar factor undefined: cross-moment for {what} is zero or non-finite"
        )));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vt");
    Ok(u * v_t)
}

/// Columns orthonormalised by Householder QR, signs fixed so that
/// `R` has a non-negative diagonal.
pub(crate) fn orthonormalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn frob_dev_from_identity(g: &DMatrix<f64>) -> f64 {
    let gtg = g.transpose() * g;
    (gtg - DMatrix::<f64>::identity(g.ncols(), g.ncols())).norm()
}

pub(crate) fn column_sq_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.norm_squared()))
}
