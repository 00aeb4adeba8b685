use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{conditional_moments_given_xy, Theta};

/// Linear predictor `a0 + E[t|x,y] a + E[h|x,y] b` for new rows, with
/// `E[h] = E[u] − E[t]B`. Inputs must be centred like the training data.
pub fn predict_outcome(theta: &Theta, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DVector<f64>> {
    let moments = conditional_moments_given_xy(theta, x, y)?;
    let r = theta.r();
    let t = moments.mean.columns(0, r);
    let mut h = moments.mean.columns(r, r).into_owned();
    for k in 0..r {
        h.column_mut(k).axpy(-theta.b_tu[k], &t.column(k), 1.0);
    }
    Ok((t * &theta.a + h * &theta.b).add_scalar(theta.a0))
}
