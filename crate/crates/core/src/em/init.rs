use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FitConfig, InitStrategy, B_MIN};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{canonicalize, DataSet, Family, ModelDims, Theta};
use crate::stats::{logit, sigmoid};

/// Starting values for EM.
pub fn init_params(data: &DataSet, dims: &ModelDims, config: &FitConfig) -> Result<Theta> {
    data.check_dims(dims)?;
    let theta = match config.init {
        InitStrategy::Svd => svd_init(data, dims)?,
        InitStrategy::Random { seed } => random_init(data, dims, seed)?,
    };
    Ok(canonicalize(&theta))
}

/// Leading `k` singular triplets, sorted by decreasing singular value.
fn top_singular(m: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vt");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let order = &order[..k.min(order.len())];
    let left = DMatrix::from_fn(m.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let right = DMatrix::from_fn(m.ncols(), order.len(), |i, j| v_t[(order[j], i)]);
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    (left, values, right)
}

fn mean_sq_columns(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    linalg::column_sq_sums(m) / n
}

fn svd_init(data: &DataSet, dims: &ModelDims) -> Result<Theta> {
    let (n, r) = (data.n() as f64, dims.r);
    let xty = data.x.transpose() * &data.y;
    let (w, sv, c) = top_singular(&xty, r);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax && s > 0.0).count();
    if rank < r {
        return Err(Error::RankDeficient(format!(
            "XᵀY has numerical rank {rank} < r = {r}; use fewer joint components"
        )));
    }

    let t = &data.x * &w;
    let u = &data.y * &c;
    let x_res = &data.x - &t * w.transpose();
    let y_res = &data.y - &u * c.transpose();
    let (_, _, w_perp) = top_singular(&x_res, dims.r_x);
    let (_, _, c_perp) = top_singular(&y_res, dims.r_y);
    let t_perp = &x_res * &w_perp;
    let u_perp = &y_res * &c_perp;

    let vx = data.x.norm_squared() / (n * data.p() as f64);
    let vy = data.y.norm_squared() / (n * data.q() as f64);
    let latent_floor_x = 1e-6 * vx * data.p() as f64;
    let latent_floor_y = 1e-6 * vy * data.q() as f64;

    let sigma_t = mean_sq_columns(&t).map(|v| v.max(latent_floor_x));
    let sigma_tperp = mean_sq_columns(&t_perp).map(|v| v.max(latent_floor_x));
    let sigma_uperp = mean_sq_columns(&u_perp).map(|v| v.max(latent_floor_y));
    let b_tu = DVector::from_fn(r, |k, _| {
        (t.column(k).dot(&u.column(k)) / t.column(k).norm_squared()).max(B_MIN)
    });
    let mut h = u.clone();
    for k in 0..r {
        h.column_mut(k).axpy(-b_tu[k], &t.column(k), 1.0);
    }
    let sigma_h = mean_sq_columns(&h).map(|v| v.max(latent_floor_y));

    let e = &x_res - &t_perp * w_perp.transpose();
    let f = &y_res - &u_perp * c_perp.transpose();
    let sigma_e2 = (e.norm_squared() / (n * data.p() as f64)).max(1e-3 * vx);
    let sigma_f2 = (f.norm_squared() / (n * data.q() as f64)).max(1e-3 * vy);

    let design = DMatrix::from_fn(data.n(), 2 * r, |i, j| if j < r { t[(i, j)] } else { h[(i, j - r)] });
    let (a0, alpha, sigma_g2) = outcome_start(&design, &data.z, data.family)?;

    Ok(Theta {
        w,
        c,
        w_perp,
        c_perp,
        b_tu,
        sigma_t,
        sigma_tperp,
        sigma_uperp,
        sigma_h,
        sigma_e2,
        sigma_f2,
        a: alpha.rows(0, r).into_owned(),
        b: alpha.rows(r, r).into_owned(),
        a0,
        sigma_g2,
        family: data.family,
    })
}

fn random_init(data: &DataSet, dims: &ModelDims, seed: u64) -> Result<Theta> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.n() as f64;
    let (p, q, r, rx, ry) = (dims.p, dims.q, dims.r, dims.r_x, dims.r_y);
    let mut normal = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    };
    let wx = linalg::orthonormalize_columns(&normal(p, r + rx));
    let cy = linalg::orthonormalize_columns(&normal(q, r + ry));

    let vx = data.x.norm_squared() / (n * p as f64);
    let vy = data.y.norm_squared() / (n * q as f64);
    let lat_x = vx * p as f64 / (2.0 * (r + rx) as f64);
    let lat_y = vy * q as f64 / (2.0 * (r + ry) as f64);
    let decay = |k: usize| 1.0 - 0.5 * k as f64 / r as f64;
    let sigma_t = DVector::from_fn(r, |k, _| lat_x * decay(k));
    let sigma_h = DVector::from_fn(r, |k, _| (lat_y - lat_x * decay(k)).max(0.1 * lat_y));

    let z_var = data.z.norm_squared() / n;
    let (a0, sigma_g2) = match data.family {
        Family::Gaussian => (0.0, z_var.max(1e-8)),
        Family::Bernoulli => (logit(data.z.mean()), 1.0),
    };

    Ok(Theta {
        w: wx.columns(0, r).into_owned(),
        w_perp: wx.columns(r, rx).into_owned(),
        c: cy.columns(0, r).into_owned(),
        c_perp: cy.columns(r, ry).into_owned(),
        b_tu: DVector::from_element(r, 1.0),
        sigma_t,
        sigma_tperp: DVector::from_element(rx, lat_x),
        sigma_uperp: DVector::from_element(ry, lat_y),
        sigma_h,
        sigma_e2: vx / 2.0,
        sigma_f2: vy / 2.0,
        a: DVector::zeros(r),
        b: DVector::zeros(r),
        a0,
        sigma_g2,
        family: data.family,
    })
}

/// Intercept, coefficients and residual variance of `z` regressed on the
/// initial `(t, h)` scores.
fn outcome_start(design: &DMatrix<f64>, z: &DVector<f64>, family: Family) -> Result<(f64, DVector<f64>, f64)> {
    let n = design.nrows() as f64;
    let k = design.ncols();
    match family {
        Family::Gaussian => {
            let gram = design.transpose() * design + DMatrix::identity(k, k) * 1e-10 * n;
            let rhs = design.transpose() * z;
            let alpha = gram
                .cholesky()
                .ok_or_else(|| Error::Singular("initial (t, h) scores are collinear".into()))?
                .solve(&rhs);
            let resid = z - design * &alpha;
            let z_var = z.norm_squared() / n;
            let sigma_g2 = (resid.norm_squared() / n).max(1e-3 * z_var).max(1e-8);
            Ok((0.0, alpha, sigma_g2))
        }
        Family::Bernoulli => {
            let full = DMatrix::from_fn(design.nrows(), k + 1, |i, j| if j == 0 { 1.0 } else { design[(i, j - 1)] });
            let beta = logistic_irls(&full, z, 1e-4 * n, 50);
            Ok((beta[0], beta.rows(1, k).into_owned(), 1.0))
        }
    }
}

/// Ridge-stabilised Newton iterations for logistic regression; the first
/// column is treated as an unpenalised intercept.
pub(crate) fn logistic_irls(design: &DMatrix<f64>, z: &DVector<f64>, ridge: f64, max_iter: usize) -> DVector<f64> {
    let k = design.ncols();
    let mut beta = DVector::zeros(k);
    beta[0] = logit(z.mean());
    let mut penalty = DMatrix::identity(k, k) * ridge;
    penalty[(0, 0)] = 1e-10;
    for _ in 0..max_iter {
        let eta = design * &beta;
        let prob = eta.map(sigmoid);
        let wts = prob.map(|p| (p * (1.0 - p)).max(1e-12));
        let mut hess = &penalty + DMatrix::zeros(k, k);
        for (i, row) in design.row_iter().enumerate() {
            hess += row.transpose() * row * wts[i];
        }
        let grad = design.transpose() * (z - &prob) - &penalty * &beta;
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&grad);
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    beta
}
