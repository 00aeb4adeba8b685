use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Family;
use crate::stats::{log_sigmoid, logit, sigmoid};

/// Ridge fit with an unpenalised intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coef: DVector<f64>,
    pub lambda: f64,
    /// Mean held-out loss per grid point (squared error or deviance).
    pub cv_loss: Vec<f64>,
}

impl RidgeFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.coef).add_scalar(self.intercept)
    }
}

/// 50 log-spaced penalties over `[1e-4, 1e4]·(p/N)`.
pub fn lambda_grid(p: usize, n: usize) -> Vec<f64> {
    let scale = p as f64 / n as f64;
    let (lo, hi) = ((1e-4f64).ln(), (1e4f64).ln());
    (0..50)
        .map(|i| scale * (lo + (hi - lo) * i as f64 / 49.0).exp())
        .collect()
}

/// `(XᵀX + λI)⁻¹ Xᵀ z` without intercept, via the dual form when `p > N`.
pub fn ridge_closed_form(x: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_xz(x, z)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge penalty must be positive, got {lambda}")));
    }
    let (n, p) = x.shape();
    let singular = || Error::Singular("ridge system is not positive definite".into());
    if p <= n {
        let gram = x.transpose() * x + DMatrix::identity(p, p) * lambda;
        Ok(gram.cholesky().ok_or_else(singular)?.solve(&(x.transpose() * z)))
    } else {
        let kernel = x * x.transpose() + DMatrix::identity(n, n) * lambda;
        Ok(x.transpose() * kernel.cholesky().ok_or_else(singular)?.solve(z))
    }
}

fn check_xz(x: &DMatrix<f64>, z: &DVector<f64>) -> Result<()> {
    if x.nrows() != z.len() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} rows, z has {}",
            x.nrows(),
            z.len()
        )));
    }
    Ok(())
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

fn centered(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn select(z: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| z[rows[i]])
}

/// Gaussian ridge for every penalty in `grid` from one thin SVD of the
/// centred design. Returns `(intercept, coef)` per penalty.
fn gaussian_path(x: &DMatrix<f64>, z: &DVector<f64>, grid: &[f64]) -> Vec<(f64, DVector<f64>)> {
    let xm = column_means(x);
    let zm = z.mean();
    let xc = centered(x, &xm);
    let zc = z.add_scalar(-zm);
    let svd = xc.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vt");
    let uz = u.transpose() * &zc;
    grid.iter()
        .map(|&lambda| {
            let shrunk = DVector::from_fn(uz.len(), |i, _| {
                let s = svd.singular_values[i];
                s / (s * s + lambda) * uz[i]
            });
            let coef = v_t.transpose() * shrunk;
            (zm - xm.dot(&coef), coef)
        })
        .collect()
}

/// Penalised logistic regression with an unpenalised intercept. Each
/// Newton iteration updates the intercept exactly, then takes a damped
/// penalised step for the slopes (dual form when `p > N`).
fn logistic_ridge(
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda: f64,
    start: Option<&(f64, DVector<f64>)>,
) -> Result<(f64, DVector<f64>)> {
    let (n, p) = x.shape();
    let (mut b0, mut beta) = match start {
        Some((b0, beta)) => (*b0, beta.clone()),
        None => (logit(z.mean()), DVector::zeros(p)),
    };
    let objective = |b0: f64, beta: &DVector<f64>| {
        let eta = (x * beta).add_scalar(b0);
        let ll: f64 = eta
            .iter()
            .zip(z.iter())
            .map(|(&e, &zi)| if zi == 1.0 { log_sigmoid(e) } else { log_sigmoid(-e) })
            .sum();
        ll - 0.5 * lambda * beta.norm_squared()
    };
    let mut current = objective(b0, &beta);
    for _ in 0..200 {
        let eta = (x * &beta).add_scalar(b0);
        let prob = eta.map(sigmoid);
        let w = prob.map(|v| (v * (1.0 - v)).max(1e-10));
        let resid = z - &prob;
        b0 += resid.sum() / w.sum();

        let eta = (x * &beta).add_scalar(b0);
        let prob = eta.map(sigmoid);
        let w = prob.map(|v| (v * (1.0 - v)).max(1e-10));
        let grad = x.transpose() * (z - &prob) - &beta * lambda;
        let step = if p <= n {
            let mut hess = DMatrix::identity(p, p) * lambda;
            for (i, row) in x.row_iter().enumerate() {
                hess += row.transpose() * row * w[i];
            }
            hess.cholesky()
                .ok_or_else(|| Error::Singular("penalised logistic Hessian".into()))?
                .solve(&grad)
        } else {
            let mut m = x.clone();
            for (i, mut row) in m.row_iter_mut().enumerate() {
                row *= w[i].sqrt();
            }
            let kernel = &m * m.transpose() + DMatrix::identity(n, n) * lambda;
            let inner = kernel
                .cholesky()
                .ok_or_else(|| Error::Singular("penalised logistic kernel".into()))?
                .solve(&(&m * &grad));
            (grad - m.transpose() * inner) / lambda
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * scale;
            let value = objective(b0, &cand);
            if value >= current - 1e-12 * current.abs() {
                beta = cand;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || step.amax() * scale < 1e-9 {
            break;
        }
    }
    Ok((b0, beta))
}

fn heldout_loss(family: Family, b0: f64, beta: &DVector<f64>, x: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    let eta = (x * beta).add_scalar(b0);
    match family {
        Family::Gaussian => (z - eta).norm_squared(),
        Family::Bernoulli => eta
            .iter()
            .zip(z.iter())
            .map(|(&e, &zi)| -2.0 * if zi == 1.0 { log_sigmoid(e) } else { log_sigmoid(-e) })
            .sum(),
    }
}

fn fit_path(family: Family, x: &DMatrix<f64>, z: &DVector<f64>, grid: &[f64]) -> Result<Vec<(f64, DVector<f64>)>> {
    match family {
        Family::Gaussian => Ok(gaussian_path(x, z, grid)),
        Family::Bernoulli => {
            // warm starts from the most penalised end of the grid
            let mut order: Vec<usize> = (0..grid.len()).collect();
            order.sort_by(|&i, &j| grid[j].total_cmp(&grid[i]));
            let mut out = vec![(0.0, DVector::zeros(x.ncols())); grid.len()];
            let mut prev: Option<(f64, DVector<f64>)> = None;
            for i in order {
                let fit = logistic_ridge(x, z, grid[i], prev.as_ref())?;
                prev = Some(fit.clone());
                out[i] = fit;
            }
            Ok(out)
        }
    }
}

/// Ridge regression of `z` on `x` with the penalty chosen by `folds`-fold
/// cross-validation over `grid` (squared error for Gaussian outcomes,
/// deviance for Bernoulli). Folds are a seeded random partition.
pub fn ridge_fit_cv(
    x: &DMatrix<f64>,
    z: &DVector<f64>,
    grid: &[f64],
    folds: usize,
    family: Family,
    seed: u64,
) -> Result<RidgeFit> {
    check_xz(x, z)?;
    let n = x.nrows();
    if folds < 2 || n < folds {
        return Err(Error::InvalidArgument(format!("need 2 <= folds <= N, got {folds} folds for N={n}")));
    }
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("penalty grid must be non-empty and strictly positive".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut loss = vec![0.0; grid.len()];
    for f in 0..folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, &i) in perm.iter().enumerate() {
            if pos % folds == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        let (xt, zt) = (select_rows(x, &train), select(z, &train));
        let (xv, zv) = (select_rows(x, &test), select(z, &test));
        for (g, (b0, beta)) in fit_path(family, &xt, &zt, grid)?.iter().enumerate() {
            loss[g] += heldout_loss(family, *b0, beta, &xv, &zv);
        }
    }
    for l in &mut loss {
        *l /= n as f64;
    }
    let best = (0..grid.len())
        .min_by(|&i, &j| loss[i].total_cmp(&loss[j]))
        .expect("grid is non-empty");
    let lambda = grid[best];
    let (intercept, coef) = fit_path(family, x, z, &[lambda])?.remove(0);
    Ok(RidgeFit {
        intercept,
        coef,
        lambda,
        cv_loss: loss,
    })
}
