use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SimSetting;
use crate::stats::sigmoid;
use crate::error::Result;
use crate::linalg;
use crate::model::{canonicalize, Centering, DataSet, Family, Theta};

/// A simulated training set, an independent test set and the truth.
#[derive(Debug, Clone)]
pub struct SimData {
    /// Centred training data.
    pub train: DataSet,
    /// Test data centred with the training means.
    pub test: DataSet,
    pub truth: Theta,
    /// `a0 + t a + h b` for every test row.
    pub test_linear_predictor: DVector<f64>,
    pub centering: Centering,
}

struct Draw {
    #[cfg_attr(not(test), allow(dead_code))]
    t: DMatrix<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    h: DMatrix<f64>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    z: DVector<f64>,
    linear_predictor: DVector<f64>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn scale_columns(m: &mut DMatrix<f64>, var: &DVector<f64>) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= var[j].sqrt();
    }
}

/// Builds the generative parameters of `setting`; latent scores have unit
/// variance except `h`.
pub(crate) fn truth_for(setting: &SimSetting, rng: &mut ChaCha8Rng) -> Theta {
    let (p, q, r, rx, ry) = (setting.p, setting.q, setting.r, setting.r_x, setting.r_y);
    let wx = linalg::orthonormalize_columns(&normal_matrix(rng, p, r + rx));
    let cy = linalg::orthonormalize_columns(&normal_matrix(rng, q, r + ry));

    let b_tu = DVector::from_element(r, 1.0);
    let sigma_t = DVector::from_element(r, 1.0);
    let het = setting.heterogeneity;
    let sigma_h = b_tu.map(|b: f64| b * b * het / (1.0 - het));
    let sigma_tperp = DVector::from_element(rx, 1.0);
    let sigma_uperp = DVector::from_element(ry, 1.0);

    let signal_x = sigma_t.sum() + sigma_tperp.sum();
    let sigma_u_sum: f64 = (0..r).map(|k| b_tu[k] * b_tu[k] * sigma_t[k] + sigma_h[k]).sum();
    let signal_y = sigma_u_sum + sigma_uperp.sum();
    let sigma_e2 = setting.noise_x / (1.0 - setting.noise_x) * signal_x / p as f64;
    let sigma_f2 = setting.noise_y / (1.0 - setting.noise_y) * signal_y / q as f64;

    let a = DVector::from_element(r, setting.a_true);
    let b = DVector::from_element(r, setting.b_true);
    let signal_z = a.component_mul(&a).dot(&sigma_t) + b.component_mul(&b).dot(&sigma_h);
    let sigma_g2 = match setting.family {
        // a null outcome is pure unit-variance noise
        Family::Gaussian if signal_z == 0.0 => 1.0,
        Family::Gaussian => setting.outcome_noise / (1.0 - setting.outcome_noise) * signal_z,
        Family::Bernoulli => 1.0,
    };

    Theta {
        w: wx.columns(0, r).into_owned(),
        w_perp: wx.columns(r, rx).into_owned(),
        c: cy.columns(0, r).into_owned(),
        c_perp: cy.columns(r, ry).into_owned(),
        b_tu,
        sigma_t,
        sigma_tperp,
        sigma_uperp,
        sigma_h,
        sigma_e2,
        sigma_f2,
        a,
        b,
        a0: 0.0,
        sigma_g2,
        family: setting.family,
    }
}

/// Draws `n` rows from the model at `theta`.
fn draw(theta: &Theta, n: usize, rng: &mut ChaCha8Rng) -> Draw {
    let (p, q, r) = (theta.p(), theta.q(), theta.r());
    let mut t = normal_matrix(rng, n, r);
    scale_columns(&mut t, &theta.sigma_t);
    let mut h = normal_matrix(rng, n, r);
    scale_columns(&mut h, &theta.sigma_h);
    let mut t_perp = normal_matrix(rng, n, theta.r_x());
    scale_columns(&mut t_perp, &theta.sigma_tperp);
    let mut u_perp = normal_matrix(rng, n, theta.r_y());
    scale_columns(&mut u_perp, &theta.sigma_uperp);
    let e = normal_matrix(rng, n, p) * theta.sigma_e2.sqrt();
    let f = normal_matrix(rng, n, q) * theta.sigma_f2.sqrt();

    let mut u = h.clone();
    for k in 0..r {
        u.column_mut(k).axpy(theta.b_tu[k], &t.column(k), 1.0);
    }
    let x = &t * theta.w.transpose() + &t_perp * theta.w_perp.transpose() + e;
    let y = &u * theta.c.transpose() + &u_perp * theta.c_perp.transpose() + f;
    let linear_predictor = (&t * &theta.a + &h * &theta.b).add_scalar(theta.a0);
    let z = match theta.family {
        Family::Gaussian => {
            let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * theta.sigma_g2.sqrt());
            &linear_predictor + g
        }
        Family::Bernoulli => linear_predictor.map(|eta| {
            let u: f64 = rng.random();
            if u < sigmoid(eta) {
                1.0
            } else {
                0.0
            }
        }),
    };
    Draw {
        t,
        h,
        x,
        y,
        z,
        linear_predictor,
    }
}

pub(crate) fn generate_with_rng(setting: &SimSetting, rng: &mut ChaCha8Rng) -> Result<SimData> {
    setting.validate()?;
    let truth = truth_for(setting, rng);
    let train = draw(&truth, setting.n, rng);
    let test = draw(&truth, setting.test_n, rng);

    let mut train = DataSet::new(train.x, train.y, train.z, setting.family)?;
    let centering = train.center();
    let (mut tx, mut ty) = (test.x, test.y);
    centering.apply(&mut tx, &mut ty)?;
    let tz = test.z.add_scalar(-centering.z_mean);
    let test_set = if setting.test_n >= 2 {
        DataSet::new(tx, ty, tz, setting.family)?
    } else {
        DataSet {
            x: tx,
            y: ty,
            z: tz,
            family: setting.family,
        }
    };

    Ok(SimData {
        train,
        test: test_set,
        truth: canonicalize(&truth),
        test_linear_predictor: test.linear_predictor,
        centering,
    })
}

/// Simulates one replication of `setting`. Identical seeds give
/// bit-identical output.
pub fn generate_dataset(setting: &SimSetting, seed: u64) -> Result<SimData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(setting, &mut rng)
}
