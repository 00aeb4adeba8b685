//! Parameter containers, the implied covariance, identifiability rules and
//! exact Gaussian conditioning of the latent scores.

mod canonical;
mod conditional;
mod covariance;

pub use canonical::{canonicalize, validate_constraints, Constraint, ValidationReport, Violation};
pub use conditional::{conditional_latent_moments, conditional_moments_given_xy, log_likelihood_xy};
pub use covariance::{build_joint_covariance, log_likelihood_gaussian};

pub(crate) use conditional::GaussianConditioner;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Frobenius tolerance for `GᵀG = I`.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;
/// Smallest admissible variance parameter.
pub const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Gaussian => f.write_str("gaussian"),
            Family::Bernoulli => f.write_str("bernoulli"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "bernoulli" | "binary" => Ok(Family::Bernoulli),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

/// Sizes of the observed blocks and of the latent components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub r_x: usize,
    pub r_y: usize,
    pub n: usize,
}

impl ModelDims {
    pub fn new(p: usize, q: usize, r: usize, r_x: usize, r_y: usize, n: usize) -> Result<Self> {
        let dims = ModelDims {
            p,
            q,
            r,
            r_x,
            r_y,
            n,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidDims(format!(
                "p and q must be positive (p={}, q={})",
                self.p, self.q
            )));
        }
        if self.r == 0 {
            return Err(Error::InvalidDims("at least one joint component is required".into()));
        }
        if self.r + self.r_x > self.p {
            return Err(Error::InvalidDims(format!(
                "r + r_x = {} exceeds p = {}",
                self.r + self.r_x,
                self.p
            )));
        }
        if self.r + self.r_y > self.q {
            return Err(Error::InvalidDims(format!(
                "r + r_y = {} exceeds q = {}",
                self.r + self.r_y,
                self.q
            )));
        }
        Ok(())
    }

    /// Length of the latent vector `(t, u, t_perp, u_perp)`.
    pub fn latent_dim(&self) -> usize {
        2 * self.r + self.r_x + self.r_y
    }
}

/// Full parameter collection.
///
/// The outcome coefficients `a` and `b` multiply `t` and `h = u - tB`
/// respectively (the collinearity-free parametrisation). `b_tu` is the
/// diagonal of `B`; all latent covariances are diagonal and stored as
/// vectors of variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub w_perp: DMatrix<f64>,
    pub c_perp: DMatrix<f64>,
    pub b_tu: DVector<f64>,
    pub sigma_t: DVector<f64>,
    pub sigma_tperp: DVector<f64>,
    pub sigma_uperp: DVector<f64>,
    pub sigma_h: DVector<f64>,
    pub sigma_e2: f64,
    pub sigma_f2: f64,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub a0: f64,
    pub sigma_g2: f64,
    pub family: Family,
}

impl Theta {
    pub fn p(&self) -> usize {
        self.w.nrows()
    }
    pub fn q(&self) -> usize {
        self.c.nrows()
    }
    pub fn r(&self) -> usize {
        self.w.ncols()
    }
    pub fn r_x(&self) -> usize {
        self.w_perp.ncols()
    }
    pub fn r_y(&self) -> usize {
        self.c_perp.ncols()
    }

    /// Checks that every field has a shape consistent with `W` and `C`.
    pub fn check_shapes(&self) -> Result<()> {
        let (p, q, r) = (self.p(), self.q(), self.r());
        let mut bad = Vec::new();
        if self.c.ncols() != r {
            bad.push(format!("C has {} columns, W has {r}", self.c.ncols()));
        }
        if self.w_perp.nrows() != p {
            bad.push(format!("W_perp has {} rows, expected p={p}", self.w_perp.nrows()));
        }
        if self.c_perp.nrows() != q {
            bad.push(format!("C_perp has {} rows, expected q={q}", self.c_perp.nrows()));
        }
        for (name, len, want) in [
            ("B", self.b_tu.len(), r),
            ("Sigma_t", self.sigma_t.len(), r),
            ("Sigma_h", self.sigma_h.len(), r),
            ("a", self.a.len(), r),
            ("b", self.b.len(), r),
            ("Sigma_tperp", self.sigma_tperp.len(), self.r_x()),
            ("Sigma_uperp", self.sigma_uperp.len(), self.r_y()),
        ] {
            if len != want {
                bad.push(format!("{name} has length {len}, expected {want}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(bad.join("; ")))
        }
    }

    pub fn dims(&self, n: usize) -> ModelDims {
        ModelDims {
            p: self.p(),
            q: self.q(),
            r: self.r(),
            r_x: self.r_x(),
            r_y: self.r_y(),
            n,
        }
    }

    /// Diagonal of `Σ_u = B Σ_t B + Σ_h`.
    pub fn sigma_u(&self) -> DVector<f64> {
        DVector::from_fn(self.r(), |k, _| {
            self.b_tu[k] * self.b_tu[k] * self.sigma_t[k] + self.sigma_h[k]
        })
    }

    /// Prior covariance of `ν = (t, u)`.
    pub fn joint_score_cov(&self) -> DMatrix<f64> {
        let r = self.r();
        let su = self.sigma_u();
        let mut m = DMatrix::zeros(2 * r, 2 * r);
        for k in 0..r {
            m[(k, k)] = self.sigma_t[k];
            m[(k, r + k)] = self.sigma_t[k] * self.b_tu[k];
            m[(r + k, k)] = self.sigma_t[k] * self.b_tu[k];
            m[(r + k, r + k)] = su[k];
        }
        m
    }

    /// Outcome coefficients stacked as `(a_1..a_r, b_1..b_r)`.
    pub fn alpha(&self) -> DVector<f64> {
        let r = self.r();
        DVector::from_fn(2 * r, |i, _| if i < r { self.a[i] } else { self.b[i - r] })
    }

    /// All variance parameters with their names, for floor checks.
    pub(crate) fn variances(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (name, v) in [
            ("Sigma_t", &self.sigma_t),
            ("Sigma_h", &self.sigma_h),
            ("Sigma_tperp", &self.sigma_tperp),
            ("Sigma_uperp", &self.sigma_uperp),
        ] {
            for (k, x) in v.iter().enumerate() {
                out.push((format!("{name}[{k}]"), *x));
            }
        }
        out.push(("sigma_e2".into(), self.sigma_e2));
        out.push(("sigma_f2".into(), self.sigma_f2));
        if self.family == Family::Gaussian {
            out.push(("sigma_g2".into(), self.sigma_g2));
        }
        out
    }

    pub(crate) fn check_variance_floor(&self) -> Result<()> {
        for (name, value) in self.variances() {
            if !(value >= VARIANCE_FLOOR) {
                return Err(Error::VarianceFloor {
                    name,
                    value,
                    floor: VARIANCE_FLOOR,
                });
            }
        }
        Ok(())
    }
}

/// N observations of `(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub z: DVector<f64>,
    pub family: Family,
}

impl DataSet {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, z: DVector<f64>, family: Family) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n || z.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "row counts differ: x has {n}, y has {}, z has {}",
                y.nrows(),
                z.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 observations, got {n}")));
        }
        for (name, m) in [("x", &x), ("y", &y)] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite value in {name} at row {}, column {}",
                    pos % n,
                    pos / n
                )));
            }
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {i}")));
        }
        if family == Family::Bernoulli {
            if let Some(i) = z.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidData(format!(
                    "bernoulli outcome must be 0 or 1, row {i} has {}",
                    z[i]
                )));
            }
        }
        Ok(DataSet { x, y, z, family })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    /// Column-centres `x` and `y` (and `z` for the Gaussian family) in place.
    /// Returns the subtracted means.
    pub fn center(&mut self) -> Centering {
        let x_mean = center_columns(&mut self.x);
        let y_mean = center_columns(&mut self.y);
        let z_mean = if self.family == Family::Gaussian {
            let m = self.z.mean();
            self.z.add_scalar_mut(-m);
            m
        } else {
            0.0
        };
        Centering {
            x_mean,
            y_mean,
            z_mean,
        }
    }

    pub(crate) fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        dims.validate()?;
        if dims.p != self.p() || dims.q != self.q() || dims.n != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "data is {}x{}/{}x{} but dims declare N={}, p={}, q={}",
                self.n(),
                self.p(),
                self.n(),
                self.q(),
                dims.n,
                dims.p,
                dims.q
            )));
        }
        Ok(())
    }

    pub(crate) fn check_theta(&self, theta: &Theta) -> Result<()> {
        theta.check_shapes()?;
        if theta.p() != self.p() || theta.q() != self.q() {
            return Err(Error::DimensionMismatch(format!(
                "theta expects p={}, q={}, data has p={}, q={}",
                theta.p(),
                theta.q(),
                self.p(),
                self.q()
            )));
        }
        Ok(())
    }
}

/// Means removed by [`DataSet::center`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub z_mean: f64,
}

impl Centering {
    pub fn apply(&self, x: &mut DMatrix<f64>, y: &mut DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.x_mean.len() || y.ncols() != self.y_mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "centering vectors have lengths {}/{}, data has {}/{} columns",
                self.x_mean.len(),
                self.y_mean.len(),
                x.ncols(),
                y.ncols()
            )));
        }
        for (j, m) in self.x_mean.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
        for (j, m) in self.y_mean.iter().enumerate() {
            y.column_mut(j).add_scalar_mut(-m);
        }
        Ok(())
    }
}

fn center_columns(m: &mut DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter_mut()
        .map(|mut col| {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            mean
        })
        .collect()
}

/// Conditional covariance of the latent vector, either shared across
/// observations (Gaussian conditioning) or one per observation (quadrature).
#[derive(Debug, Clone, PartialEq)]
pub enum LatentCov {
    Shared(DMatrix<f64>),
    PerObservation(Vec<DMatrix<f64>>),
}

/// Conditional first and second moments of `(t, u, t_perp, u_perp)` given
/// the data, one row of `mean` per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub r: usize,
    pub r_x: usize,
    pub r_y: usize,
    pub mean: DMatrix<f64>,
    pub cov: LatentCov,
}

impl LatentMoments {
    pub fn n(&self) -> usize {
        self.mean.nrows()
    }
    pub fn dim(&self) -> usize {
        2 * self.r + self.r_x + self.r_y
    }
    pub fn t_range(&self) -> Range<usize> {
        0..self.r
    }
    pub fn u_range(&self) -> Range<usize> {
        self.r..2 * self.r
    }
    pub fn tperp_range(&self) -> Range<usize> {
        2 * self.r..2 * self.r + self.r_x
    }
    pub fn uperp_range(&self) -> Range<usize> {
        2 * self.r + self.r_x..self.dim()
    }

    pub fn cov_of(&self, i: usize) -> &DMatrix<f64> {
        match &self.cov {
            LatentCov::Shared(c) => c,
            LatentCov::PerObservation(v) => &v[i],
        }
    }

    /// `E[LᵀL | data_i]` for observation `i`.
    pub fn second_moment(&self, i: usize) -> DMatrix<f64> {
        let m = self.mean.row(i);
        self.cov_of(i) + m.transpose() * m
    }

    /// `Σ_i E[L_iᵀ L_i | data_i]`.
    pub fn second_moment_sum(&self) -> DMatrix<f64> {
        let n = self.n();
        let cov_sum = match &self.cov {
            LatentCov::Shared(c) => c * n as f64,
            LatentCov::PerObservation(v) => v
                .iter()
                .fold(DMatrix::zeros(self.dim(), self.dim()), |acc, c| acc + c),
        };
        cov_sum + self.mean.transpose() * &self.mean
    }
}
