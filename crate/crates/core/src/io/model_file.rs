use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::{FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{Centering, Family, ModelDims, Theta};

pub const FORMAT_VERSION: u32 = 1;

/// Dense matrix stored row-major with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidData(format!(
                "{name}: {} values for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub w: MatrixRecord,
    pub c: MatrixRecord,
    pub w_perp: MatrixRecord,
    pub c_perp: MatrixRecord,
    pub b_tu: Vec<f64>,
    pub sigma_t: Vec<f64>,
    pub sigma_tperp: Vec<f64>,
    pub sigma_uperp: Vec<f64>,
    pub sigma_h: Vec<f64>,
    pub sigma_e2: f64,
    pub sigma_f2: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a0: f64,
    pub sigma_g2: f64,
}

impl ThetaRecord {
    pub fn from_theta(theta: &Theta) -> Self {
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<_>>();
        ThetaRecord {
            w: MatrixRecord::from_matrix(&theta.w),
            c: MatrixRecord::from_matrix(&theta.c),
            w_perp: MatrixRecord::from_matrix(&theta.w_perp),
            c_perp: MatrixRecord::from_matrix(&theta.c_perp),
            b_tu: v(&theta.b_tu),
            sigma_t: v(&theta.sigma_t),
            sigma_tperp: v(&theta.sigma_tperp),
            sigma_uperp: v(&theta.sigma_uperp),
            sigma_h: v(&theta.sigma_h),
            sigma_e2: theta.sigma_e2,
            sigma_f2: theta.sigma_f2,
            a: v(&theta.a),
            b: v(&theta.b),
            a0: theta.a0,
            sigma_g2: theta.sigma_g2,
        }
    }

    pub fn to_theta(&self, family: Family) -> Result<Theta> {
        let v = |x: &[f64]| DVector::from_column_slice(x);
        let theta = Theta {
            w: self.w.to_matrix("w")?,
            c: self.c.to_matrix("c")?,
            w_perp: self.w_perp.to_matrix("w_perp")?,
            c_perp: self.c_perp.to_matrix("c_perp")?,
            b_tu: v(&self.b_tu),
            sigma_t: v(&self.sigma_t),
            sigma_tperp: v(&self.sigma_tperp),
            sigma_uperp: v(&self.sigma_uperp),
            sigma_h: v(&self.sigma_h),
            sigma_e2: self.sigma_e2,
            sigma_f2: self.sigma_f2,
            a: v(&self.a),
            b: v(&self.b),
            a0: self.a0,
            sigma_g2: self.sigma_g2,
            family,
        };
        theta.check_shapes()?;
        Ok(theta)
    }
}

/// How the stored parameters were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub iterations: usize,
    pub final_loglik: f64,
    pub converged: bool,
    pub armijo_stalls: usize,
    pub quad_nodes: Option<usize>,
    pub config: FitConfig,
}

/// Fitted model as persisted on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub dims: ModelDims,
    pub family: Family,
    pub theta: ThetaRecord,
    /// Means removed from the training data, applied again at prediction.
    pub centering: Centering,
    pub fit: FitMetadata,
}

impl ModelFile {
    pub fn new(fit: &FitResult, dims: ModelDims, centering: Centering, config: &FitConfig) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            dims,
            family: fit.theta.family,
            theta: ThetaRecord::from_theta(&fit.theta),
            centering,
            fit: FitMetadata {
                iterations: fit.iterations,
                final_loglik: fit.final_loglik,
                converged: fit.converged,
                armijo_stalls: fit.armijo_stalls,
                quad_nodes: fit.quad_nodes,
                config: config.clone(),
            },
        }
    }

    pub fn theta(&self) -> Result<Theta> {
        let theta = self.theta.to_theta(self.family)?;
        let d = &self.dims;
        if (theta.p(), theta.q(), theta.r(), theta.r_x(), theta.r_y()) != (d.p, d.q, d.r, d.r_x, d.r_y) {
            return Err(Error::DimensionMismatch("stored parameters disagree with stored dimensions".into()));
        }
        if self.centering.x_mean.len() != d.p || self.centering.y_mean.len() != d.q {
            return Err(Error::DimensionMismatch("stored centering disagrees with stored dimensions".into()));
        }
        Ok(theta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::FormatVersion(v.min(u32::MAX as u64) as u32)),
            None => return Err(Error::InvalidData("model file has no format_version".into())),
        }
        let file: ModelFile = serde_json::from_value(value)?;
        file.theta()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}
