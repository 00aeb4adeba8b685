use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::generate_with_rng;
use super::{
    lambda_grid, loading_inner_product, predict_outcome, replication_rng, ridge_fit_cv, rmsep, scaled_error,
    tpr_top_quarter, SimData, SimSetting,
};
use crate::em::FitConfig;
use crate::error::{Error, Result};
use crate::model::{Family, ModelDims, Theta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub settings: Vec<SimSetting>,
    pub fit: FitConfig,
    pub folds: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            settings: vec![SimSetting::default()],
            fit: FitConfig::default(),
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "glm-po2pls")]
    GlmPo2pls,
    #[serde(rename = "ridge-x")]
    RidgeX,
    #[serde(rename = "ridge-y")]
    RidgeY,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GlmPo2pls => "glm-po2pls",
            Method::RidgeX => "ridge-x",
            Method::RidgeY => "ridge-y",
        })
    }
}

/// One row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub setting_id: String,
    pub replication: usize,
    pub method: Method,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub setting_id: String,
    pub replication: usize,
    /// `None` on success, otherwise the reason the replication was skipped.
    pub failure: Option<String>,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub setting_id: String,
    pub method: Method,
    pub metric: String,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub settings: Vec<SimSetting>,
    pub outcomes: Vec<ReplicationOutcome>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl StudyReport {
    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.outcomes.iter().flat_map(|o| o.records.iter())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReplicationOutcome> {
        self.outcomes.iter().filter(|o| o.failure.is_some())
    }

    /// Successful-replication values of one metric.
    pub fn values(&self, setting_id: &str, method: Method, metric: &str) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter(|o| o.failure.is_none() && o.setting_id == setting_id)
            .flat_map(|o| o.records.iter())
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn summary(&self, setting_id: &str, method: Method, metric: &str) -> Option<Summary> {
        let mut v = self.values(setting_id, method, metric);
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Summary {
            setting_id: setting_id.to_string(),
            method,
            metric: metric.to_string(),
            count: v.len(),
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
        })
    }

    /// Summaries for every (setting, method, metric) present, in first-seen order.
    pub fn summaries(&self) -> Vec<Summary> {
        let mut keys: Vec<(String, Method, String)> = Vec::new();
        for r in self.records() {
            let key = (r.setting_id.clone(), r.method, r.metric.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.iter()
            .filter_map(|(s, m, k)| self.summary(s, *m, k))
            .collect()
    }

    /// Writes `setting_id,replication,method,metric,value` rows. Failed
    /// replications appear as a `failed` metric with value 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["setting_id", "replication", "method", "metric", "value"])?;
        for o in &self.outcomes {
            if o.failure.is_some() {
                w.write_record([
                    o.setting_id.as_str(),
                    &o.replication.to_string(),
                    &Method::GlmPo2pls.to_string(),
                    "failed",
                    "1",
                ])?;
                continue;
            }
            for r in &o.records {
                w.write_record([
                    r.setting_id.as_str(),
                    &r.replication.to_string(),
                    &r.method.to_string(),
                    &r.metric,
                    &r.value.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Flips joint components of `est` so each loading column has a
/// non-negative inner product with the truth.
fn align_signs(est: &Theta, truth: &Theta) -> Theta {
    let mut out = est.clone();
    for k in 0..est.r().min(truth.r()) {
        if est.w.column(k).dot(&truth.w.column(k)) < 0.0 {
            out.w.column_mut(k).neg_mut();
            out.c.column_mut(k).neg_mut();
            out.a[k] = -out.a[k];
            out.b[k] = -out.b[k];
        }
    }
    out
}

fn component_name(base: &str, k: usize, r: usize) -> String {
    if r == 1 {
        base.to_string()
    } else {
        format!("{base}_{}", k + 1)
    }
}

fn replicate(setting: &SimSetting, rep: usize, fit_config: &FitConfig, folds: usize) -> Result<Vec<Record>> {
    let mut rng = replication_rng(setting.seed, rep as u64);
    let SimData {
        train,
        test,
        truth,
        test_linear_predictor,
        ..
    } = generate_with_rng(setting, &mut rng)?;
    let fold_seed: u64 = rng.random();

    let dims = ModelDims::new(setting.p, setting.q, setting.r, setting.r_x, setting.r_y, setting.n)?;
    let fit = crate::fit(&train, &dims, fit_config)?;
    let est = align_signs(&fit.theta, &truth);
    let target = match setting.family {
        Family::Gaussian => test.z.clone(),
        Family::Bernoulli => test_linear_predictor,
    };

    let mut records = Vec::new();
    let mut push = |method: Method, metric: String, value: f64| {
        records.push(Record {
            setting_id: setting.id.clone(),
            replication: rep,
            method,
            metric,
            value,
        })
    };

    let r = setting.r;
    for k in 0..r {
        push(Method::GlmPo2pls, component_name("scaled_error_a", k, r), scaled_error(est.a[k], truth.a[k])?);
        push(Method::GlmPo2pls, component_name("scaled_error_b", k, r), scaled_error(est.b[k], truth.b[k])?);
    }
    let pred = predict_outcome(&est, &test.x, &test.y)?;
    push(Method::GlmPo2pls, "rmsep".into(), rmsep(&pred, &target)?);
    for (name, e, t) in [("inner_w", &est.w, &truth.w), ("inner_c", &est.c, &truth.c)] {
        for (k, v) in loading_inner_product(e, t)?.into_iter().enumerate() {
            push(Method::GlmPo2pls, component_name(name, k, r), v);
        }
    }
    let w_true: DVector<f64> = truth.w.column(0).into_owned();
    let c_true: DVector<f64> = truth.c.column(0).into_owned();
    push(Method::GlmPo2pls, "tpr_x".into(), tpr_top_quarter(&est.w.column(0).into_owned(), &w_true)?);
    if setting.q >= 4 {
        push(Method::GlmPo2pls, "tpr_y".into(), tpr_top_quarter(&est.c.column(0).into_owned(), &c_true)?);
    }
    push(Method::GlmPo2pls, "iterations".into(), fit.iterations as f64);
    push(Method::GlmPo2pls, "converged".into(), f64::from(u8::from(fit.converged)));

    let ridge_x = ridge_fit_cv(&train.x, &train.z, &lambda_grid(setting.p, setting.n), folds, setting.family, fold_seed)?;
    push(Method::RidgeX, "rmsep".into(), rmsep(&ridge_x.predict(&test.x), &target)?);
    push(Method::RidgeX, "tpr_x".into(), tpr_top_quarter(&ridge_x.coef, &w_true)?);
    push(Method::RidgeX, "lambda".into(), ridge_x.lambda);

    let ridge_y = ridge_fit_cv(&train.y, &train.z, &lambda_grid(setting.q, setting.n), folds, setting.family, fold_seed)?;
    push(Method::RidgeY, "rmsep".into(), rmsep(&ridge_y.predict(&test.y), &target)?);
    if setting.q >= 4 {
        push(Method::RidgeY, "tpr_y".into(), tpr_top_quarter(&ridge_y.coef, &c_true)?);
    }
    push(Method::RidgeY, "lambda".into(), ridge_y.lambda);
    Ok(records)
}

/// Runs every replication of every setting in parallel. Each replication
/// owns a generator derived from `(setting.seed, replication)`, so the
/// report is identical for identical input. Failed replications are kept
/// with their reason and excluded from summaries. With `out`, the report
/// is written as CSV and the settings as a `.settings.json` sidecar.
pub fn run_study(config: &StudyConfig, out: Option<&Path>) -> Result<StudyReport> {
    for s in &config.settings {
        s.validate()?;
    }
    let tasks: Vec<(&SimSetting, usize)> = config
        .settings
        .iter()
        .flat_map(|s| (0..s.replications).map(move |rep| (s, rep)))
        .collect();
    let outcomes: Vec<ReplicationOutcome> = tasks
        .par_iter()
        .map(|&(setting, rep)| match replicate(setting, rep, &config.fit, config.folds) {
            Ok(records) => ReplicationOutcome {
                setting_id: setting.id.clone(),
                replication: rep,
                failure: None,
                records,
            },
            Err(e) => {
                warn!("setting {} replication {rep} failed: {e}", setting.id);
                ReplicationOutcome {
                    setting_id: setting.id.clone(),
                    replication: rep,
                    failure: Some(e.to_string()),
                    records: Vec::new(),
                }
            }
        })
        .collect();
    let report = StudyReport {
        settings: config.settings.clone(),
        outcomes,
    };
    if let Some(path) = out {
        report.write_csv(File::create(path).map_err(|e| Error::file(path, e))?)?;
        let sidecar = path.with_extension("settings.json");
        let file = File::create(&sidecar).map_err(|e| Error::file(&sidecar, e))?;
        serde_json::to_writer_pretty(file, config)?;
    }
    Ok(report)
}
