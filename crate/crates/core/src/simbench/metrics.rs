use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `(est − truth) / truth`.
pub fn scaled_error(est: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::InvalidArgument("scaled error undefined for a zero truth".into()));
    }
    Ok((est - truth) / truth)
}

/// Root mean squared difference. For binary outcomes pass true and
/// predicted logits, not labels.
pub fn rmsep(predicted: &DVector<f64>, actual: &DVector<f64>) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "rmsep needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    Ok(((predicted - actual).norm_squared() / predicted.len() as f64).sqrt())
}

/// `|⟨est_k, truth_k⟩|` for each column.
pub fn loading_inner_product(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    if est.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!(
            "loading shapes differ: {:?} vs {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    Ok(est
        .column_iter()
        .zip(truth.column_iter())
        .map(|(e, t)| e.dot(&t).abs())
        .collect())
}

fn top_indices(scores: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].abs().total_cmp(&scores[i].abs()).then(i.cmp(&j)));
    idx.truncate(k);
    idx
}

/// Share of the true top `⌈p/4⌉` features (by absolute score) that are also
/// in the estimated top `⌈p/4⌉`. Ties go to the lower index.
pub fn tpr_top_quarter(est: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    let p = truth.len();
    if est.len() != p || p < 4 {
        return Err(Error::DimensionMismatch(format!(
            "tpr needs equal lengths of at least 4, got {} and {p}",
            est.len()
        )));
    }
    let k = p.div_ceil(4);
    let mut in_truth = vec![false; p];
    for i in top_indices(truth, k) {
        in_truth[i] = true;
    }
    let hits = top_indices(est, k).into_iter().filter(|&i| in_truth[i]).count();
    Ok(hits as f64 / k as f64)
}
