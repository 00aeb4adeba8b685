use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::DataSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeRow {
    pub component: usize,
    pub xty_singular_value: f64,
    pub xtx_eigenvalue: f64,
    pub yty_eigenvalue: f64,
}

/// Leading spectra of `XᵀY`, `XᵀX` and `YᵀY`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeTable {
    pub rows: Vec<ScreeRow>,
    /// Set when fewer rows than requested were available.
    pub notice: Option<String>,
}

fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Top `k` singular values of `XᵀY` and eigenvalues of `XᵀX`, `YᵀY`.
/// Requests beyond `min(N, p, q)` are truncated with a notice.
pub fn scree(data: &DataSet, k: usize) -> Result<ScreeTable> {
    if k == 0 {
        return Err(Error::InvalidArgument("scree needs at least one component".into()));
    }
    let avail = data.n().min(data.p()).min(data.q());
    let kept = k.min(avail);
    let notice = (kept < k).then(|| format!("requested {k} components, only {kept} available (min of N, p, q)"));
    let xty = singular_values_desc(&(data.x.transpose() * &data.y));
    // eigenvalues of XᵀX are the squared singular values of X
    let sx = singular_values_desc(&data.x);
    let sy = singular_values_desc(&data.y);
    let rows = (0..kept)
        .map(|j| ScreeRow {
            component: j + 1,
            xty_singular_value: xty[j],
            xtx_eigenvalue: sx[j] * sx[j],
            yty_eigenvalue: sy[j] * sy[j],
        })
        .collect();
    Ok(ScreeTable { rows, notice })
}

impl ScreeTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn rank_one_x_has_one_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = noise(&mut rng, 50, 1);
        let w = noise(&mut rng, 1, 6);
        let data = DataSet::new(&t * &w, noise(&mut rng, 50, 3), DVector::zeros(50), Family::Gaussian).unwrap();
        let table = scree(&data, 3).unwrap();
        assert!(table.rows[1].xtx_eigenvalue < 1e-8 * table.rows[0].xtx_eigenvalue);
        assert!(table.notice.is_none());
    }

    #[test]
    fn independent_blocks_have_small_cross_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let data = DataSet::new(noise(&mut rng, n, 8), noise(&mut rng, n, 5), DVector::zeros(n), Family::Gaussian).unwrap();
        let table = scree(&data, 2).unwrap();
        // ‖XᵀY‖/N ≈ √(8·5/N) ≪ 1 ≈ λ(XᵀX)/N
        let nf = n as f64;
        assert!(table.rows[0].xty_singular_value / nf < 0.1 * table.rows[0].xtx_eigenvalue / nf);
    }

    #[test]
    fn column_permutation_leaves_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = noise(&mut rng, 30, 5);
        let y = noise(&mut rng, 30, 4);
        let perm = DMatrix::from_fn(30, 5, |i, j| x[(i, (j + 2) % 5)]);
        let a = scree(&DataSet::new(x, y.clone(), DVector::zeros(30), Family::Gaussian).unwrap(), 4).unwrap();
        let b = scree(&DataSet::new(perm, y, DVector::zeros(30), Family::Gaussian).unwrap(), 4).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert!((ra.xtx_eigenvalue - rb.xtx_eigenvalue).abs() < 1e-10 * ra.xtx_eigenvalue);
        }
    }

    #[test]
    fn oversized_request_is_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = DataSet::new(noise(&mut rng, 10, 5), noise(&mut rng, 10, 3), DVector::zeros(10), Family::Gaussian).unwrap();
        let table = scree(&data, 7).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.notice.as_deref().unwrap().contains("only 3"));
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("component,xty_singular_value,xtx_eigenvalue,yty_eigenvalue\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
