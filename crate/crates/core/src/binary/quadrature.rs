use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Theta;

/// Largest supported node count.
pub const MAX_NODES: usize = 50;

/// Gauss–Hermite rule for `∫ f(x) e^{−x²} dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Orthonormal Hermite values `p_0 … p_{m}` at `x`.
fn hermite_orthonormal(m: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(m + 1);
    p.push(PI.powf(-0.25));
    if m >= 1 {
        p.push(2f64.sqrt() * x * p[0]);
    }
    for k in 1..m {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p[k] - (kf / (kf + 1.0)).sqrt() * p[k - 1];
        p.push(next);
    }
    p
}

/// Nodes and weights of the `m`-point rule. Nodes start as eigenvalues of
/// the Jacobi matrix, are polished by Newton steps on the degree-`m`
/// polynomial, and weights come from the Christoffel function.
pub fn gauss_hermite_rule(m: usize) -> Result<HermiteRule> {
    if !(1..=MAX_NODES).contains(&m) {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Hermite node count must be in 1..={MAX_NODES}, got {m}"
        )));
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    for x in nodes.iter_mut() {
        for _ in 0..10 {
            let p = hermite_orthonormal(m, *x);
            let deriv = (2.0 * m as f64).sqrt() * p[m - 1];
            let step = p[m] / deriv;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / hermite_orthonormal(m - 1, x).iter().map(|v| v * v).sum::<f64>())
        .collect();

    for i in 0..m / 2 {
        let j = m - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Ok(HermiteRule { nodes, weights })
}

/// Tensor-product rule for the prior of `ν = (t, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub dim: usize,
    pub nodes_per_dim: usize,
    /// One row per grid point.
    pub points: DMatrix<f64>,
    /// Log product weights; `Σ exp = 1`.
    pub logweights: DVector<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// `Σ_m w_m φ(ν_m)`.
    pub fn expect<F: Fn(nalgebra::DVectorView<'_, f64>) -> f64>(&self, phi: F) -> f64 {
        let mut acc = 0.0;
        for m in 0..self.len() {
            let row = self.points.row(m).transpose();
            acc += self.logweights[m].exp() * phi(row.column(0));
        }
        acc
    }
}

/// Grid for a `dim`-dimensional Gaussian with covariance `cov`:
/// `ν_m = √2 ν*_m Lᵀ`, `cov = L Lᵀ`, with log-weights `Σ log(w*/√π)`.
pub fn build_grid_for(cov: &DMatrix<f64>, m: usize, budget: usize) -> Result<QuadratureGrid> {
    let dim = cov.nrows();
    let points = (m as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    if points > budget as u128 {
        return Err(Error::GridBudget {
            points,
            nodes: m,
            dim,
            budget,
        });
    }
    let rule = gauss_hermite_rule(m)?;
    let chol = linalg::cholesky(cov, "prior covariance of (t, u)")?;
    let l = chol.l();
    let g = points as usize;
    let log_norm: Vec<f64> = rule.weights.iter().map(|w| (w / PI.sqrt()).ln()).collect();

    let mut std_points = DMatrix::zeros(g, dim);
    let mut logweights = DVector::zeros(g);
    let mut idx = vec![0usize; dim];
    for row in 0..g {
        let mut lw = 0.0;
        for d in 0..dim {
            std_points[(row, d)] = 2f64.sqrt() * rule.nodes[idx[d]];
            lw += log_norm[idx[d]];
        }
        logweights[row] = lw;
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(QuadratureGrid {
        dim,
        nodes_per_dim: m,
        points: std_points * l.transpose(),
        logweights,
    })
}

/// Grid over the prior of `(t, u)` implied by `theta`.
pub fn build_grid(theta: &Theta, m: usize, budget: usize) -> Result<QuadratureGrid> {
    theta.check_shapes()?;
    build_grid_for(&theta.joint_score_cov(), m, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_PI: f64 = 1.772_453_850_905_516;

    #[test]
    fn small_rules_match_closed_forms() {
        let r1 = gauss_hermite_rule(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - SQRT_PI).abs() < 1e-14);

        let r2 = gauss_hermite_rule(2).unwrap();
        let s = 0.5f64.sqrt();
        assert!((r2.nodes[0] + s).abs() < 1e-15 && (r2.nodes[1] - s).abs() < 1e-15);
        for w in &r2.weights {
            assert!((w - SQRT_PI / 2.0).abs() < 1e-14);
        }

        let r3 = gauss_hermite_rule(3).unwrap();
        let x = 1.5f64.sqrt();
        assert!((r3.nodes[0] + x).abs() < 1e-14 && r3.nodes[1] == 0.0 && (r3.nodes[2] - x).abs() < 1e-14);
        assert!((r3.weights[1] - 2.0 * SQRT_PI / 3.0).abs() < 1e-14);
        assert!((r3.weights[0] - SQRT_PI / 6.0).abs() < 1e-14);
        assert!((r3.weights[2] - SQRT_PI / 6.0).abs() < 1e-14);
    }

    #[test]
    fn rules_are_exact_to_degree_2m_minus_1() {
        // ∫ x^{2j} e^{−x²} = Γ(j + 1/2)
        let even_moment = |j: usize| -> f64 { (0..j).fold(SQRT_PI, |acc, i| acc * (i as f64 + 0.5)) };
        for m in 1..=MAX_NODES {
            let rule = gauss_hermite_rule(m).unwrap();
            assert!((rule.weights.iter().sum::<f64>() - SQRT_PI).abs() < 1e-10 * SQRT_PI, "m={m}");
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for i in 0..m {
                assert_eq!(rule.nodes[i], -rule.nodes[m - 1 - i]);
            }
            for k in 0..(2 * m).min(24) {
                let got: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                // rounding scale of the sum itself
                let scale: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.abs().powi(k as i32)).sum();
                let want = if k % 2 == 1 { 0.0 } else { even_moment(k / 2) };
                assert!((got - want).abs() <= 1e-10 * scale.max(1.0), "m={m} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn node_count_is_bounded() {
        assert!(gauss_hermite_rule(0).is_err());
        assert!(gauss_hermite_rule(51).is_err());
    }

    #[test]
    fn identity_grid_two_nodes() {
        let grid = build_grid_for(&DMatrix::identity(2, 2), 2, 1000).unwrap();
        assert_eq!(grid.len(), 4);
        for m in 0..4 {
            assert!((grid.points[(m, 0)].abs() - 1.0).abs() < 1e-15);
            assert!((grid.points[(m, 1)].abs() - 1.0).abs() < 1e-15);
            assert!((grid.logweights[m].exp() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_normalised_and_mean_zero() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.7, 0.7, 2.0]);
        for m in [1, 3, 8, 16] {
            let grid = build_grid_for(&cov, m, 1_000_000).unwrap();
            assert!((grid.logweights.map(f64::exp).sum() - 1.0).abs() < 1e-12);
            for d in 0..2 {
                assert!(grid.expect(|v| v[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = build_grid_for(&DMatrix::identity(4, 4), 40, 1_000_000).unwrap_err();
        assert!(matches!(err, Error::GridBudget { points: 2_560_000, .. }), "{err}");
    }
}
