use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::{Theta, VARIANCE_FLOOR};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    Shape,
    SemiOrthogonal(&'static str),
    FullColumnRank(&'static str),
    PositiveVariance(String),
    PositiveB(usize),
    StrictlyDecreasing(usize),
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Shape => write!(f, "field shapes"),
            Constraint::SemiOrthogonal(m) => write!(f, "semi-orthogonality of {m}"),
            Constraint::FullColumnRank(m) => write!(f, "full column rank of {m}"),
            Constraint::PositiveVariance(name) => write!(f, "positive variance {name}"),
            Constraint::PositiveB(k) => write!(f, "B[{k}] > 0"),
            Constraint::StrictlyDecreasing(k) => {
                write!(f, "diag(Sigma_t B) strictly decreasing at components {k},{}", k + 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    /// Size of the breach, in the units of the constraint.
    pub deviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, constraint: Constraint, deviation: f64) {
        self.violations.push(Violation {
            constraint,
            deviation,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "all constraints satisfied");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{} (deviation {:.3e})", v.constraint, v.deviation)?;
        }
        Ok(())
    }
}

/// Checks every identifiability and positivity constraint on `theta`.
/// `tol` bounds `‖GᵀG − I‖_F` for each loading matrix and the smallest
/// singular value accepted as full rank.
pub fn validate_constraints(theta: &Theta, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    if theta.check_shapes().is_err() {
        report.push(Constraint::Shape, f64::NAN);
        return report;
    }
    for (name, g) in [
        ("W", &theta.w),
        ("C", &theta.c),
        ("W_perp", &theta.w_perp),
        ("C_perp", &theta.c_perp),
    ] {
        let dev = linalg::frob_dev_from_identity(g);
        if !(dev <= tol) {
            report.push(Constraint::SemiOrthogonal(name), dev);
        }
    }
    for (name, a, b) in [
        ("[W W_perp]", &theta.w, &theta.w_perp),
        ("[C C_perp]", &theta.c, &theta.c_perp),
    ] {
        let joined = DMatrix::from_fn(a.nrows(), a.ncols() + b.ncols(), |i, j| {
            if j < a.ncols() {
                a[(i, j)]
            } else {
                b[(i, j - a.ncols())]
            }
        });
        if joined.ncols() > joined.nrows() {
            report.push(Constraint::FullColumnRank(name), (joined.ncols() - joined.nrows()) as f64);
            continue;
        }
        let smin = joined
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(smin > tol) {
            report.push(Constraint::FullColumnRank(name), smin);
        }
    }
    for (name, v) in theta.variances() {
        if !(v >= VARIANCE_FLOOR) {
            report.push(Constraint::PositiveVariance(name), VARIANCE_FLOOR - v);
        }
    }
    for (k, &bk) in theta.b_tu.iter().enumerate() {
        if !(bk > 0.0) {
            report.push(Constraint::PositiveB(k), -bk);
        }
    }
    let d = joint_strength(theta);
    for k in 1..d.len() {
        if !(d[k - 1] > d[k]) {
            report.push(Constraint::StrictlyDecreasing(k - 1), d[k] - d[k - 1]);
        }
    }
    report
}

fn joint_strength(theta: &Theta) -> DVector<f64> {
    theta.sigma_t.component_mul(&theta.b_tu)
}

fn argmax_abs(col: nalgebra::DVectorView<'_, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in col.iter().enumerate() {
        let a = v.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

fn leading_entry_negative(m: &DMatrix<f64>, k: usize) -> bool {
    argmax_abs(m.column(k).as_view()).is_some_and(|i| m[(i, k)] < 0.0)
}

/// Fixes the sign and order indeterminacy of `theta`.
///
/// Each loading column is flipped so its largest-magnitude entry is positive;
/// a flipped joint component also flips the matching column of `C` and the
/// entries of `a` and `b`. Joint components are then sorted by decreasing
/// `Σ_t B`, ties going to the larger `Σ_t` and then the lower index.
/// The observed-data distribution is unchanged.
pub fn canonicalize(theta: &Theta) -> Theta {
    let mut out = theta.clone();
    let r = out.r();
    for k in 0..r {
        if leading_entry_negative(&out.w, k) {
            out.w.column_mut(k).neg_mut();
            out.c.column_mut(k).neg_mut();
            out.a[k] = -out.a[k];
            out.b[k] = -out.b[k];
        }
    }
    for k in 0..out.r_x() {
        if leading_entry_negative(&out.w_perp, k) {
            out.w_perp.column_mut(k).neg_mut();
        }
    }
    for k in 0..out.r_y() {
        if leading_entry_negative(&out.c_perp, k) {
            out.c_perp.column_mut(k).neg_mut();
        }
    }

    let strength = joint_strength(&out);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| {
        strength[j]
            .partial_cmp(&strength[i])
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                out.sigma_t[j]
                    .partial_cmp(&out.sigma_t[i])
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| i.cmp(&j))
    });
    if order.iter().enumerate().any(|(pos, &k)| pos != k) {
        let src = out.clone();
        for (pos, &k) in order.iter().enumerate() {
            out.w.set_column(pos, &src.w.column(k));
            out.c.set_column(pos, &src.c.column(k));
            out.a[pos] = src.a[k];
            out.b[pos] = src.b[k];
            out.b_tu[pos] = src.b_tu[k];
            out.sigma_t[pos] = src.sigma_t[k];
            out.sigma_h[pos] = src.sigma_h[k];
        }
    }
    out
}
