//! Group soft-thresholding: the closed-form proximal operators of the row-wise
//! and column-wise group norms.
//!
//! For a group `g` and threshold `t = lambda / rho` the operator maps
//!
//! ```text
//! g  ->  (1 - t / |g|) * g     if |g| > t
//!        0                     otherwise
//! ```
//!
//! which minimises `t * |x| + 1/2 * |x - g|^2`. At `|g| == t` both branches
//! give zero; we take the zero branch so that exact zeros are produced and a
//! zero group is never divided by.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{col_l2_norms, row_l2_norms, Matrix};

pub mod oracle;

pub use oracle::prox_oracle;

/// Which groups of a matrix are penalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupAxis {
    /// Each row (one filter) is a group.
    Row,
    /// Each column (one filter-shape position) is a group.
    Col,
}

impl GroupAxis {
    pub fn norms(self, m: &Matrix) -> Vec<f64> {
        match self {
            GroupAxis::Row => row_l2_norms(m),
            GroupAxis::Col => col_l2_norms(m),
        }
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "prox threshold must be finite and non-negative, got {threshold}"
        )));
    }
    Ok(())
}

/// Multiplicative shrink factor for a group of norm `norm`.
#[inline]
fn shrink_factor(norm: f64, threshold: f64) -> f64 {
    if norm <= threshold {
        0.0
    } else {
        1.0 - threshold / norm
    }
}

/// Row-wise group soft-thresholding of `c` at `threshold`.
pub fn row_group_prox(c: &Matrix, threshold: f64) -> Result<Matrix> {
    check_threshold(threshold)?;
    let mut out = c.clone();
    for (p, norm) in row_l2_norms(c).into_iter().enumerate() {
        let s = shrink_factor(norm, threshold);
        for v in out.row_mut(p) {
            *v *= s;
        }
    }
    Ok(out)
}

/// Column-wise group soft-thresholding of `c` at `threshold`.
pub fn col_group_prox(c: &Matrix, threshold: f64) -> Result<Matrix> {
    check_threshold(threshold)?;
    let factors: Vec<f64> = col_l2_norms(c)
        .into_iter()
        .map(|n| shrink_factor(n, threshold))
        .collect();
    let mut out = c.clone();
    for p in 0..out.rows() {
        for (v, s) in out.row_mut(p).iter_mut().zip(&factors) {
            *v *= s;
        }
    }
    Ok(out)
}

pub fn group_prox(c: &Matrix, threshold: f64, axis: GroupAxis) -> Result<Matrix> {
    match axis {
        GroupAxis::Row => row_group_prox(c, threshold),
        GroupAxis::Col => col_group_prox(c, threshold),
    }
}

/// Per-layer proximal objective, divided through by `lambda`:
/// `sum of group norms of x + rho / (2 lambda) * |x - c|_F^2`.
pub fn prox_objective(x: &Matrix, c: &Matrix, lambda: f64, rho: f64, axis: GroupAxis) -> Result<f64> {
    if !(lambda > 0.0 && rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prox objective needs lambda > 0 and rho > 0 (got {lambda}, {rho})"
        )));
    }
    x.ensure_same_shape(c)?;
    let dist_sq: f64 = x
        .as_slice()
        .iter()
        .zip(c.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(axis.norms(x).iter().sum::<f64>() + rho / (2.0 * lambda) * dist_sq)
}

/// Number of all-zero groups along `axis`.
pub fn zero_groups(m: &Matrix, axis: GroupAxis) -> usize {
    axis.norms(m).into_iter().filter(|&n| n == 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn shrinks_row_of_norm_five() {
        let out = row_group_prox(&m(&[&[3.0, 4.0]]), 1.0).unwrap();
        assert!((out.get(0, 0) - 2.4).abs() < 1e-15);
        assert!((out.get(0, 1) - 3.2).abs() < 1e-15);
    }

    #[test]
    fn shrinks_column_of_norm_five() {
        let out = col_group_prox(&m(&[&[3.0], &[4.0]]), 1.0).unwrap();
        assert!((out.get(0, 0) - 2.4).abs() < 1e-15);
        assert!((out.get(1, 0) - 3.2).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_is_identity() {
        let c = m(&[&[1.5, -2.0, 0.0], &[0.0, 0.0, 0.0]]);
        assert_eq!(row_group_prox(&c, 0.0).unwrap(), c);
        assert_eq!(col_group_prox(&c, 0.0).unwrap(), c);
    }

    #[test]
    fn small_groups_vanish_and_boundary_is_zero() {
        let c = m(&[&[0.3, 0.4], &[3.0, 4.0]]);
        let out = row_group_prox(&c, 0.5).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0]);
        // norm exactly equal to the threshold
        let out = row_group_prox(&c, 5.0).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(zero_groups(&out, GroupAxis::Row), 2);
    }

    #[test]
    fn all_zero_input_stays_zero() {
        let z = Matrix::zeros(3, 4);
        assert_eq!(col_group_prox(&z, 0.7).unwrap(), z);
        assert_eq!(row_group_prox(&z, 0.0).unwrap(), z);
    }

    #[test]
    fn negative_threshold_rejected() {
        let c = Matrix::zeros(1, 1);
        assert!(matches!(row_group_prox(&c, -0.1), Err(Error::InvalidArgument(_))));
        assert!(matches!(col_group_prox(&c, f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn objective_of_equal_zero_inputs_is_zero() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(prox_objective(&z, &z, 1.0, 1.0, GroupAxis::Row).unwrap(), 0.0);
        assert!(prox_objective(&z, &z, 0.0, 1.0, GroupAxis::Row).is_err());
        assert!(prox_objective(&z, &Matrix::zeros(1, 2), 1.0, 1.0, GroupAxis::Col).is_err());
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        // Independent evaluation: explicit loops, hypot-based norms.
        let x = Matrix::from_fn(4, 4, |p, q| ((p * 7 + q * 3) % 5) as f64 - 2.0);
        let c = Matrix::from_fn(4, 4, |p, q| ((p * 2 + q * 5) % 7) as f64 * 0.5 - 1.0);
        let (lambda, rho) = (0.3, 1.7);
        for axis in [GroupAxis::Row, GroupAxis::Col] {
            let mut groups = 0.0;
            for g in 0..4 {
                let mut n = 0.0_f64;
                for k in 0..4 {
                    let v = if axis == GroupAxis::Row { x.get(g, k) } else { x.get(k, g) };
                    n = n.hypot(v);
                }
                groups += n;
            }
            let mut dist = 0.0;
            for p in 0..4 {
                for q in 0..4 {
                    dist += (x.get(p, q) - c.get(p, q)).powi(2);
                }
            }
            let expected = groups + rho / (2.0 * lambda) * dist;
            let got = prox_objective(&x, &c, lambda, rho, axis).unwrap();
            assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
            prop::collection::vec(-3.0f64..3.0, r * c)
                .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    fn pair_strategy() -> impl Strategy<Value = (Matrix, Matrix)> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            let one = move || {
                prop::collection::vec(-3.0f64..3.0, r * c)
                    .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
            };
            (one(), one())
        })
    }

    proptest! {
        #[test]
        fn col_prox_is_transposed_row_prox(c in matrix_strategy(), t in 0.0f64..4.0) {
            let a = col_group_prox(&c, t).unwrap();
            let b = row_group_prox(&c.transpose(), t).unwrap().transpose();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn norm_law_and_colinearity(c in matrix_strategy(), t in 0.0f64..4.0) {
            for axis in [GroupAxis::Row, GroupAxis::Col] {
                let out = group_prox(&c, t, axis).unwrap();
                let before = axis.norms(&c);
                let after = axis.norms(&out);
                for (b, a) in before.iter().zip(&after) {
                    prop_assert!((a - (b - t).max(0.0)).abs() <= 1e-12);
                }
                // each output entry is a non-negative multiple of its input entry
                for (o, i) in out.as_slice().iter().zip(c.as_slice()) {
                    prop_assert!(o * i >= 0.0);
                    prop_assert!(o.abs() <= i.abs());
                }
            }
        }

        #[test]
        fn nonexpansive((a, b) in pair_strategy(), t in 0.0f64..3.0) {
            for axis in [GroupAxis::Row, GroupAxis::Col] {
                let pa = group_prox(&a, t, axis).unwrap();
                let pb = group_prox(&b, t, axis).unwrap();
                let lhs = crate::tensor::frobenius_distance(&pa, &pb).unwrap();
                let rhs = crate::tensor::frobenius_distance(&a, &b).unwrap();
                prop_assert!(lhs <= rhs + 1e-12);
            }
        }

        #[test]
        fn larger_threshold_never_revives_groups(c in matrix_strategy(), t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            for axis in [GroupAxis::Row, GroupAxis::Col] {
                let zl = zero_groups(&group_prox(&c, lo, axis).unwrap(), axis);
                let zh = zero_groups(&group_prox(&c, hi, axis).unwrap(), axis);
                prop_assert!(zh >= zl);
            }
        }

        #[test]
        fn prox_beats_input_and_zero(c in matrix_strategy(), lambda in 0.01f64..2.0, rho in 0.1f64..5.0) {
            for axis in [GroupAxis::Row, GroupAxis::Col] {
                let x = group_prox(&c, lambda / rho, axis).unwrap();
                let zero = Matrix::zeros(c.rows(), c.cols());
                let fx = prox_objective(&x, &c, lambda, rho, axis).unwrap();
                let fc = prox_objective(&c, &c, lambda, rho, axis).unwrap();
                let f0 = prox_objective(&zero, &c, lambda, rho, axis).unwrap();
                prop_assert!(fx <= fc + 1e-12);
                prop_assert!(fx <= f0 + 1e-12);
            }
        }
    }
}
