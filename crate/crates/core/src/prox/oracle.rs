//! Brute-force reference for the group proximal operators.
//!
//! The minimiser of `t * |x| + 1/2 * |x - g|^2` lies on the segment between
//! `0` and `g`, so each group is solved by a golden-section search over the
//! scale `s` in `[0, 1]`, evaluating the objective on the explicit vector
//! `s * g`. No closed-form shrink factor is used. Intended for small
//! matrices in tests.

use crate::prox::GroupAxis;
use crate::tensor::Matrix;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn group_objective(scale: f64, group: &[f64], threshold: f64) -> f64 {
    let mut norm_sq = 0.0;
    let mut dist_sq = 0.0;
    for &g in group {
        let x = scale * g;
        norm_sq += x * x;
        dist_sq += (x - g) * (x - g);
    }
    threshold * norm_sq.sqrt() + 0.5 * dist_sq
}

fn minimize_scale(group: &[f64], threshold: f64) -> f64 {
    let f = |s: f64| group_objective(s, group, threshold);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut a = hi - GOLDEN * (hi - lo);
    let mut b = lo + GOLDEN * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-12 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - GOLDEN * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + GOLDEN * (hi - lo);
            fb = f(b);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the search cannot land exactly on the endpoints
    [0.0, mid, 1.0]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap_or(mid)
}

/// Numerically minimises the per-group proximal objective for every group of
/// `c` along `axis`.
pub fn prox_oracle(c: &Matrix, threshold: f64, axis: GroupAxis) -> Matrix {
    if threshold == 0.0 {
        return c.clone();
    }
    let mut out = c.clone();
    match axis {
        GroupAxis::Row => {
            for p in 0..c.rows() {
                let s = minimize_scale(c.row(p), threshold);
                for v in out.row_mut(p) {
                    *v *= s;
                }
            }
        }
        GroupAxis::Col => {
            for q in 0..c.cols() {
                let group: Vec<f64> = (0..c.rows()).map(|p| c.get(p, q)).collect();
                let s = minimize_scale(&group, threshold);
                for p in 0..c.rows() {
                    out.set(p, q, s * c.get(p, q));
                }
            }
        }
    }
    out
}
