//! Small dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::dataset::EnvironmentDataset;

/// Minimum-norm least squares with an intercept column appended.
///
/// `x` is row-major `n × p`. Returns `(β, intercept)`. Rank-deficient designs
/// are handled through the SVD pseudo-inverse.
pub fn least_squares(x: &[f64], y: &[f64], p: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[i * p + j] } else { 1.0 });
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (n.max(p + 1) as f64) * f64::EPSILON;
    let sol = svd
        .solve(&rhs, eps)
        .expect("both singular-vector sets were computed");
    (sol.as_slice()[..p].to_vec(), sol[p])
}

/// Pooled least squares of `y` on the listed columns (plus intercept).
/// Returns coefficients aligned with `cols`.
pub fn pooled_least_squares(ds: &EnvironmentDataset, cols: &[usize]) -> (Vec<f64>, f64) {
    let q = cols.len();
    let mut x = Vec::with_capacity(ds.n() * q);
    let mut y = Vec::with_capacity(ds.n());
    for b in ds.environments() {
        for (row, &t) in b.rows().zip(b.y()) {
            x.extend(cols.iter().map(|&c| row[c]));
            y.push(t);
        }
    }
    least_squares(&x, &y, q)
}
