//! Brute-force k-nearest-neighbor distances.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Euclidean distance from each query row to its `k`-th nearest reference row.
///
/// With `exclude_self` the queries must be the reference set itself and row
/// `i` never counts as its own neighbor.
pub fn knn_distance(
    queries: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    k: usize,
    exclude_self: bool,
) -> Result<Vec<f64>> {
    let available = reference.nrows() - usize::from(exclude_self && reference.nrows() > 0);
    if k == 0 || k > available {
        return Err(Error::KTooLarge {
            k,
            n: reference.nrows(),
        });
    }
    if queries.ncols() != reference.ncols() {
        return Err(Error::Shape(format!(
            "queries have {} columns, reference has {}",
            queries.ncols(),
            reference.ncols()
        )));
    }
    if exclude_self && queries.nrows() != reference.nrows() {
        return Err(Error::Shape(
            "self-exclusion requires the query set to be the reference set".into(),
        ));
    }
    Ok((0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            let mut d: Vec<f64> = reference
                .rows()
                .into_iter()
                .enumerate()
                .filter(|(j, _)| !(exclude_self && *j == i))
                .map(|(_, r)| crate::linalg::sq_dist(q, r))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect())
}
