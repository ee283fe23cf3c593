//! Agreement between learned and ground-truth dictionaries and codes.

use ndarray::Array2;

use crate::datastore::{Dictionary, SparseCode};
use crate::error::{Error, Result};
use crate::solvers::{hungarian_match, wasserstein_atoms};

/// Cosines between the columns of `z` (`N × K₁`) and `c` (`N × K₂`).
/// Zero columns have cosine 0 with everything.
pub fn column_cosines(z: &SparseCode, c: &SparseCode) -> Result<Array2<f64>> {
    if z.n_rows() != c.n_rows() {
        return Err(Error::Shape(format!("{} vs {} rows", z.n_rows(), c.n_rows())));
    }
    let (k1, k2) = (z.n_atoms(), c.n_atoms());
    let mut dots = Array2::<f64>::zeros((k1, k2));
    let mut nz = vec![0.0; k1];
    let mut nc = vec![0.0; k2];
    for r in 0..z.n_rows() {
        for (a, va) in z.row_iter(r) {
            nz[a] += va * va;
            for (b, vb) in c.row_iter(r) {
                dots[[a, b]] += va * vb;
            }
        }
        for (b, vb) in c.row_iter(r) {
            nc[b] += vb * vb;
        }
    }
    for ((a, b), v) in dots.indexed_iter_mut() {
        let d = (nz[a] * nc[b]).sqrt();
        *v = if d > 0.0 { *v / d } else { 0.0 };
    }
    Ok(dots)
}

/// Mean matching accuracy: the best one-to-one matching of learned code
/// columns to ground-truth columns by activation cosine, averaged over the
/// ground-truth atoms. The smaller side is padded with zero columns.
pub fn mma(z: &SparseCode, truth: &SparseCode) -> Result<f64> {
    let cos = column_cosines(z, truth)?;
    let (k1, k2) = cos.dim();
    if k2 == 0 {
        return Err(Error::Shape("ground truth has no atoms".into()));
    }
    let n = k1.max(k2);
    let mut score = Array2::zeros((n, n));
    score.slice_mut(ndarray::s![..k1, ..k2]).assign(&cos);
    let perm = hungarian_match(score.view())?;
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| score[[i, j]]).sum();
    Ok(total / k2 as f64)
}

/// Atom-set transport distance between a learned and a reference dictionary.
pub fn dictionary_distance(learned: &Dictionary, truth: &Dictionary) -> Result<f64> {
    wasserstein_atoms(learned, truth)
}
