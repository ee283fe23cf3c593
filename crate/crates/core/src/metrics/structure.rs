//! Dictionary geometry, co-activation structure, seed stability and
//! insertion/deletion curves.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::datastore::{Dictionary, EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};
use crate::sae::SaeModel;
use crate::solvers::{spectral_quantities, wasserstein_atoms, SpectralQuantities};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DictionaryStats {
    pub dictionary_rank: SpectralQuantities,
    /// Ranks of the dictionary with each atom scaled by its energy.
    pub weighted_rank: Option<SpectralQuantities>,
    pub coherence: f64,
    /// `1 − ‖ZᵀZ‖₀ / K²` with column-normalized codes.
    pub connectivity: f64,
    pub coactivation_rank: Option<SpectralQuantities>,
    /// `‖ReLU(−(ZᵀZ) ⊙ (D Dᵀ))‖₂` (spectral norm).
    pub negative_interference: f64,
}

/// `max_{i≠j} D_i · D_j`; 0 for a single atom.
pub fn coherence(dict: &Dictionary) -> f64 {
    let g = dict.gram();
    let k = dict.len();
    let mut best = f64::NEG_INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                best = best.max(g[[i, j]]);
            }
        }
    }
    if best.is_finite() { best } else { 0.0 }
}

/// `ZᵀZ` for `Z` with unit-norm columns (zero columns stay zero).
pub fn coactivation(z: &SparseCode) -> Array2<f64> {
    let k = z.n_atoms();
    let mut norms = vec![0.0; k];
    for (&j, &v) in z.indices().iter().zip(z.values()) {
        norms[j] += v * v;
    }
    let inv: Vec<f64> = norms.iter().map(|n| if *n > 0.0 { 1.0 / n.sqrt() } else { 0.0 }).collect();
    let mut m = Array2::zeros((k, k));
    for r in 0..z.n_rows() {
        let (idx, val) = z.row(r);
        for (a, va) in idx.iter().zip(val) {
            for (b, vb) in idx.iter().zip(val) {
                m[[*a, *b]] += va * inv[*a] * vb * inv[*b];
            }
        }
    }
    m
}

fn spectral_norm(m: &Array2<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    crate::linalg::to_dmatrix(m.view())
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

fn optional_rank(m: &Array2<f64>) -> Result<Option<SpectralQuantities>> {
    match spectral_quantities(m.view()) {
        Ok(s) => Ok(Some(s)),
        Err(Error::ZeroMatrix) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn dictionary_stats(dict: &Dictionary, z: &SparseCode) -> Result<DictionaryStats> {
    let k = dict.len();
    if z.n_atoms() != k {
        return Err(Error::Shape("codes do not match the dictionary".into()));
    }
    let dictionary_rank = spectral_quantities(dict.atoms())?;
    let mut energy = vec![0.0; k];
    for (&j, &v) in z.indices().iter().zip(z.values()) {
        energy[j] += v * v;
    }
    let n = z.n_rows().max(1) as f64;
    let weighted = Array2::from_shape_fn((k, dict.dim()), |(i, c)| dict.atoms()[[i, c]] * energy[i] / n);
    let m = coactivation(z);
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    let interference = (-&m * &dict.gram()).mapv(|v| v.max(0.0));
    Ok(DictionaryStats {
        dictionary_rank,
        weighted_rank: optional_rank(&weighted)?,
        coherence: coherence(dict),
        connectivity: 1.0 - nnz as f64 / (k * k) as f64,
        coactivation_rank: optional_rank(&m)?,
        negative_interference: spectral_norm(&interference),
    })
}

/// Mean pairwise atom-set transport distance between dictionaries.
pub fn stability(dicts: &[Dictionary]) -> Result<f64> {
    if dicts.len() < 2 {
        return Err(Error::Config("stability needs at least two dictionaries".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..dicts.len())
        .flat_map(|i| (i + 1..dicts.len()).map(move |j| (i, j)))
        .collect();
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| wasserstein_atoms(&dicts[i], &dicts[j]))
        .collect::<Result<_>>()?;
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CCurves {
    pub c_insertion: f64,
    pub c_deletion: f64,
    /// Samples with at least one active atom and a nonzero R² range.
    pub samples: usize,
}

/// Insertion and deletion areas for one sample.
///
/// Atoms are chosen greedily: at each step the remaining active atom with the
/// largest `|z_j| · Δerr_j` is toggled, where `Δerr_j` is the drop (insertion)
/// or rise (deletion) in squared reconstruction error it causes. The curve is
/// `(R²(S) − R²(∅)) / (R²(full) − R²(∅))` sampled after each step, and its area
/// is the mean over steps. Returns `None` when the curve is undefined.
pub fn sample_curves(x: ArrayView1<f64>, mean: ArrayView1<f64>, code: &[(usize, f64)], dict: &Dictionary) -> Option<(f64, f64)> {
    let n = code.len();
    if n == 0 {
        return None;
    }
    let var = crate::linalg::sq_dist(x, mean);
    if var == 0.0 {
        return None;
    }
    let err = |set: &[bool]| -> f64 {
        let mut r = x.to_owned();
        for (on, &(j, v)) in set.iter().zip(code) {
            if *on {
                r.scaled_add(-v, &dict.atom(j));
            }
        }
        r.dot(&r)
    };
    let r2 = |e: f64| 1.0 - e / var;
    let r2_empty = r2(err(&vec![false; n]));
    let r2_full = r2(err(&vec![true; n]));
    let range = r2_full - r2_empty;
    if range.abs() < 1e-15 {
        return None;
    }
    let norm = |e: f64| (r2(e) - r2_empty) / range;

    let run = |insert: bool| -> f64 {
        let mut set = vec![!insert; n];
        let mut area = 0.0;
        for _ in 0..n {
            let base = err(&set);
            let mut best: Option<(usize, f64, f64)> = None;
            for c in 0..n {
                if set[c] != !insert {
                    continue;
                }
                set[c] = insert;
                let e = err(&set);
                set[c] = !insert;
                let delta = if insert { base - e } else { e - base };
                let score = code[c].1.abs() * delta;
                if best.is_none_or(|b| score > b.1) {
                    best = Some((c, score, e));
                }
            }
            let (c, _, e) = best.expect("an untoggled atom remains");
            set[c] = insert;
            area += norm(e);
        }
        area / n as f64
    };
    Some((run(true), run(false)))
}

/// Insertion/deletion areas averaged over the rows of both domains.
pub fn c_curves(ds: &EmbeddingDataset, model: &SaeModel) -> Result<CCurves> {
    let x = ds.stacked();
    let mean: Array1<f64> = crate::linalg::column_mean(x.view());
    let z = model.encode(x.view());
    let per: Vec<(f64, f64)> = (0..x.nrows())
        .into_par_iter()
        .filter_map(|i| {
            let code: Vec<(usize, f64)> = z.row_iter(i).collect();
            sample_curves(x.row(i), mean.view(), &code, &model.dictionary)
        })
        .collect();
    let m = per.len().max(1) as f64;
    Ok(CCurves {
        c_insertion: per.iter().map(|p| p.0).sum::<f64>() / m,
        c_deletion: per.iter().map(|p| p.1).sum::<f64>() / m,
        samples: per.len(),
    })
}
