//! k-NN out-of-distribution score and modality-gap summaries.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use serde::Serialize;

use crate::datastore::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::linalg::column_mean;
use crate::metrics::{recall_at_k, RECALL_BATCH};
use crate::rng::SeedStream;
use crate::solvers::{euclidean_cost, hungarian_match, knn_distance, logistic_probe, EXACT_LIMIT};

/// Neighbor rank used by [`ood_score`] unless told otherwise.
pub const OOD_K: usize = 10;

/// Accuracy of the best single-threshold rule separating `inside` (small
/// values) from `outside` (large values). Candidate thresholds are the
/// midpoints between consecutive sorted values plus one below everything;
/// ties go to the smaller threshold.
pub fn best_threshold_accuracy(inside: &[f64], outside: &[f64]) -> (f64, f64) {
    let mut all: Vec<(f64, bool)> = inside.iter().map(|&v| (v, true)).chain(outside.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = all.len() as f64;
    let below_all = all.first().map_or(0.0, |v| v.0 - 1.0);
    // Threshold t: predict "inside" when value <= t.
    let mut correct = outside.len() as f64;
    let mut best = (correct / total, below_all);
    let mut i = 0;
    while i < all.len() {
        // consume a run of equal values so thresholds never split ties
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            correct += if all[i].1 { 1.0 } else { -1.0 };
            i += 1;
        }
        let t = if i < all.len() { (v + all[i].0) / 2.0 } else { v + 1.0 };
        let acc = correct / total;
        if acc > best.0 {
            best = (acc, t);
        }
    }
    best
}

fn subsample(m: ArrayView2<f64>, n: usize, seed: u64, label: &str) -> Array2<f64> {
    if m.nrows() <= n {
        return m.to_owned();
    }
    let mut rng = SeedStream::new(seed).rng(label, 0);
    let mut rows = index::sample(&mut rng, m.nrows(), n).into_vec();
    rows.sort_unstable();
    m.select(ndarray::Axis(0), &rows)
}

/// How well the k-NN distance to `reference` separates `queries` from the
/// reference points themselves (self excluded). The larger set is
/// subsampled (seeded) to the size of the smaller. 0.5 means
/// indistinguishable, 1.0 perfectly separated.
pub fn ood_score(queries: ArrayView2<f64>, reference: ArrayView2<f64>, k: usize) -> Result<f64> {
    ood_score_seeded(queries, reference, k, 0)
}

pub fn ood_score_seeded(queries: ArrayView2<f64>, reference: ArrayView2<f64>, k: usize, seed: u64) -> Result<f64> {
    let n = queries.nrows().min(reference.nrows());
    if n <= k {
        return Err(Error::KTooLarge { k, n });
    }
    let q = subsample(queries, n, seed, "ood-queries");
    let r = subsample(reference, n, seed, "ood-reference");
    let dq = knn_distance(q.view(), r.view(), k, false)?;
    let dr = knn_distance(r.view(), r.view(), k, true)?;
    Ok(best_threshold_accuracy(&dr, &dq).0)
}

/// Distances feeding [`ood_score`], for histograms.
pub fn ood_distances(queries: ArrayView2<f64>, reference: ArrayView2<f64>, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = queries.nrows().min(reference.nrows());
    if n <= k {
        return Err(Error::KTooLarge { k, n });
    }
    let q = subsample(queries, n, 0, "ood-queries");
    let r = subsample(reference, n, 0, "ood-reference");
    Ok((knn_distance(q.view(), r.view(), k, false)?, knn_distance(r.view(), r.view(), k, true)?))
}

/// `bins` equal-width bins over `[lo, hi]`; returns `(left edges, counts)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<usize>) {
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    ((0..bins).map(|b| lo + b as f64 * width).collect(), counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapConfig {
    /// Per-domain cap for the transport distance.
    pub max_points: usize,
    pub repeats: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { max_points: EXACT_LIMIT, repeats: 3, k: OOD_K, seed: 0 }
    }
}

/// Modality-gap measurements on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapMetrics {
    /// Distance between the two domain means.
    pub dim: f64,
    pub wasserstein: f64,
    /// Accuracy of a logistic probe telling the domains apart.
    pub separability: f64,
    /// OOD score of domain b against domain a.
    pub ood_score: f64,
    pub recall_at_1: f64,
}

/// Before/after comparison for one intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    pub before: GapMetrics,
    pub after: GapMetrics,
}

pub fn mean_difference(ds: &EmbeddingDataset) -> f64 {
    let d: Array1<f64> = column_mean(ds.domain_a()) - column_mean(ds.domain_b());
    d.dot(&d).sqrt()
}

/// Transport distance between the two domain clouds with uniform weights,
/// averaged over `repeats` subsamples of at most `max_points` per domain.
pub fn domain_wasserstein(ds: &EmbeddingDataset, cfg: &GapConfig) -> Result<f64> {
    let n = ds.len().min(cfg.max_points);
    if n == 0 {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut total = 0.0;
    for rep in 0..cfg.repeats.max(1) {
        let seed = cfg.seed.wrapping_add(rep as u64);
        // one row set for both domains keeps the pairs together
        let a = subsample(ds.domain_a(), n, seed, "gap-w");
        let b = subsample(ds.domain_b(), n, seed, "gap-w");
        // Equal uniform weights: an optimal plan is a permutation.
        let cost = euclidean_cost(a.view(), b.view());
        let p = hungarian_match((-&cost).view())?;
        total += p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>() / n as f64;
    }
    Ok(total / cfg.repeats.max(1) as f64)
}

pub fn gap_metrics(ds: &EmbeddingDataset, cfg: &GapConfig) -> Result<GapMetrics> {
    let stacked = ds.stacked();
    let labels: Vec<bool> = (0..stacked.nrows()).map(|i| i < ds.len()).collect();
    let separability = match logistic_probe(stacked.view(), &labels) {
        Ok(p) => p.accuracy,
        Err(Error::SingleClass) => 0.5,
        Err(e) => return Err(e),
    };
    Ok(GapMetrics {
        dim: mean_difference(ds),
        wasserstein: domain_wasserstein(ds, cfg)?,
        separability,
        ood_score: ood_score_seeded(ds.domain_b(), ds.domain_a(), cfg.k, cfg.seed)?,
        recall_at_1: recall_at_k(ds.domain_a(), ds.domain_b(), 1, RECALL_BATCH)?,
    })
}

pub fn gap_report(before: &EmbeddingDataset, after: &EmbeddingDataset, cfg: &GapConfig) -> Result<GapReport> {
    Ok(GapReport { before: gap_metrics(before, cfg)?, after: gap_metrics(after, cfg)? })
}
