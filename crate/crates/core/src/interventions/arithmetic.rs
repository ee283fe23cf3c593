//! Cross-domain query arithmetic: a source embedding plus an edit vector,
//! optionally restricted to the edit's bimodal concepts.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::datastore::BinaryMask;
use crate::error::{Error, Result};
use crate::linalg::normalize_rows_lenient;
use crate::sae::SaeModel;

use super::filter_unimodal;
use super::ood::ood_score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryVariant {
    /// `Î_src + Δ̂`.
    Classic,
    /// `Î_src + Δ̃`: the edit keeps only its bimodal concepts.
    SaeRestricted,
    /// `Î_src` alone.
    BaselineSrc,
    /// `Δ̂` alone.
    BaselineDelta,
}

impl QueryVariant {
    pub const ALL: [QueryVariant; 4] = [Self::Classic, Self::SaeRestricted, Self::BaselineSrc, Self::BaselineDelta];

    pub fn name(self) -> &'static str {
        match self {
            Self::Classic => "classic",
            Self::SaeRestricted => "sae_restricted",
            Self::BaselineSrc => "baseline_src",
            Self::BaselineDelta => "baseline_delta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub q: Array2<f64>,
    pub variant: QueryVariant,
}

/// Element-wise mean of several embedding sets of equal shape, e.g. several
/// edit captions per pair.
pub fn mean_pool(sets: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    let first = sets.first().ok_or_else(|| Error::Config("nothing to pool".into()))?;
    if let Some(s) = sets.iter().find(|s| s.dim() != first.dim()) {
        return Err(Error::Shape(format!("{:?} vs {:?}", s.dim(), first.dim())));
    }
    let mut out = Array2::zeros(first.dim());
    for s in sets {
        out += s;
    }
    Ok(out / sets.len() as f64)
}

/// The four query variants, all built from reconstructions.
pub fn build_queries(
    src: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    model: &SaeModel,
    bimodal: &BinaryMask,
) -> Result<Vec<QuerySet>> {
    if src.dim() != delta.dim() {
        return Err(Error::PairingMismatch { rows_a: src.nrows(), rows_b: delta.nrows(), offset: 0 });
    }
    if src.ncols() != model.dim() {
        return Err(Error::Shape(format!("inputs in R^{} but model in R^{}", src.ncols(), model.dim())));
    }
    if src.iter().chain(delta.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Config("queries contain non-finite values".into()));
    }
    let dict = &model.dictionary;
    let src_hat = model.encode(src).reconstruct(dict)?;
    let zd = model.encode(delta);
    let delta_hat = zd.reconstruct(dict)?;
    let delta_tilde = filter_unimodal(&zd, bimodal, dict)?;
    Ok(vec![
        QuerySet { q: &src_hat + &delta_hat, variant: QueryVariant::Classic },
        QuerySet { q: &src_hat + &delta_tilde, variant: QueryVariant::SaeRestricted },
        QuerySet { q: src_hat, variant: QueryVariant::BaselineSrc },
        QuerySet { q: delta_hat, variant: QueryVariant::BaselineDelta },
    ])
}

/// Fraction of queries whose own target (same row index) ranks within the
/// top `k` targets by cosine. Ties go to the lower index.
pub fn recall_at(q: ArrayView2<f64>, targets: ArrayView2<f64>, k: usize) -> Result<f64> {
    if q.dim() != targets.dim() {
        return Err(Error::PairingMismatch { rows_a: q.nrows(), rows_b: targets.nrows(), offset: 0 });
    }
    let n = q.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let s = normalize_rows_lenient(q).dot(&normalize_rows_lenient(targets).t());
    let hits = (0..n)
        .filter(|&i| {
            let own = s[[i, i]];
            let above = s.row(i).iter().enumerate().filter(|&(j, &v)| v > own || (v == own && j < i)).count();
            above < k
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// `(recall@10 + recall@50) / 2` over the full candidate set.
pub fn retrieval_recall(q: &QuerySet, targets: ArrayView2<f64>) -> Result<f64> {
    Ok((recall_at(q.q.view(), targets, 10)? + recall_at(q.q.view(), targets, 50)?) / 2.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ArithmeticRow {
    pub variant: QueryVariant,
    pub recall: f64,
    pub ood_score: f64,
}

/// Recall against `targets` and OOD score of the normalized queries
/// against `reference` for each variant.
pub fn arithmetic_report(
    queries: &[QuerySet],
    targets: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    k: usize,
) -> Result<Vec<ArithmeticRow>> {
    let reference = normalize_rows_lenient(reference);
    queries
        .iter()
        .map(|q| {
            Ok(ArithmeticRow {
                variant: q.variant,
                recall: retrieval_recall(q, targets)?,
                ood_score: ood_score(normalize_rows_lenient(q.q.view()).view(), reference.view(), k)?,
            })
        })
        .collect()
}
