//! Retrieval rankings under an additive modality component.
//!
//! An observed query is `v = c + m` (content plus modality). Against unit
//! candidates `y_i`, write `Δ_c(i, j) = ⟨c, y_i - y_j⟩` and
//! `Δ_m(i, j) = ⟨m, y_i - y_j⟩`. Cosine with `v` orders candidates like
//! `⟨v, y_i⟩`, so a pair swaps order exactly when `Δ_c (Δ_c + Δ_m) < 0`.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::Serialize;

fn cosines(q: ArrayView1<f64>, candidates: ArrayView2<f64>) -> Array1<f64> {
    let nq = q.dot(&q).sqrt();
    candidates.rows().into_iter().map(|y| q.dot(&y) / (nq * y.dot(&y).sqrt())).collect()
}

fn argsort_desc(v: &Array1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Ranking of `content + modality` equals the ranking of `content` alone.
/// Holds when `⟨modality, y_i⟩` is the same for every candidate.
pub fn check_constant_offset_invariance(
    content: ArrayView1<f64>,
    modality: ArrayView1<f64>,
    candidates: ArrayView2<f64>,
) -> bool {
    let v = &content + &modality;
    argsort_desc(&cosines(v.view(), candidates)) == argsort_desc(&cosines(content, candidates))
}

/// Spread `max_i ⟨m, y_i⟩ - min_i ⟨m, y_i⟩` of the modality projections.
pub fn modality_spread(modality: ArrayView1<f64>, candidates: ArrayView2<f64>) -> f64 {
    let p = candidates.dot(&modality);
    let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Every pair whose content margin exceeds the modality spread keeps its
/// order under the observed query.
pub fn check_bounded_spread(content: ArrayView1<f64>, modality: ArrayView1<f64>, candidates: ArrayView2<f64>) -> bool {
    let eps = modality_spread(modality, candidates);
    let sc = candidates.dot(&content);
    let v = &content + &modality;
    let so = cosines(v.view(), candidates);
    let n = sc.len();
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            let dc = sc[i] - sc[j];
            dc.abs() <= eps || (dc > 0.0) == (so[i] > so[j])
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlipAnalysis {
    /// Pairs with a strict order under both content and observed scores.
    pub pairs: usize,
    pub observed_flips: usize,
    pub predicted_flips: usize,
    /// Pairs where observation and prediction disagree.
    pub mismatches: usize,
}

/// Scores below this are treated as ties and skipped.
const TIE: f64 = 1e-12;

/// Compares observed order swaps (cosines with `content + modality` vs.
/// cosines with `content`) against the sign predicate on `Δ_c`, `Δ_m`.
pub fn flip_analysis(content: ArrayView1<f64>, modality: ArrayView1<f64>, candidates: ArrayView2<f64>) -> FlipAnalysis {
    let v = &content + &modality;
    let cc = cosines(content, candidates);
    let co = cosines(v.view(), candidates);
    let pc = candidates.dot(&content);
    let pm = candidates.dot(&modality);
    let n = cc.len();
    let mut out = FlipAnalysis { pairs: 0, observed_flips: 0, predicted_flips: 0, mismatches: 0 };
    for i in 0..n {
        for j in i + 1..n {
            let (dcos_c, dcos_o) = (cc[i] - cc[j], co[i] - co[j]);
            if dcos_c.abs() < TIE || dcos_o.abs() < TIE {
                continue;
            }
            let dc = pc[i] - pc[j];
            let dm = pm[i] - pm[j];
            let observed = (dcos_c > 0.0) != (dcos_o > 0.0);
            let predicted = dc * (dc + dm) < 0.0;
            out.pairs += 1;
            out.observed_flips += usize::from(observed);
            out.predicted_flips += usize::from(predicted);
            out.mismatches += usize::from(observed != predicted);
        }
    }
    out
}

/// The sign predicate identifies exactly the pairs whose order flips.
pub fn check_flip_characterization(content: ArrayView1<f64>, modality: ArrayView1<f64>, candidates: ArrayView2<f64>) -> bool {
    flip_analysis(content, modality, candidates).mismatches == 0
}

/// A planar instance with one strict flip: modality `e₁`, content
/// `½e₂ - ηe₁`, candidates `(±e₁ + e₂)/√2`. At `η = 0` the content scores tie.
pub fn two_dimensional_example(eta: f64) -> (Array1<f64>, Array1<f64>, ndarray::Array2<f64>) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    (
        ndarray::array![-eta, 0.5],
        ndarray::array![1.0, 0.0],
        ndarray::array![[r, r], [-r, r]],
    )
}
