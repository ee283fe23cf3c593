//! Energy, modality scores, bridges and the modality-specific ratios.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::datastore::{BinaryMask, Dictionary, EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};
use crate::solvers::solve_ot;

/// Default unimodality threshold τ.
pub const DEFAULT_TAU: f64 = 0.05;

/// Grid scanned by [`select_tau_by_bridge`]: 0.01, 0.02, …, 0.25.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=25).map(|i| i as f64 / 100.0).collect()
}

/// Per-atom mean squared activation and firing frequency in each domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyProfile {
    pub e_img: Array1<f64>,
    pub e_txt: Array1<f64>,
    pub e_mean: Array1<f64>,
    pub freq_img: Array1<f64>,
    pub freq_txt: Array1<f64>,
}

impl EnergyProfile {
    pub fn len(&self) -> usize {
        self.e_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_mean.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let p = |v: &Array1<f64>| perm.iter().map(|&i| v[i]).collect::<Array1<f64>>();
        Self {
            e_img: p(&self.e_img),
            e_txt: p(&self.e_txt),
            e_mean: p(&self.e_mean),
            freq_img: p(&self.freq_img),
            freq_txt: p(&self.freq_txt),
        }
    }
}

fn moments(z: &SparseCode) -> (Array1<f64>, Array1<f64>) {
    let k = z.n_atoms();
    let mut e = Array1::zeros(k);
    let mut f = Array1::zeros(k);
    for (&j, &v) in z.indices().iter().zip(z.values()) {
        e[j] += v * v;
        f[j] += 1.0;
    }
    let n = z.n_rows().max(1) as f64;
    (e / n, f / n)
}

pub fn energy_profile(zi: &SparseCode, zt: &SparseCode) -> Result<EnergyProfile> {
    if zi.n_atoms() != zt.n_atoms() {
        return Err(Error::Shape(format!("{} vs {} atoms", zi.n_atoms(), zt.n_atoms())));
    }
    let (e_img, freq_img) = moments(zi);
    let (e_txt, freq_txt) = moments(zt);
    let e_mean = (&e_img + &e_txt) / 2.0;
    Ok(EnergyProfile { e_img, e_txt, e_mean, freq_img, freq_txt })
}

/// Modality score `μ` and the three-way split of atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalityStructure {
    pub mu: Array1<f64>,
    pub tau: f64,
    /// Bimodal atoms: `μ ∈ [τ, 1 − τ]`.
    pub delta: BinaryMask,
    /// Image-only atoms: `μ > 1 − τ`.
    pub delta_img: BinaryMask,
    /// Text-only atoms: `μ < τ`.
    pub delta_txt: BinaryMask,
}

impl ModalityStructure {
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            mu: perm.iter().map(|&i| self.mu[i]).collect(),
            tau: self.tau,
            delta: self.delta.permuted(perm),
            delta_img: self.delta_img.permuted(perm),
            delta_txt: self.delta_txt.permuted(perm),
        }
    }

    pub fn n_bimodal(&self) -> usize {
        self.delta.count()
    }
}

/// `μ_k = E_img / (E_img + E_txt)`; atoms with no energy get `μ = 0.5`.
pub fn modality_structure(ep: &EnergyProfile, tau: f64) -> Result<ModalityStructure> {
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Config(format!("τ = {tau} must lie in (0, 0.5)")));
    }
    let mu: Array1<f64> = ep
        .e_img
        .iter()
        .zip(&ep.e_txt)
        .map(|(a, b)| if a + b > 0.0 { a / (a + b) } else { 0.5 })
        .collect();
    let delta = mu.iter().map(|&m| m >= tau && m <= 1.0 - tau).collect();
    let delta_img = mu.iter().map(|&m| m > 1.0 - tau).collect();
    let delta_txt = mu.iter().map(|&m| m < tau).collect();
    Ok(ModalityStructure {
        mu,
        tau,
        delta: BinaryMask::new(delta),
        delta_img: BinaryMask::new(delta_img),
        delta_txt: BinaryMask::new(delta_txt),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeKind {
    Sigma,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeMatrix {
    pub values: Array2<f64>,
    pub kind: BridgeKind,
}

impl BridgeMatrix {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = perm.len();
        Self {
            values: Array2::from_shape_fn((k, k), |(i, j)| self.values[[perm[i], perm[j]]]),
            kind: self.kind,
        }
    }
}

/// `B_Σ = Σ ⊙ (D Dᵀ)` with `Σ = E[z_img(x)ᵀ z_txt(x')]` over aligned pairs.
pub fn bridge_sigma(zi: &SparseCode, zt: &SparseCode, dict: &Dictionary) -> Result<BridgeMatrix> {
    let k = dict.len();
    if zi.n_rows() != zt.n_rows() {
        return Err(Error::PairingMismatch { rows_a: zi.n_rows(), rows_b: zt.n_rows(), offset: 0 });
    }
    if zi.n_atoms() != k || zt.n_atoms() != k {
        return Err(Error::Shape("codes do not match the dictionary".into()));
    }
    let mut sigma = Array2::<f64>::zeros((k, k));
    for r in 0..zi.n_rows() {
        for (a, va) in zi.row_iter(r) {
            for (b, vb) in zt.row_iter(r) {
                sigma[[a, b]] += va * vb;
            }
        }
    }
    if zi.n_rows() > 0 {
        sigma /= zi.n_rows() as f64;
    }
    Ok(BridgeMatrix { values: sigma * dict.gram(), kind: BridgeKind::Sigma })
}

/// `B_Γ = Γ ⊙ (D Dᵀ)` where `Γ` is the optimal plan between the image and
/// text energy distributions under cost `1 − D Dᵀ`. Returns the transport
/// cost `c` alongside; the total mass of `B_Γ` is `1 − c`.
pub fn bridge_gamma(ep: &EnergyProfile, dict: &Dictionary) -> Result<(BridgeMatrix, f64)> {
    let si = ep.e_img.sum();
    let st = ep.e_txt.sum();
    if !(si > 0.0 && st > 0.0) {
        return Err(Error::Degenerate("a domain has zero total energy".into()));
    }
    let a = &ep.e_img / si;
    let b = &ep.e_txt / st;
    let g = dict.gram();
    let cost = g.mapv(|v| 1.0 - v);
    let plan = solve_ot(cost.view(), a.view(), b.view())?;
    Ok((BridgeMatrix { values: &plan.gamma * &g, kind: BridgeKind::Gamma }, plan.cost))
}

/// Mass split of a bridge matrix by atom class.
fn adjacency_mass(b: ArrayView2<f64>, delta: &BinaryMask, abs: bool) -> (f64, f64) {
    let (mut adj, mut uni) = (0.0, 0.0);
    for ((i, j), &v) in b.indexed_iter() {
        let v = if abs { v.abs() } else { v };
        if delta.get(i) || delta.get(j) {
            adj += v;
        } else {
            uni += v;
        }
    }
    (adj, uni)
}

/// Ratio of bridge mass touching a bimodal atom to mass between unimodal
/// atoms only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rho {
    /// `f64::MAX` when the denominator vanishes.
    pub value: f64,
    pub infinite: bool,
}

pub fn rho(b: &BridgeMatrix, ms: &ModalityStructure) -> Rho {
    let (adj, uni) = adjacency_mass(b.values.view(), &ms.delta, true);
    if uni == 0.0 {
        return Rho { value: f64::MAX, infinite: true };
    }
    Rho { value: adj / uni, infinite: false }
}

/// `(α/ε) · (1 − ε) / ((1 − c) − α)`.
pub fn fda(b_gamma: &BridgeMatrix, cost: f64, ms: &ModalityStructure, ep: &EnergyProfile) -> Result<f64> {
    let (alpha, _) = adjacency_mass(b_gamma.values.view(), &ms.delta, false);
    let total = ep.e_mean.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("dictionary carries no energy".into()));
    }
    let eps: f64 = ep
        .e_mean
        .iter()
        .enumerate()
        .filter(|(i, _)| ms.delta.get(*i))
        .map(|(_, e)| e)
        .sum::<f64>()
        / total;
    if eps <= 0.0 || eps >= 1.0 {
        return Err(Error::Degenerate(format!("bimodal energy share ε = {eps}")));
    }
    let rest = (1.0 - cost) - alpha;
    if rest.abs() <= 1e-12 {
        return Err(Error::Degenerate("all aligned mass touches bimodal atoms (α = 1 − c)".into()));
    }
    Ok(alpha / eps * (1.0 - eps) / rest)
}

/// Outcome of the bridge-based threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauChoice {
    pub tau: f64,
    /// Set when no grid value met the criterion and the default was used.
    pub fallback: bool,
}

/// Largest τ on the grid for which bridge mass between two image-only or two
/// text-only atoms stays below `fraction` of the total mass.
pub fn select_tau_by_bridge(b_sigma: &BridgeMatrix, ep: &EnergyProfile, grid: &[f64], fraction: f64) -> Result<TauChoice> {
    let total: f64 = b_sigma.values.iter().map(|v| v.abs()).sum();
    let mut best = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &tau in &sorted {
        let ms = modality_structure(ep, tau)?;
        let mut same = 0.0;
        for ((i, j), v) in b_sigma.values.indexed_iter() {
            let both_img = ms.delta_img.get(i) && ms.delta_img.get(j);
            let both_txt = ms.delta_txt.get(i) && ms.delta_txt.get(j);
            if both_img || both_txt {
                same += v.abs();
            }
        }
        if total == 0.0 || same < fraction * total {
            best = Some(tau);
        }
    }
    Ok(match best {
        Some(tau) => TauChoice { tau, fallback: false },
        None => TauChoice { tau: DEFAULT_TAU, fallback: true },
    })
}

/// Energy-weighted probing accuracy and the per-atom scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbingAccuracy {
    pub p_acc: f64,
    pub scores: Vec<f64>,
}

/// Every atom is used as a linear probe (sign of `(A − Ā)·D_i`) separating
/// image rows from text rows. Unimodal atoms score their accuracy against
/// their own modality; bimodal atoms score `1 − 2(max(acc, 1 − acc) − 0.5)`.
pub fn probing_accuracy(dict: &Dictionary, ds: &EmbeddingDataset, ms: &ModalityStructure, ep: &EnergyProfile) -> Result<ProbingAccuracy> {
    let k = dict.len();
    if ms.mu.len() != k || ep.len() != k {
        return Err(Error::Shape("modality structure does not match the dictionary".into()));
    }
    if ds.dim() != dict.dim() {
        return Err(Error::Shape("embedding and dictionary dimensions differ".into()));
    }
    let n = ds.len();
    let mut a = ds.stacked();
    let mean = a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(ds.dim()));
    a -= &mean;
    let proj = a.dot(&dict.atoms().t());
    let scores: Vec<f64> = (0..k)
        .map(|i| {
            let col = proj.column(i);
            let img_hits = col.iter().take(n).filter(|s| **s > 0.0).count();
            let txt_hits = col.iter().skip(n).filter(|s| **s <= 0.0).count();
            let acc = if 2 * n == 0 { 0.5 } else { (img_hits + txt_hits) as f64 / (2 * n) as f64 };
            if ms.delta_img.get(i) {
                acc
            } else if ms.delta_txt.get(i) {
                1.0 - acc
            } else {
                1.0 - 2.0 * (acc.max(1.0 - acc) - 0.5)
            }
        })
        .collect();
    let total = ep.e_mean.sum();
    let p_acc = if total > 0.0 {
        scores.iter().zip(&ep.e_mean).map(|(s, e)| s * e).sum::<f64>() / total
    } else {
        0.0
    };
    Ok(ProbingAccuracy { p_acc, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn code(k: usize, rows: Vec<Vec<(usize, f64)>>) -> SparseCode {
        SparseCode::from_rows(k, rows).unwrap()
    }

    #[test]
    fn energy_single_sample() {
        let zi = code(3, vec![vec![(1, 2.0)]]);
        let zt = code(3, vec![vec![]]);
        let ep = energy_profile(&zi, &zt).unwrap();
        assert_eq!(ep.e_img[1], 4.0);
        assert_eq!(ep.freq_img[1], 1.0);
        assert_eq!(ep.e_mean[1], 2.0);
        assert_eq!(ep.e_txt.sum(), 0.0);
        let z0 = code(3, vec![vec![], vec![]]);
        let ep0 = energy_profile(&z0, &z0).unwrap();
        assert_eq!(ep0.e_mean.sum() + ep0.freq_img.sum(), 0.0);
    }

    #[test]
    fn energy_matches_dense_oracle() {
        let mut rng = crate::rng::SeedStream::new(1).rng("ep", 0);
        use rand::Rng;
        let dense = Array2::from_shape_fn((30, 5), |_| if rng.random_bool(0.3) { rng.random_range(-2.0..2.0) } else { 0.0 });
        let z = SparseCode::from_dense(dense.view());
        let ep = energy_profile(&z, &z).unwrap();
        for j in 0..5 {
            let col = dense.column(j);
            let e = col.iter().map(|v| v * v).sum::<f64>() / 30.0;
            let f = col.iter().filter(|v| **v != 0.0).count() as f64 / 30.0;
            assert!((ep.e_img[j] - e).abs() < 1e-12);
            assert!((ep.freq_txt[j] - f).abs() < 1e-12);
        }
    }

    fn profile(e_img: Vec<f64>, e_txt: Vec<f64>) -> EnergyProfile {
        let e_img = Array1::from(e_img);
        let e_txt = Array1::from(e_txt);
        let e_mean = (&e_img + &e_txt) / 2.0;
        let k = e_img.len();
        EnergyProfile { e_img, e_txt, e_mean, freq_img: Array1::zeros(k), freq_txt: Array1::zeros(k) }
    }

    #[test]
    fn modality_masks() {
        let ep = profile(vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 2.0, 0.0]);
        let ms = modality_structure(&ep, DEFAULT_TAU).unwrap();
        assert_eq!(ms.mu.to_vec(), vec![0.5, 1.0, 0.0, 0.5]);
        assert_eq!(ms.delta.bits(), &[true, false, false, true]);
        assert_eq!(ms.delta_img.bits(), &[false, true, false, false]);
        assert_eq!(ms.delta_txt.bits(), &[false, false, true, false]);
        assert!(modality_structure(&ep, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn mu_scaling(e in proptest::collection::vec((0.01f64..5.0, 0.01f64..5.0), 1..8), lambda in 0.1f64..10.0) {
            let ep = profile(e.iter().map(|p| p.0).collect(), e.iter().map(|p| p.1).collect());
            let scaled = profile(e.iter().map(|p| lambda * lambda * p.0).collect(), e.iter().map(|p| p.1).collect());
            let ms = modality_structure(&scaled, 0.05).unwrap();
            for (i, (a, b)) in e.iter().enumerate() {
                let expect = lambda * lambda * a / (lambda * lambda * a + b);
                prop_assert!((ms.mu[i] - expect).abs() < 1e-12);
            }
            let both = profile(e.iter().map(|p| lambda * lambda * p.0).collect(), e.iter().map(|p| lambda * lambda * p.1).collect());
            let m0 = modality_structure(&ep, 0.05).unwrap();
            let m1 = modality_structure(&both, 0.05).unwrap();
            prop_assert_eq!(m0.delta, m1.delta);
        }
    }

    #[test]
    fn sigma_single_pair_self_bridge() {
        let dict = Dictionary::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let z = code(2, vec![vec![(1, 1.0)]]);
        let b = bridge_sigma(&z, &z, &dict).unwrap();
        assert_eq!(b.values, array![[0.0, 0.0], [0.0, 1.0]]);
        let zi = code(2, vec![vec![(0, 1.0)]]);
        let zt = code(2, vec![vec![(1, 1.0)]]);
        let b = bridge_sigma(&zi, &zt, &dict).unwrap();
        assert_eq!(b.values.diag().sum(), 0.0);
    }

    #[test]
    fn sigma_matches_outer_product_oracle() {
        let s = 0.5f64.sqrt();
        let dict = Dictionary::new(array![[1.0, 0.0], [0.0, 1.0], [s, s]]).unwrap();
        let di = array![[1.0, 0.0, 2.0], [0.0, -1.0, 0.0]];
        let dt = array![[0.5, 0.0, 0.0], [1.0, 1.0, 3.0]];
        let b = bridge_sigma(&SparseCode::from_dense(di.view()), &SparseCode::from_dense(dt.view()), &dict).unwrap();
        let g = dict.gram();
        for i in 0..3 {
            for j in 0..3 {
                let sig = (di[[0, i]] * dt[[0, j]] + di[[1, i]] * dt[[1, j]]) / 2.0;
                assert!((b.values[[i, j]] - sig * g[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_mass_identity() {
        let mut rng = crate::rng::SeedStream::new(4).rng("bg", 0);
        use rand::Rng;
        for _ in 0..20 {
            let k = 6;
            let atoms = Array2::from_shape_fn((k, 3), |_| rng.random_range(-1.0..1.0));
            let dict = Dictionary::from_unnormalized(atoms.view()).unwrap();
            let ep = profile((0..k).map(|_| rng.random_range(0.0..1.0)).collect(), (0..k).map(|_| rng.random_range(0.0..1.0)).collect());
            let (b, c) = bridge_gamma(&ep, &dict).unwrap();
            assert!((b.total() - (1.0 - c)).abs() < 1e-6);
        }
    }

    #[test]
    fn gamma_identical_profiles_on_orthonormal_dictionary() {
        let dict = Dictionary::new(Array2::eye(3)).unwrap();
        let ep = profile(vec![0.2, 0.3, 0.5], vec![0.2, 0.3, 0.5]);
        let (b, c) = bridge_gamma(&ep, &dict).unwrap();
        assert!(c.abs() < 1e-12);
        assert!((b.values.diag().sum() - 1.0).abs() < 1e-12);
        let zero = profile(vec![0.0; 3], vec![1.0; 3]);
        assert!(matches!(bridge_gamma(&zero, &dict), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gamma_colinear_pair_has_zero_cost() {
        let dict = Dictionary::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let ep = profile(vec![1.0, 0.0], vec![0.0, 1.0]);
        let (b, c) = bridge_gamma(&ep, &dict).unwrap();
        assert!(c.abs() < 1e-12);
        assert!((b.values[[0, 1]] - 1.0).abs() < 1e-12);
    }

    fn ms_from(delta: Vec<bool>) -> ModalityStructure {
        let k = delta.len();
        ModalityStructure {
            mu: Array1::from_elem(k, 0.5),
            tau: 0.05,
            delta_img: BinaryMask::new(delta.iter().map(|d| !d).collect()),
            delta_txt: BinaryMask::all(k, false),
            delta: BinaryMask::new(delta),
        }
    }

    #[test]
    fn rho_cases() {
        let b = BridgeMatrix { values: array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0], [4.0, 0.0, -0.5]], kind: BridgeKind::Sigma };
        // atom 0 bimodal: row 0 and column 0 adjacent
        let r = rho(&b, &ms_from(vec![true, false, false]));
        let adj = 1.0 + 2.0 + 0.5 + 0.0 + 4.0;
        let uni = 3.0 + 1.0 + 0.0 + 0.5;
        assert!((r.value - adj / uni).abs() < 1e-12);
        assert!(!r.infinite);
        let r = rho(&b, &ms_from(vec![true, true, true]));
        assert!(r.infinite);
        assert_eq!(r.value, f64::MAX);
    }

    #[test]
    fn fda_proportional_alignment_is_one() {
        // ε = 0.5, c = 0.2, α = ε(1 − c) = 0.4
        let b = BridgeMatrix { values: array![[0.4, 0.0], [0.0, 0.4]], kind: BridgeKind::Gamma };
        let ep = profile(vec![1.0, 1.0], vec![1.0, 1.0]);
        let ms = ms_from(vec![true, false]);
        assert!((fda(&b, 0.2, &ms, &ep).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(fda(&b, 0.2, &ms_from(vec![true, true]), &ep), Err(Error::Degenerate(_))));
        assert!(matches!(fda(&b, 0.6, &ms, &ep), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fda_two_atom_hand_plan() {
        // atoms at 60°; image energy on atom 0 only, text split evenly
        let dict = Dictionary::new(array![[1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]]).unwrap();
        let ep = profile(vec![1.0, 0.0], vec![0.5, 0.5]);
        let (b, c) = bridge_gamma(&ep, &dict).unwrap();
        // the only feasible plan sends 0.5 to each text atom
        assert!((c - 0.25).abs() < 1e-12);
        assert!((b.values[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((b.values[[0, 1]] - 0.25).abs() < 1e-12);
        let ms = ms_from(vec![false, true]);
        // E = (0.75, 0.25): α = 0.25, ε = 0.25
        let expect = (0.25 / 0.25) * 0.75 / (0.75 - 0.25);
        assert!((fda(&b, c, &ms, &ep).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn rho_and_fda_permutation_invariant() {
        use rand::Rng;
        let mut checked = 0;
        for seed in 0..20 {
            let mut rng = crate::rng::SeedStream::new(seed).rng("perm", 0);
            let atoms = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
            let dict = Dictionary::from_unnormalized(atoms.view()).unwrap();
            // atoms 0-1 image-only, 2-3 text-only, 4-5 shared
            let mut draw = |allowed: [usize; 4]| -> Vec<(usize, f64)> {
                let mut row = Vec::new();
                for j in allowed {
                    if rng.random_bool(0.6) {
                        row.push((j, rng.random_range(0.1..1.0)));
                    }
                }
                row
            };
            let zi = code(6, (0..15).map(|_| draw([0, 1, 4, 5])).collect());
            let zt = code(6, (0..15).map(|_| draw([2, 3, 4, 5])).collect());
            let ep = energy_profile(&zi, &zt).unwrap();
            let ms = modality_structure(&ep, 0.05).unwrap();
            let bs = bridge_sigma(&zi, &zt, &dict).unwrap();
            let (bg, c) = bridge_gamma(&ep, &dict).unwrap();
            let perm = [3, 5, 0, 2, 1, 4];
            let dict_p = dict.permuted(&perm).unwrap();
            let (zi_p, zt_p) = (zi.permute_atoms(&perm), zt.permute_atoms(&perm));
            let ep_p = energy_profile(&zi_p, &zt_p).unwrap();
            let ms_p = ms.permuted(&perm);
            let bs_p = bridge_sigma(&zi_p, &zt_p, &dict_p).unwrap();
            let (bg_p, c_p) = bridge_gamma(&ep_p, &dict_p).unwrap();
            assert!((rho(&bs, &ms).value - rho(&bs_p, &ms_p).value).abs() < 1e-9);
            assert!((c - c_p).abs() < 1e-9);
            match (fda(&bg, c, &ms, &ep), fda(&bg_p, c_p, &ms_p, &ep_p)) {
                (Ok(f), Ok(f_p)) => {
                    assert!((f - f_p).abs() < 1e-6 * f.abs().max(1.0));
                    checked += 1;
                }
                (Err(_), Err(_)) => {}
                other => panic!("permutation changed feasibility: {other:?}"),
            }
        }
        assert!(checked >= 10, "only {checked} non-degenerate instances");
    }

    #[test]
    fn tau_selection() {
        let ep = profile(vec![1.0, 0.9, 0.5, 0.0], vec![0.0, 0.1, 0.5, 1.0]);
        // bridges only touch the bimodal atom 2: criterion vacuous
        let mut v = Array2::zeros((4, 4));
        v[[2, 0]] = 1.0;
        v[[3, 2]] = 1.0;
        let b = BridgeMatrix { values: v.clone(), kind: BridgeKind::Sigma };
        let grid = default_tau_grid();
        assert_eq!(select_tau_by_bridge(&b, &ep, &grid, 0.05).unwrap(), TauChoice { tau: 0.25, fallback: false });
        // atoms 0 and 1 become an image-only pair once τ > 0.1
        v[[0, 1]] = 1.0;
        let b = BridgeMatrix { values: v, kind: BridgeKind::Sigma };
        let choice = select_tau_by_bridge(&b, &ep, &grid, 0.05).unwrap();
        assert!((choice.tau - 0.1).abs() < 1e-12, "{choice:?}");
    }

    #[test]
    fn probing_separable_gap_direction() {
        // image rows at +e0 offset, text at −e0; atom 0 lies along the gap
        let a = array![[1.0, 0.3], [1.0, -0.3], [1.0, 0.1]];
        let t = array![[-1.0, 0.2], [-1.0, -0.2], [-1.0, 0.0]];
        let ds = EmbeddingDataset::new(a, t, "").unwrap();
        let dict = Dictionary::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let ep = profile(vec![1.0, 0.0], vec![0.0, 0.0]);
        let ms = modality_structure(&ep, 0.05).unwrap();
        let pa = probing_accuracy(&dict, &ds, &ms, &ep).unwrap();
        assert_eq!(pa.scores[0], 1.0);
        assert_eq!(pa.p_acc, 1.0);
    }

    #[test]
    fn probing_bimodal_orthogonal_to_gap() {
        // symmetric Monte-Carlo clouds shifted along e0; a bimodal atom on e1
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::SeedStream::new(2).rng("probe", 0);
        let n = 4000;
        let a = Array2::from_shape_fn((n, 2), |(_, j)| { let z: f64 = StandardNormal.sample(&mut rng); z + if j == 0 { 1.0 } else { 0.0 } });
        let t = Array2::from_shape_fn((n, 2), |(_, j)| { let z: f64 = StandardNormal.sample(&mut rng); z - if j == 0 { 1.0 } else { 0.0 } });
        let ds = EmbeddingDataset::new(a, t, "").unwrap();
        let dict = Dictionary::new(array![[0.0, 1.0]]).unwrap();
        let ep = profile(vec![1.0], vec![1.0]);
        let ms = modality_structure(&ep, 0.05).unwrap();
        let pa = probing_accuracy(&dict, &ds, &ms, &ep).unwrap();
        assert!(pa.scores[0] > 0.95, "{}", pa.scores[0]);
        assert!((0.0..=1.0).contains(&pa.p_acc));
    }
}
