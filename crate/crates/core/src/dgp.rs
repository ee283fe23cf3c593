//! Synthetic paired embeddings with known ground-truth dictionaries.
//!
//! `R^d` is split (after a random rotation) into three orthogonal blocks: an
//! image block holding the image-only atoms `D^I` and the image-side terms
//! `D^{B,I}`, a text block holding `D^T` and `D^{B,T}`, and a shared block
//! holding the bimodal atoms `D^B`. Each sample draws one image atom, one text
//! atom and `L - 1` bimodal concepts. The image embedding is
//!
//! ```text
//! x_I ∝ D^I_a + Σ_b (τ₁ β D^B_b + (1 - τ₁) β D^{B,I}_b)
//! ```
//!
//! and the text embedding mirrors it with `D^T` and `D^{B,T}`. The same data
//! is written two ways: the *separated* system keeps `D^B`, `D^{B,I}` and
//! `D^{B,T}` apart (14k atoms) while the *combined* system merges each bimodal
//! concept with its modality term into one atom per side (10k atoms).

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{Dictionary, EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub d: usize,
    /// Concept multiplier `k`: `k` image atoms, `k` text atoms, `4k` bimodal.
    pub k: usize,
    /// Code sparsity `L` per domain.
    pub l: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub seed: u64,
    /// Dimension of each of the three blocks; `floor(d / 3)` when unset.
    #[serde(default)]
    pub block_dim: Option<usize>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            d: 128,
            k: 8,
            l: 20,
            tau1: 0.7,
            tau2: 0.6,
            seed: 0,
            block_dim: None,
        }
    }
}

impl DgpConfig {
    pub fn block_dim(&self) -> usize {
        self.block_dim.unwrap_or(self.d / 3)
    }

    pub fn n_bimodal(&self) -> usize {
        4 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau1) {
            return Err(Error::Config(format!("tau1 = {} must lie in [0, 1]", self.tau1)));
        }
        if !(self.tau2 > 0.0 && self.tau2 < 1.0) {
            return Err(Error::Config(format!("tau2 = {} must lie in (0, 1)", self.tau2)));
        }
        if self.l < 2 {
            return Err(Error::Config(format!("L = {} must be at least 2", self.l)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.l - 1 > self.n_bimodal() {
            return Err(Error::Config(format!(
                "L - 1 = {} bimodal concepts per sample exceed the 4k = {} available",
                self.l - 1,
                self.n_bimodal()
            )));
        }
        let b = self.block_dim();
        if b == 0 || 3 * b > self.d {
            return Err(Error::Config(format!(
                "d = {} cannot host three orthogonal blocks of dimension {b}",
                self.d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomRole {
    ImageOnly,
    TextOnly,
    BimodalCore,
    BimodalImgTerm,
    BimodalTxtTerm,
    CombinedImg,
    CombinedTxt,
}

/// Which ground-truth system to score a learned model against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    /// All 14k separated atoms.
    Separated,
    /// `D^I ∪ D^T ∪ D^B` only (6k atoms): the separated system without the
    /// modality terms, which carry `(1 - τ₁)²` of the bimodal energy.
    Shared,
    /// The 10k combined atoms.
    Combined,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub config: DgpConfig,
    /// Order: `D^I, D^T, D^B, D^{B,I}, D^{B,T}`.
    pub separated: Dictionary,
    /// Order: `D^I, D^T, combined image atoms, combined text atoms`.
    pub combined: Dictionary,
    pub roles_separated: Vec<AtomRole>,
    pub roles_combined: Vec<AtomRole>,
    pub beta: f64,
}

impl GroundTruth {
    pub fn dictionary(&self, kind: GroundTruthKind) -> Dictionary {
        match kind {
            GroundTruthKind::Separated => self.separated.clone(),
            GroundTruthKind::Combined => self.combined.clone(),
            GroundTruthKind::Shared => {
                let n = 6 * self.config.k;
                Dictionary::new(self.separated.atoms().slice(s![..n, ..]).to_owned())
                    .expect("rows of a valid dictionary")
            }
        }
    }

    pub fn roles(&self, kind: GroundTruthKind) -> &[AtomRole] {
        match kind {
            GroundTruthKind::Separated => &self.roles_separated,
            GroundTruthKind::Combined => &self.roles_combined,
            GroundTruthKind::Shared => &self.roles_separated[..6 * self.config.k],
        }
    }

    /// Analytic cosine between paired combined atoms: the modality terms are
    /// orthogonal to each other and to `D^B`, so it is `τ₁² / (τ₁² + (1-τ₁)²)`.
    pub fn combined_pair_cosine(&self) -> f64 {
        let t = self.config.tau1;
        t * t / (t * t + (1.0 - t) * (1.0 - t))
    }
}

/// Coefficients `[c0, c1, c2, c3, c4]` of the quartic in `β` whose positive
/// root calibrates the expected paired cosine to `τ₂`.
///
/// With `m = L - 1` and `s = τ₁² + (1-τ₁)²`, block orthogonality gives
/// `E⟨x_I, x_T⟩ ≈ τ₁² m β² / (1 + s m β²)`; squaring `τ₂ (1 + s m β²) = τ₁² m β²`
/// yields the quartic below.
pub fn beta_polynomial(cfg: &DgpConfig) -> [f64; 5] {
    let m = (cfg.l - 1) as f64;
    let (t1, t2) = (cfg.tau1, cfg.tau2);
    let s = t1 * t1 + (1.0 - t1) * (1.0 - t1);
    [
        -t2 * t2,
        0.0,
        -2.0 * t2 * t2 * m * s,
        0.0,
        m * m * (t1 * t1 * t1 * t1 - t2 * t2 * s * s),
    ]
}

fn poly_eval(c: &[f64; 5], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &ci in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + ci;
    }
    (p, dp)
}

/// Unique positive real root of [`beta_polynomial`], via companion-matrix
/// eigenvalues and a Newton polish.
pub fn solve_beta_dgp(cfg: &DgpConfig) -> Result<f64> {
    cfg.validate()?;
    let c = beta_polynomial(cfg);
    let infeasible = || Error::Infeasible { coefficients: c };
    if !(c[4].is_finite() && c[4] > 0.0) {
        return Err(infeasible());
    }
    let mut comp = nalgebra::DMatrix::<f64>::zeros(4, 4);
    for i in 1..4 {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..4 {
        comp[(i, 3)] = -c[i] / c[4];
    }
    let roots = comp.complex_eigenvalues();
    let mut candidates: Vec<f64> = roots
        .iter()
        .filter(|z| z.re > 0.0 && z.im.abs() <= 1e-7 * (1.0 + z.re.abs()))
        .map(|z| polish(&c, z.re))
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    match candidates.as_slice() {
        [root] if *root > 0.0 => Ok(*root),
        _ => Err(infeasible()),
    }
}

fn polish(c: &[f64; 5], mut x: f64) -> f64 {
    for _ in 0..50 {
        let (p, dp) = poly_eval(c, x);
        if dp == 0.0 {
            break;
        }
        let step = p / dp;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Evaluates the calibration polynomial at `x`.
pub fn beta_polynomial_value(cfg: &DgpConfig, x: f64) -> f64 {
    poly_eval(&beta_polynomial(cfg), x).0
}

/// Draws ground-truth dictionaries from the `"gt"` stream of `cfg.seed`.
pub fn build_ground_truth(cfg: &DgpConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let beta = solve_beta_dgp(cfg)?;
    let (d, k, b) = (cfg.d, cfg.k, cfg.block_dim());
    let nb = cfg.n_bimodal();
    let seeds = SeedStream::new(cfg.seed);
    let mut rng = seeds.rng("gt", 0);
    let rot = crate::linalg::random_orthogonal(&mut rng, d);
    let img_block = rot.slice(s![.., 0..b]).to_owned();
    let shared_block = rot.slice(s![.., b..2 * b]).to_owned();
    let txt_block = rot.slice(s![.., 2 * b..3 * b]).to_owned();

    let img_atoms = draw_block(&mut rng, &img_block, k + nb);
    let d_i = img_atoms.slice(s![..k, ..]).to_owned();
    let d_bi = img_atoms.slice(s![k.., ..]).to_owned();
    let txt_atoms = draw_block(&mut rng, &txt_block, k + nb);
    let d_t = txt_atoms.slice(s![..k, ..]).to_owned();
    let d_bt = txt_atoms.slice(s![k.., ..]).to_owned();
    let d_b = draw_block(&mut rng, &shared_block, nb);

    let sep = ndarray::concatenate(
        ndarray::Axis(0),
        &[d_i.view(), d_t.view(), d_b.view(), d_bi.view(), d_bt.view()],
    )
    .expect("equal widths");
    let t1 = cfg.tau1;
    let comb_img = &d_b * t1 + &d_bi * (1.0 - t1);
    let comb_txt = &d_b * t1 + &d_bt * (1.0 - t1);
    let comb = ndarray::concatenate(
        ndarray::Axis(0),
        &[d_i.view(), d_t.view(), comb_img.view(), comb_txt.view()],
    )
    .expect("equal widths");

    let separated = Dictionary::from_unnormalized(sep.view())?;
    let combined = Dictionary::from_unnormalized(comb.view())?;
    let roles_separated = [
        (AtomRole::ImageOnly, k),
        (AtomRole::TextOnly, k),
        (AtomRole::BimodalCore, nb),
        (AtomRole::BimodalImgTerm, nb),
        (AtomRole::BimodalTxtTerm, nb),
    ]
    .iter()
    .flat_map(|&(r, n)| std::iter::repeat_n(r, n))
    .collect();
    let roles_combined = [
        (AtomRole::ImageOnly, k),
        (AtomRole::TextOnly, k),
        (AtomRole::CombinedImg, nb),
        (AtomRole::CombinedTxt, nb),
    ]
    .iter()
    .flat_map(|&(r, n)| std::iter::repeat_n(r, n))
    .collect();

    Ok(GroundTruth {
        config: *cfg,
        separated,
        combined,
        roles_separated,
        roles_combined,
        beta,
    })
}

/// `count` unit atoms in the span of `basis` (a `d × b` orthonormal frame).
/// When `count <= b` they form a random orthonormal set, which makes every
/// pair hit the calibrated cosine exactly; otherwise each atom is drawn
/// independently and the calibration holds only on average.
fn draw_block<R: Rng + ?Sized>(rng: &mut R, basis: &Array2<f64>, count: usize) -> Array2<f64> {
    let b = basis.ncols();
    if count <= b {
        let q = crate::linalg::random_orthogonal(rng, b);
        return basis.dot(&q.slice(s![.., ..count])).reversed_axes();
    }
    let mut out = Array2::zeros((count, basis.nrows()));
    for mut row in out.rows_mut() {
        let u = crate::linalg::random_unit(rng, b);
        row.assign(&basis.dot(&u));
    }
    out
}

/// Paired embeddings plus their codes in both ground-truth systems.
#[derive(Debug, Clone)]
pub struct DgpSample {
    pub data: EmbeddingDataset,
    pub separated_img: SparseCode,
    pub separated_txt: SparseCode,
    pub combined_img: SparseCode,
    pub combined_txt: SparseCode,
}

impl DgpSample {
    /// `(image codes, text codes)` in the requested system.
    pub fn codes(&self, kind: GroundTruthKind, k: usize) -> (SparseCode, SparseCode) {
        match kind {
            GroundTruthKind::Separated => (self.separated_img.clone(), self.separated_txt.clone()),
            GroundTruthKind::Combined => (self.combined_img.clone(), self.combined_txt.clone()),
            GroundTruthKind::Shared => (
                restrict_columns(&self.separated_img, 6 * k),
                restrict_columns(&self.separated_txt, 6 * k),
            ),
        }
    }
}

fn restrict_columns(code: &SparseCode, keep: usize) -> SparseCode {
    SparseCode::from_rows(
        keep,
        (0..code.n_rows()).map(|i| code.row_iter(i).filter(|(j, _)| *j < keep).collect::<Vec<_>>()),
    )
    .expect("indices below keep")
}

struct Draw {
    img: Vec<f64>,
    txt: Vec<f64>,
    sep_img: Vec<(usize, f64)>,
    sep_txt: Vec<(usize, f64)>,
    comb_img: Vec<(usize, f64)>,
    comb_txt: Vec<(usize, f64)>,
}

/// Samples `n` pairs. Sample `i` uses the `("sample", i)` stream, so the
/// result does not depend on thread count.
pub fn sample_pairs(gt: &GroundTruth, n: usize) -> Result<DgpSample> {
    let cfg = &gt.config;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let seeds = SeedStream::new(cfg.seed);
    let (k, nb, d) = (cfg.k, cfg.n_bimodal(), cfg.d);
    let (t1, beta) = (cfg.tau1, gt.beta);
    let s = (t1 * t1 + (1.0 - t1) * (1.0 - t1)).sqrt();
    let sep = gt.separated.atoms();

    let draws: Vec<Draw> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.rng("sample", i as u64);
            let ai = rng.random_range(0..k);
            let at = rng.random_range(0..k);
            let mut bim = index::sample(&mut rng, nb, cfg.l - 1).into_vec();
            bim.sort_unstable();

            let mut sep_img = vec![(ai, 1.0)];
            let mut sep_txt = vec![(k + at, 1.0)];
            for &b in &bim {
                sep_img.push((2 * k + b, t1 * beta));
                sep_txt.push((2 * k + b, t1 * beta));
                sep_img.push((2 * k + nb + b, (1.0 - t1) * beta));
                sep_txt.push((2 * k + 2 * nb + b, (1.0 - t1) * beta));
            }
            let img = combine(sep, &sep_img, d);
            let txt = combine(sep, &sep_txt, d);
            let ni = crate::linalg::norm(&img);
            let nt = crate::linalg::norm(&txt);

            let mut comb_img = vec![(ai, 1.0 / ni)];
            let mut comb_txt = vec![(k + at, 1.0 / nt)];
            for &b in &bim {
                comb_img.push((2 * k + b, beta * s / ni));
                comb_txt.push((2 * k + nb + b, beta * s / nt));
            }
            sep_img.iter_mut().for_each(|e| e.1 /= ni);
            sep_txt.iter_mut().for_each(|e| e.1 /= nt);
            Draw {
                img: img.iter().map(|v| v / ni).collect(),
                txt: txt.iter().map(|v| v / nt).collect(),
                sep_img,
                sep_txt,
                comb_img,
                comb_txt,
            }
        })
        .collect();

    let mut a = Array2::zeros((n, d));
    let mut b = Array2::zeros((n, d));
    for (i, dr) in draws.iter().enumerate() {
        a.row_mut(i).assign(&Array1::from(dr.img.clone()));
        b.row_mut(i).assign(&Array1::from(dr.txt.clone()));
    }
    let meta = serde_json::to_string(cfg)?;
    let data = EmbeddingDataset::new(a, b, meta)?;
    let ks = gt.separated.len();
    let kc = gt.combined.len();
    let sep_id = gt.separated.fingerprint();
    let comb_id = gt.combined.fingerprint();
    Ok(DgpSample {
        data,
        separated_img: SparseCode::from_rows(ks, draws.iter().map(|d| d.sep_img.clone()))?
            .with_dictionary_id(sep_id.clone()),
        separated_txt: SparseCode::from_rows(ks, draws.iter().map(|d| d.sep_txt.clone()))?
            .with_dictionary_id(sep_id),
        combined_img: SparseCode::from_rows(kc, draws.iter().map(|d| d.comb_img.clone()))?
            .with_dictionary_id(comb_id.clone()),
        combined_txt: SparseCode::from_rows(kc, draws.iter().map(|d| d.comb_txt.clone()))?
            .with_dictionary_id(comb_id),
    })
}

fn combine(atoms: ArrayView2<f64>, entries: &[(usize, f64)], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for &(j, v) in entries {
        for (o, a) in out.iter_mut().zip(atoms.row(j)) {
            *o += v * a;
        }
    }
    out
}

/// Mean cosine between paired rows.
pub fn mean_pair_cosine(ds: &EmbeddingDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let total: f64 = ds
        .domain_a()
        .rows()
        .into_iter()
        .zip(ds.domain_b().rows())
        .map(|(x, y)| x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt()))
        .sum();
    total / ds.len() as f64
}
