//! Sparse autoencoders over paired embeddings.

mod encode;
mod io;
mod sweep;
mod train;

pub use encode::{
    decode, encode_batchtopk, encode_jumprelu, encode_mp, encode_relu, encode_topk, mp_trace,
    pre_activation, MpTrace,
};
pub use io::{load_model, read_model, save_model, write_model};
pub use sweep::{sweep_beta, SweepEntry, SweepReport, DEFAULT_BETA_GRID, MAX_R2_DEFICIT};
pub use train::{init_model, train, train_from, EpochLog, TrainLog};

use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{Dictionary, EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};

/// Default activation-frequency threshold above which an atom is degenerate.
pub const DEGENERATE_FREQUENCY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaeKind {
    Relu,
    JumpRelu,
    TopK,
    BatchTopK,
    Mp,
}

impl SaeKind {
    pub fn name(self) -> &'static str {
        match self {
            SaeKind::Relu => "relu",
            SaeKind::JumpRelu => "jumprelu",
            SaeKind::TopK => "topk",
            SaeKind::BatchTopK => "batchtopk",
            SaeKind::Mp => "mp",
        }
    }

    /// Whether the encoder has its own affine map `W x + b`.
    pub fn has_encoder(self) -> bool {
        self != SaeKind::Mp
    }
}

impl FromStr for SaeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "relu" => SaeKind::Relu,
            "jumprelu" => SaeKind::JumpRelu,
            "topk" => SaeKind::TopK,
            "batchtopk" => SaeKind::BatchTopK,
            "mp" => SaeKind::Mp,
            other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
        })
    }
}

impl std::fmt::Display for SaeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A trained (or freshly initialized) sparse autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub kind: SaeKind,
    pub dictionary: Dictionary,
    /// `K × d`; empty for matching pursuit.
    pub enc_weight: Array2<f64>,
    /// Length `K`; empty for matching pursuit.
    pub enc_bias: Array1<f64>,
    /// JumpReLU thresholds; empty otherwise.
    pub thresholds: Array1<f64>,
    /// Sparsity budget κ (TopK, BatchTopK, MP).
    pub kappa: usize,
    /// Sparsity penalty weight (L1 for ReLU, L0 for JumpReLU).
    pub l1_weight: f64,
}

impl SaeModel {
    pub fn n_atoms(&self) -> usize {
        self.dictionary.len()
    }

    pub fn dim(&self) -> usize {
        self.dictionary.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.n_atoms(), self.dim());
        if matches!(self.kind, SaeKind::TopK | SaeKind::BatchTopK | SaeKind::Mp) && (self.kappa == 0 || self.kappa > k) {
            return Err(Error::Config(format!("κ = {} must lie in 1..={k}", self.kappa)));
        }
        if self.kind.has_encoder() && (self.enc_weight.dim() != (k, d) || self.enc_bias.len() != k) {
            return Err(Error::Shape("encoder parameters do not match the dictionary".into()));
        }
        if self.kind == SaeKind::JumpRelu {
            if self.thresholds.len() != k {
                return Err(Error::Shape("threshold vector must have length K".into()));
            }
            if self.thresholds.iter().any(|t| *t < 0.0 || !t.is_finite()) {
                return Err(Error::Config("thresholds must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    fn encode_row_affine(&self, x: ArrayView1<f64>) -> Vec<(usize, f64)> {
        let pre = pre_activation(x, self.enc_weight.view(), self.enc_bias.view());
        match self.kind {
            SaeKind::Relu => encode::relu_of(pre.view()),
            SaeKind::JumpRelu => encode::jumprelu_of(pre.view(), self.thresholds.view()),
            SaeKind::TopK => encode::topk_of(pre.view(), self.kappa),
            SaeKind::BatchTopK | SaeKind::Mp => unreachable!("handled by the caller"),
        }
    }

    /// Codes for every row of `x`. BatchTopK selects over all rows at once.
    pub fn encode(&self, x: ArrayView2<f64>) -> SparseCode {
        let k = self.n_atoms();
        let rows: Vec<Vec<(usize, f64)>> = match self.kind {
            SaeKind::Mp => {
                let atoms = self.dictionary.atoms();
                let gram = self.dictionary.gram();
                (0..x.nrows())
                    .into_par_iter()
                    .map(|i| encode::mp_trace(x.row(i), atoms, Some(gram.view()), self.kappa).code())
                    .collect()
            }
            SaeKind::BatchTopK => {
                let pre: Vec<Array1<f64>> = (0..x.nrows())
                    .into_par_iter()
                    .map(|i| pre_activation(x.row(i), self.enc_weight.view(), self.enc_bias.view()))
                    .collect();
                encode::batchtopk_of(&pre, self.kappa)
            }
            _ => (0..x.nrows())
                .into_par_iter()
                .map(|i| self.encode_row_affine(x.row(i)))
                .collect(),
        };
        SparseCode::from_rows(k, rows)
            .expect("encoders emit in-range finite entries")
            .with_dictionary_id(self.dictionary.fingerprint())
    }

    /// `encode` then `decode`.
    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.encode(x)
            .reconstruct(&self.dictionary)
            .expect("code width matches the dictionary")
    }

    /// Codes of both domains: `(image codes, text codes)`.
    pub fn encode_pair(&self, ds: &EmbeddingDataset) -> (SparseCode, SparseCode) {
        (self.encode(ds.domain_a()), self.encode(ds.domain_b()))
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: SaeKind,
    /// `K / d`; ignored when `n_atoms` is set.
    pub expansion_ratio: f64,
    pub n_atoms: Option<usize>,
    /// κ for TopK, BatchTopK and MP.
    pub target_l0: usize,
    /// Weight β of the alignment penalty.
    pub beta_align: f64,
    /// Pairs per step.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// L1 weight (ReLU) or L0 weight (JumpReLU).
    pub l1_weight: f64,
    /// Initial JumpReLU threshold.
    pub threshold_init: f64,
    /// Kernel width of the JumpReLU straight-through estimator.
    pub jump_bandwidth: f64,
    /// Reinitialize atoms that never fire during an epoch.
    pub reinit_dead: bool,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: SaeKind::Mp,
            expansion_ratio: 8.0,
            n_atoms: None,
            target_l0: 20,
            beta_align: 0.0,
            batch_size: 256,
            epochs: 50,
            learning_rate: 1e-3,
            seed: 0,
            l1_weight: 1e-3,
            threshold_init: 1e-3,
            jump_bandwidth: 1e-3,
            reinit_dead: true,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn atoms_for(&self, d: usize) -> usize {
        self.n_atoms
            .unwrap_or_else(|| ((self.expansion_ratio * d as f64).round() as usize).max(1))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let k = self.atoms_for(d);
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.beta_align > 0.0 && self.batch_size < 2 {
            return Err(Error::Config("alignment needs a batch size of at least 2".into()));
        }
        if self.beta_align < 0.0 || !self.beta_align.is_finite() {
            return Err(Error::Config(format!("β = {} must be finite and ≥ 0", self.beta_align)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if matches!(self.kind, SaeKind::TopK | SaeKind::BatchTopK | SaeKind::Mp)
            && (self.target_l0 == 0 || self.target_l0 > k)
        {
            return Err(Error::Config(format!("κ = {} must lie in 1..={k}", self.target_l0)));
        }
        Ok(())
    }
}

/// Negative mean cosine between paired code rows:
/// `-(1/b) Tr(Z̃a Z̃bᵀ)`. A zero row contributes 0.
pub fn align_loss(za: &SparseCode, zb: &SparseCode) -> Result<f64> {
    if za.n_rows() != zb.n_rows() || za.n_atoms() != zb.n_atoms() {
        return Err(Error::Shape("alignment needs paired codes of equal shape".into()));
    }
    let b = za.n_rows();
    if b == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..b).map(|i| sparse_cosine(za, zb, i)).sum();
    Ok(-total / b as f64)
}

fn sparse_cosine(za: &SparseCode, zb: &SparseCode, i: usize) -> f64 {
    let (ia, va) = za.row(i);
    let (ib, vb) = zb.row(i);
    let na = va.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    sparse_dot(ia, va, ib, vb) / (na * nb)
}

pub(crate) fn sparse_dot(ia: &[usize], va: &[f64], ib: &[usize], vb: &[f64]) -> f64 {
    let (mut p, mut q, mut acc) = (0, 0, 0.0);
    while p < ia.len() && q < ib.len() {
        match ia[p].cmp(&ib[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                acc += va[p] * vb[q];
                p += 1;
                q += 1;
            }
        }
    }
    acc
}

/// Cosine of two dense code rows and its gradients with respect to each.
/// Zero rows give cosine 0 and zero gradients.
pub(crate) fn cosine_and_grads(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = crate::linalg::norm(a);
    let nb = crate::linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let cos = crate::linalg::dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    (cos, ga, gb)
}

/// Atoms whose activation frequency over both domains stacked is at least
/// `threshold`.
pub fn detect_degenerate(model: &SaeModel, ds: &EmbeddingDataset, threshold: f64) -> Vec<usize> {
    let (za, zb) = model.encode_pair(ds);
    let freq = activation_frequency(&[&za, &zb]);
    freq.iter()
        .enumerate()
        .filter(|(_, f)| **f >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Fraction of rows (across all given codes) in which each atom is nonzero.
pub fn activation_frequency(codes: &[&SparseCode]) -> Vec<f64> {
    let k = codes.first().map_or(0, |c| c.n_atoms());
    let mut count = vec![0usize; k];
    let mut rows = 0usize;
    for c in codes {
        rows += c.n_rows();
        for &j in c.indices() {
            count[j] += 1;
        }
    }
    if rows == 0 {
        return vec![0.0; k];
    }
    count.into_iter().map(|c| c as f64 / rows as f64).collect()
}

/// Reconstruction summary over both domains stacked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    /// `E_i ‖A_i − Â_i‖²`.
    pub mse: f64,
    /// `E_i [1 − ‖A_i − Â_i‖² / ‖A_i − Ā‖²]`.
    pub r2: f64,
    pub l0: f64,
    pub l1: f64,
}

/// Per-instance reconstruction statistics of `codes` against `x`.
pub fn reconstruction_stats(x: ArrayView2<f64>, codes: &SparseCode, dict: &Dictionary) -> Result<ReconstructionStats> {
    let rec = codes.reconstruct(dict)?;
    let n = x.nrows();
    if n == 0 {
        return Ok(ReconstructionStats { mse: 0.0, r2: 0.0, l0: 0.0, l1: 0.0 });
    }
    let mean = crate::linalg::column_mean(x);
    let (mut mse, mut r2) = (0.0, 0.0);
    for i in 0..n {
        let err = crate::linalg::sq_dist(x.row(i), rec.row(i));
        let var = crate::linalg::sq_dist(x.row(i), mean.view());
        mse += err;
        // a row sitting exactly on the mean has no variance to explain
        r2 += if var > 0.0 { 1.0 - err / var } else if err == 0.0 { 1.0 } else { 0.0 };
    }
    let l1: f64 = codes.values().iter().map(|v| v.abs()).sum();
    Ok(ReconstructionStats {
        mse: mse / n as f64,
        r2: r2 / n as f64,
        l0: codes.nnz() as f64 / n as f64,
        l1: l1 / n as f64,
    })
}

/// Reconstruction statistics of `model` on both domains stacked.
pub fn evaluate_reconstruction(model: &SaeModel, ds: &EmbeddingDataset) -> Result<ReconstructionStats> {
    let x = ds.stacked();
    let z = model.encode(x.view());
    reconstruction_stats(x.view(), &z, &model.dictionary)
}
