//! End-to-end recovery experiments: sample a synthetic dataset, train a plain
//! SAE and an aligned SAE on it, and score both against the ground truth.

use serde::{Deserialize, Serialize};

use crate::dgp::{build_ground_truth, sample_pairs, DgpConfig, GroundTruthKind};
use crate::error::{Error, Result};
use crate::metrics::{dictionary_distance, mma};
use crate::sae::{evaluate_reconstruction, train, SaeKind, SaeModel, TrainConfig};

/// The two synthetic regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Bimodal atoms differ noticeably across domains (`τ₁ = τ₂ + 0.1`).
    Exp1,
    /// Bimodal atoms are nearly identical across domains (`τ₁ = 0.999`).
    Exp2,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Self::Exp1),
            "exp2" => Ok(Self::Exp2),
            _ => Err(Error::Config(format!("unknown regime {s:?} (expected exp1 or exp2)"))),
        }
    }
}

impl Regime {
    pub fn tau1(self, tau2: f64) -> f64 {
        match self {
            Self::Exp1 => tau2 + 0.1,
            Self::Exp2 => 0.999,
        }
    }

    /// Ground truth the learned dictionaries are scored against.
    pub fn ground_truth(self) -> GroundTruthKind {
        match self {
            Self::Exp1 => GroundTruthKind::Combined,
            Self::Exp2 => GroundTruthKind::Shared,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub tau2: f64,
    pub n_train: usize,
    pub n_eval: usize,
    /// Alignment weight of the aligned model.
    pub beta: f64,
    pub kind: SaeKind,
    /// Ground truth to score against; the regime's default when unset.
    pub ground_truth: Option<GroundTruthKind>,
    /// Learned atoms; the ground-truth atom count when unset.
    pub n_atoms: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Exp2,
            d: 128,
            k: 8,
            l: 20,
            tau2: 0.6,
            n_train: 16_384,
            n_eval: 4096,
            beta: 1e-3,
            kind: SaeKind::Mp,
            ground_truth: None,
            n_atoms: None,
            epochs: 30,
            batch_size: 256,
            learning_rate: 1e-3,
            cosine_decay: false,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn dgp(&self) -> DgpConfig {
        DgpConfig {
            d: self.d,
            k: self.k,
            l: self.l,
            tau1: self.regime.tau1(self.tau2),
            tau2: self.tau2,
            seed: self.seed,
            block_dim: None,
        }
    }

    fn train_config(&self, n_atoms: usize, beta: f64) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            n_atoms: Some(n_atoms),
            target_l0: self.l,
            beta_align: beta,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            cosine_decay: self.cosine_decay,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, Serialize)]
pub struct ModelScore {
    pub model: String,
    pub beta: f64,
    pub r2: f64,
    pub wasserstein: f64,
    pub mma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub ground_truth: GroundTruthKind,
    pub achieved_pair_cosine: f64,
    pub sae: ModelScore,
    pub sae_a: ModelScore,
    #[serde(skip)]
    pub models: Option<(SaeModel, SaeModel)>,
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,beta,r2,wasserstein,mma\n");
        for m in [&self.sae, &self.sae_a] {
            s.push_str(&format!("{},{:e},{:.6},{:.6},{:.6}\n", m.model, m.beta, m.r2, m.wasserstein, m.mma));
        }
        s
    }
}

/// Runs the experiment. With `epochs = 0` the models are scored untrained.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let gt = build_ground_truth(&cfg.dgp())?;
    let kind = cfg.ground_truth.unwrap_or(cfg.regime.ground_truth());
    let truth = gt.dictionary(kind);
    let n_atoms = cfg.n_atoms.unwrap_or(truth.len());
    let sample = sample_pairs(&gt, cfg.n_train + cfg.n_eval)?;
    let train_rows: Vec<usize> = (0..cfg.n_train).collect();
    let eval_rows: Vec<usize> = (cfg.n_train..cfg.n_train + cfg.n_eval).collect();
    let train_ds = sample.data.select(&train_rows)?;
    let eval_ds = sample.data.select(&eval_rows)?;
    let (ti, tt) = sample.codes(kind, cfg.k);
    let truth_codes = ti.select_rows(&eval_rows).vstack(&tt.select_rows(&eval_rows))?;

    let score = |name: &str, beta: f64| -> Result<(ModelScore, SaeModel)> {
        let (model, _) = train(&train_ds, &cfg.train_config(n_atoms, beta))?;
        let (zi, zt) = model.encode_pair(&eval_ds);
        let z = zi.vstack(&zt)?;
        let s = ModelScore {
            model: name.into(),
            beta,
            r2: evaluate_reconstruction(&model, &eval_ds)?.r2,
            wasserstein: dictionary_distance(&model.dictionary, &truth)?,
            mma: mma(&z, &truth_codes)?,
        };
        Ok((s, model))
    };
    let (sae, m0) = score("sae", 0.0)?;
    let (sae_a, m1) = score("sae_a", cfg.beta)?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        ground_truth: kind,
        achieved_pair_cosine: crate::dgp::mean_pair_cosine(&sample.data),
        sae,
        sae_a,
        models: Some((m0, m1)),
    })
}
