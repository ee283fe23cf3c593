//! Scanning the alignment weight β.

use serde::Serialize;

use super::{detect_degenerate, train, SaeModel, TrainConfig, TrainLog, DEGENERATE_FREQUENCY};
use crate::datastore::EmbeddingDataset;
use crate::error::{Error, Result};

/// `{0, 1e-6, …, 1e-1}`.
pub const DEFAULT_BETA_GRID: [f64; 7] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Largest tolerated drop in R² relative to the β = 0 run.
pub const MAX_R2_DEFICIT: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub beta: f64,
    pub r2: f64,
    pub mse: f64,
    pub l0: f64,
    pub align: f64,
    /// `r2(β = 0) − r2(β)`.
    pub r2_deficit: f64,
    pub degenerate: Vec<usize>,
    #[serde(skip)]
    pub model: SaeModel,
    #[serde(skip)]
    pub log: TrainLog,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    /// Sorted by β ascending; the first entry is always β = 0.
    pub entries: Vec<SweepEntry>,
    pub chosen_beta: f64,
    /// Set when no nonzero β kept R² within the tolerance.
    pub warning: bool,
}

impl SweepReport {
    pub fn chosen(&self) -> &SweepEntry {
        self.entries
            .iter()
            .find(|e| e.beta == self.chosen_beta)
            .expect("chosen β is one of the entries")
    }

    /// `beta,r2,degenerate` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("beta,r2,degenerate\n");
        for e in &self.entries {
            s.push_str(&format!("{:e},{:.6},{}\n", e.beta, e.r2, e.degenerate.len()));
        }
        s
    }
}

/// Trains one model per β (plus the β = 0 baseline) and picks the largest β
/// such that it and every smaller β lose less than [`MAX_R2_DEFICIT`] of R².
pub fn sweep_beta(ds: &EmbeddingDataset, cfg: &TrainConfig, grid: &[f64]) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("β grid is empty".into()));
    }
    if let Some(b) = grid.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::Config(format!("β = {b} must be finite and ≥ 0")));
    }
    let mut betas: Vec<f64> = grid.to_vec();
    betas.push(0.0);
    betas.sort_by(f64::total_cmp);
    betas.dedup();

    let mut entries: Vec<SweepEntry> = Vec::with_capacity(betas.len());
    for &beta in &betas {
        let run = TrainConfig { beta_align: beta, ..cfg.clone() };
        let (model, log) = train(ds, &run)?;
        let last = log.last().cloned();
        let (r2, mse, l0, align) = last.map_or((0.0, 0.0, 0.0, 0.0), |e| (e.r2, e.mse, e.l0, e.align));
        let degenerate = detect_degenerate(&model, ds, DEGENERATE_FREQUENCY);
        entries.push(SweepEntry { beta, r2, mse, l0, align, r2_deficit: 0.0, degenerate, model, log });
    }
    let base = entries[0].r2;
    for e in &mut entries {
        e.r2_deficit = base - e.r2;
    }

    let mut chosen = 0.0;
    for e in entries.iter().skip(1) {
        if e.r2_deficit < MAX_R2_DEFICIT {
            chosen = e.beta;
        } else {
            break;
        }
    }
    let warning = entries.len() > 1 && chosen == 0.0;
    Ok(SweepReport { entries, chosen_beta: chosen, warning })
}
