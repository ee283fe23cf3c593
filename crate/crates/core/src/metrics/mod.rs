//! Evaluation metrics for learned dictionaries on paired embeddings.

mod modality;
mod recovery;
mod retrieval;
mod structure;

pub use modality::{
    bridge_gamma, bridge_sigma, default_tau_grid, energy_profile, fda, modality_structure,
    probing_accuracy, rho, select_tau_by_bridge, BridgeKind, BridgeMatrix, EnergyProfile,
    ModalityStructure, ProbingAccuracy, Rho, TauChoice, DEFAULT_TAU,
};
pub use recovery::{column_cosines, dictionary_distance, mma};
pub use retrieval::{
    classifier_accuracy, delta_recall, recall_at_k, zero_shot_accuracy, Accuracy, RECALL_BATCH,
};
pub use structure::{
    c_curves, coactivation, coherence, dictionary_stats, sample_curves, stability, CCurves,
    DictionaryStats,
};

pub use crate::sae::{evaluate_reconstruction as reconstruction_metrics, ReconstructionStats};

use serde::Serialize;

use crate::datastore::EmbeddingDataset;
use crate::error::Result;
use crate::sae::SaeModel;

/// Default share of bridge mass tolerated between same-modality unimodal atoms.
pub const BRIDGE_FRACTION: f64 = 0.05;

/// Where τ came from in a [`ModalityReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TauSource {
    Fixed,
    Bridge,
    Fallback,
}

/// The modality-specific summary of one model on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ModalityReport {
    pub reconstruction: ReconstructionStats,
    pub tau: f64,
    pub tau_source: TauSource,
    pub n_bimodal: usize,
    pub n_image_only: usize,
    pub n_text_only: usize,
    /// Share of energy carried by bimodal atoms.
    pub bimodal_energy: f64,
    pub rho: Rho,
    /// `None` when the configuration is degenerate (no bimodal or no
    /// unimodal energy, or all aligned mass on bimodal atoms).
    pub fda: Option<f64>,
    pub transport_cost: Option<f64>,
    pub p_acc: f64,
    pub delta_recall: f64,
}

fn structure_from(ep: &EnergyProfile, bs: &BridgeMatrix, tau: Option<f64>) -> Result<(ModalityStructure, TauSource)> {
    let (tau, source) = match tau {
        Some(t) => (t, TauSource::Fixed),
        None => {
            let c = select_tau_by_bridge(bs, ep, &default_tau_grid(), BRIDGE_FRACTION)?;
            (c.tau, if c.fallback { TauSource::Fallback } else { TauSource::Bridge })
        }
    };
    Ok((modality_structure(ep, tau)?, source))
}

/// Bimodal/unimodal split of `model`'s atoms measured on `ds`. `tau = None`
/// selects τ with the bridge criterion.
pub fn infer_structure(ds: &EmbeddingDataset, model: &SaeModel, tau: Option<f64>) -> Result<(ModalityStructure, TauSource)> {
    let (zi, zt) = model.encode_pair(ds);
    let ep = energy_profile(&zi, &zt)?;
    let bs = bridge_sigma(&zi, &zt, &model.dictionary)?;
    structure_from(&ep, &bs, tau)
}

/// Computes reconstruction, ρ, FDA, p_acc and δ_r. `tau = None` selects τ
/// with the bridge criterion over the default grid.
pub fn modality_report(ds: &EmbeddingDataset, model: &SaeModel, tau: Option<f64>) -> Result<ModalityReport> {
    let reconstruction = reconstruction_metrics(model, ds)?;
    let (zi, zt) = model.encode_pair(ds);
    let ep = energy_profile(&zi, &zt)?;
    let bs = bridge_sigma(&zi, &zt, &model.dictionary)?;
    let (ms, tau_source) = structure_from(&ep, &bs, tau)?;
    let tau = ms.tau;
    let total = ep.e_mean.sum();
    let bimodal_energy = if total > 0.0 {
        ep.e_mean.iter().enumerate().filter(|(i, _)| ms.delta.get(*i)).map(|(_, e)| e).sum::<f64>() / total
    } else {
        0.0
    };
    let (fda_value, cost) = match bridge_gamma(&ep, &model.dictionary) {
        Ok((bg, c)) => (fda(&bg, c, &ms, &ep).ok(), Some(c)),
        Err(crate::Error::Degenerate(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(ModalityReport {
        reconstruction,
        tau,
        tau_source,
        n_bimodal: ms.delta.count(),
        n_image_only: ms.delta_img.count(),
        n_text_only: ms.delta_txt.count(),
        bimodal_energy,
        rho: rho(&bs, &ms),
        fda: fda_value,
        transport_cost: cost,
        p_acc: probing_accuracy(&model.dictionary, ds, &ms, &ep)?.p_acc,
        delta_recall: delta_recall(ds, model, &ms)?,
    })
}
