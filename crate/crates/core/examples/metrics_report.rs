//! Modality metrics and dictionary structure for a plain and an aligned SAE.

use isodict::dgp::{build_ground_truth, sample_pairs, DgpConfig};
use isodict::metrics::{c_curves, dictionary_stats, modality_report};
use isodict::sae::{train, TrainConfig};

fn main() -> isodict::Result<()> {
    let dgp = DgpConfig { d: 64, k: 4, l: 6, tau1: 0.999, ..DgpConfig::default() };
    let data = sample_pairs(&build_ground_truth(&dgp)?, 4096)?.data;
    for beta in [0.0, 1e-3] {
        let cfg = TrainConfig { n_atoms: Some(40), target_l0: 6, epochs: 10, learning_rate: 1e-2, beta_align: beta, ..TrainConfig::default() };
        let (model, _) = train(&data, &cfg)?;
        let m = modality_report(&data, &model, None)?;
        println!("beta {beta:e}");
        println!("  r2 {:.4}  tau {} ({:?})", m.reconstruction.r2, m.tau, m.tau_source);
        println!("  atoms: {} bimodal, {} image, {} text", m.n_bimodal, m.n_image_only, m.n_text_only);
        println!("  rho {:?}  fda {:?}  p_acc {:.3}  delta_r {:.4}", m.rho, m.fda, m.p_acc, m.delta_recall);
        let (zi, zt) = model.encode_pair(&data);
        let s = dictionary_stats(&model.dictionary, &zi.vstack(&zt)?)?;
        println!("  coherence {:.3}  connectivity {:.3}", s.coherence, s.connectivity);
        println!("  {:?}", c_curves(&data, &model)?);
    }
    Ok(())
}
