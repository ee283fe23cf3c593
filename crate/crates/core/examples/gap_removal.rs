//! Compare every modality-gap intervention on synthetic pairs.

use isodict::dgp::{build_ground_truth, sample_pairs, DgpConfig};
use isodict::interventions::{gap_report, GapConfig, GapMethodKind, GapRemoval};
use isodict::metrics::infer_structure;
use isodict::sae::{train, TrainConfig};

fn main() -> isodict::Result<()> {
    let dgp = DgpConfig { d: 64, k: 4, l: 6, tau1: 0.999, ..DgpConfig::default() };
    let data = sample_pairs(&build_ground_truth(&dgp)?, 2048)?.data;
    let cfg = TrainConfig { n_atoms: Some(40), target_l0: 6, epochs: 10, learning_rate: 1e-2, beta_align: 1e-3, ..TrainConfig::default() };
    let (model, _) = train(&data, &cfg)?;
    let gap = GapConfig { max_points: 512, ..GapConfig::default() };
    println!("{:<16} {:>7} {:>7} {:>7} {:>9}", "method", "DiM", "W", "OOD", "recall@1");
    for kind in GapMethodKind::ALL {
        let g = match kind {
            GapMethodKind::BimodalFilter => {
                let (ms, _) = infer_structure(&data, &model, None)?;
                GapRemoval::bimodal_filter(model.clone(), ms.delta)?
            }
            GapMethodKind::ProjectSpan => continue,
            k => {
                let mut g = GapRemoval::new(k);
                g.fit(&data)?;
                g
            }
        };
        let r = gap_report(&data, &g.apply(&data)?, &gap)?;
        let a = r.after;
        println!("{:<16} {:>7.4} {:>7.4} {:>7.3} {:>9.4}", kind.name(), a.dim, a.wasserstein, a.ood_score, a.recall_at_1);
    }
    Ok(())
}
