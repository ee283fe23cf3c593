//! Edit image embeddings with text deltas, with and without restricting the
//! delta to bimodal atoms.

use isodict::dgp::{build_ground_truth, sample_pairs, DgpConfig};
use isodict::interventions::{arithmetic_report, build_queries};
use isodict::metrics::infer_structure;
use isodict::sae::{train, TrainConfig};

fn main() -> isodict::Result<()> {
    let dgp = DgpConfig { d: 64, k: 4, l: 6, tau1: 0.999, ..DgpConfig::default() };
    let data = sample_pairs(&build_ground_truth(&dgp)?, 3000)?.data;
    let cfg = TrainConfig { n_atoms: Some(40), target_l0: 6, epochs: 10, learning_rate: 1e-2, beta_align: 1e-3, ..TrainConfig::default() };
    let (model, _) = train(&data, &cfg)?;
    let (ms, _) = infer_structure(&data, &model, None)?;
    let src = data.select(&(0..1000).collect::<Vec<_>>())?;
    let tgt = data.select(&(1000..2000).collect::<Vec<_>>())?;
    let queries = build_queries(src.domain_a(), tgt.domain_b(), &model, &ms.delta)?;
    let reference = model.reconstruct(data.select(&(2000..3000).collect::<Vec<_>>())?.domain_a());
    for row in arithmetic_report(&queries, tgt.domain_a(), reference.view(), 10)? {
        println!("{:<16} recall {:.3}  ood {:.3}", row.variant.name(), row.recall, row.ood_score);
    }
    Ok(())
}
