//! Train each SAE architecture on a small synthetic dataset and print the
//! per-epoch loss of the last one.

use isodict::dgp::{build_ground_truth, sample_pairs, DgpConfig};
use isodict::sae::{evaluate_reconstruction, train, SaeKind, TrainConfig};

fn main() -> isodict::Result<()> {
    let dgp = DgpConfig { d: 64, k: 4, l: 6, ..DgpConfig::default() };
    let data = sample_pairs(&build_ground_truth(&dgp)?, 4096)?.data;
    for kind in [SaeKind::Relu, SaeKind::JumpRelu, SaeKind::TopK, SaeKind::BatchTopK, SaeKind::Mp] {
        let cfg = TrainConfig { kind, n_atoms: Some(56), target_l0: 6, epochs: 10, learning_rate: 3e-3, ..TrainConfig::default() };
        let (model, log) = train(&data, &cfg)?;
        let stats = evaluate_reconstruction(&model, &data)?;
        println!("{kind:<10} r2 {:.4}  l0 {:.2}", stats.r2, stats.l0);
        if kind == SaeKind::Mp {
            for e in &log.epochs {
                println!("  {e:?}");
            }
        }
    }
    Ok(())
}
