//! Sweep the alignment weight and keep the largest value whose R² stays
//! close to the unaligned model.

use isodict::dgp::{build_ground_truth, sample_pairs, DgpConfig};
use isodict::sae::{sweep_beta, TrainConfig, DEFAULT_BETA_GRID};

fn main() -> isodict::Result<()> {
    let dgp = DgpConfig { d: 64, k: 4, l: 6, tau1: 0.999, ..DgpConfig::default() };
    let data = sample_pairs(&build_ground_truth(&dgp)?, 4096)?.data;
    let cfg = TrainConfig { n_atoms: Some(40), target_l0: 6, epochs: 10, learning_rate: 1e-2, ..TrainConfig::default() };
    let report = sweep_beta(&data, &cfg, &DEFAULT_BETA_GRID)?;
    print!("{}", report.to_csv());
    println!("chosen beta {:e}{}", report.chosen_beta, if report.warning { " (warning)" } else { "" });
    Ok(())
}
