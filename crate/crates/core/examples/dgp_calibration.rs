//! Sample synthetic pairs for a few target pair cosines and check that the
//! achieved mean cosine lands on the target.

use isodict::dgp::{build_ground_truth, mean_pair_cosine, sample_pairs, DgpConfig};

fn main() -> isodict::Result<()> {
    println!("tau1   tau2   beta      achieved");
    for (tau1, tau2) in [(0.7, 0.6), (0.999, 0.6), (0.5, 0.3), (0.95, 0.85)] {
        let cfg = DgpConfig { tau1, tau2, ..DgpConfig::default() };
        let gt = build_ground_truth(&cfg)?;
        let sample = sample_pairs(&gt, 20_000)?;
        println!("{tau1:<6} {tau2:<6} {:<9.5} {:.4}", gt.beta, mean_pair_cosine(&sample.data));
    }
    Ok(())
}
