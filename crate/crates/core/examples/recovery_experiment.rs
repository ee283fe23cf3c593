//! Train a plain and an aligned SAE on synthetic pairs and compare how well
//! each recovers the ground-truth dictionary.
//!
//! Any config field can be overridden with `key=value`:
//!
//! ```text
//! cargo run --release --example recovery_experiment -- regime=exp1 beta=1e-3 epochs=20
//! ```

use isodict::experiment::{run_experiment, ExperimentConfig};
use serde_json::{Map, Value};

fn main() -> isodict::Result<()> {
    let mut overrides = Map::new();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments look like key=value");
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into()));
        overrides.insert(k.into(), v);
    }
    let cfg: ExperimentConfig = serde_json::from_value(Value::Object(overrides))?;
    let t = std::time::Instant::now();
    let report = run_experiment(&cfg)?;
    println!("{}", serde_json::to_string(&cfg)?);
    println!("ground truth {:?}, mean pair cosine {:.4}", report.ground_truth, report.achieved_pair_cosine);
    print!("{}", report.to_csv());
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
