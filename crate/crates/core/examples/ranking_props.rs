//! How an additive modality component reorders cosine rankings.

use isodict::interventions::{flip_analysis, modality_spread, two_dimensional_example};
use ndarray::array;

fn main() {
    for eta in [0.0, 0.05, 0.1, 0.6] {
        let (c, m, y) = two_dimensional_example(eta);
        println!("eta {eta}: {:?}", flip_analysis(c.view(), m.view(), y.view()));
    }
    let y = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.6, 0.8]];
    let m = array![0.0, 0.0, 0.3];
    println!("spread {:.3}", modality_spread(m.view(), y.view()));
}
