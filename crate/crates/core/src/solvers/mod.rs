//! Numerical building blocks: optimal transport, assignment, nearest
//! neighbors, linear probes and spectral summaries.

mod hungarian;
mod knn;
mod ot;
mod probe;
mod spectral;

pub use hungarian::hungarian_match;
pub use knn::knn_distance;
pub use ot::{euclidean_cost, solve_ot, solve_ot_entropic, wasserstein_atoms, TransportPlan, EXACT_LIMIT};
pub use probe::{logistic_probe, multinomial_probe, topk_accuracy, MultinomialResult, ProbeResult};
pub use spectral::{from_singular_values, spectral_quantities, SpectralQuantities};
