pub mod cli;
pub mod datastore;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod interventions;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sae;
pub mod solvers;

pub use error::{Error, Result};
