use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },

    #[error("pairing mismatch: domain a has {rows_a} rows but domain b has {rows_b} (byte {offset})")]
    PairingMismatch {
        rows_a: usize,
        rows_b: usize,
        offset: u64,
    },

    #[error("dimension mismatch at byte {offset}: {reason}")]
    DimensionMismatch { offset: u64, reason: String },

    #[error("non-finite value at byte {offset}")]
    NonFiniteAt { offset: u64 },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("dataset is flagged normalized but row {row} has norm {norm}")]
    NotNormalized { row: usize, norm: f64 },

    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },

    #[error("atom {atom} has norm {norm}, expected 1")]
    AtomNorm { atom: usize, norm: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration infeasible: no unique positive real root of {coefficients:?} (c0..c4)")]
    Infeasible { coefficients: [f64; 5] },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("infeasible marginals: {0}")]
    Marginals(String),

    #[error("k = {k} is too large for a reference set of {n} rows")]
    KTooLarge { k: usize, n: usize },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("class {0} has no text embedding")]
    MissingClass(usize),

    #[error("matrix is zero")]
    ZeroMatrix,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("gap-removal method {0} has not been fitted")]
    Unfitted(&'static str),

    #[error("no reports found in {0}")]
    NoReports(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
