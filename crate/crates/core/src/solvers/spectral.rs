//! Rank estimates from singular values.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralQuantities {
    /// `Σσ² / σ_max²`.
    pub stable_rank: f64,
    /// `exp(H(p))` with `p_i = σ_i / Σσ`.
    pub effective_rank: f64,
}

pub fn spectral_quantities(m: ArrayView2<f64>) -> Result<SpectralQuantities> {
    if m.is_empty() {
        return Err(Error::ZeroMatrix);
    }
    let sv = crate::linalg::to_dmatrix(m).singular_values();
    from_singular_values(sv.as_slice())
}

pub fn from_singular_values(sv: &[f64]) -> Result<SpectralQuantities> {
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let sq: f64 = sv.iter().map(|s| s * s).sum();
    let total: f64 = sv.iter().sum();
    let entropy: f64 = sv
        .iter()
        .filter(|s| **s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(SpectralQuantities {
        stable_rank: sq / (max * max),
        effective_rank: entropy.exp(),
    })
}
