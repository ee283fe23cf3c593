//! Modality-gap removal: concept filtering and mean-based baselines.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datastore::{BinaryMask, Dictionary, EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};
use crate::linalg::column_mean;
use crate::rng::SeedStream;
use crate::sae::SaeModel;

/// `(Z ⊙ δ) D`: reconstruction from the masked atoms only.
pub fn filter_unimodal(z: &SparseCode, delta: &BinaryMask, dict: &Dictionary) -> Result<Array2<f64>> {
    z.masked(delta)?.reconstruct(dict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethodKind {
    BimodalFilter,
    Center,
    Shift,
    RandomShift,
    ProjectMean,
    ProjectDelta,
    ProjectSpan,
}

impl GapMethodKind {
    pub const ALL: [GapMethodKind; 7] = [
        Self::BimodalFilter,
        Self::Center,
        Self::Shift,
        Self::RandomShift,
        Self::ProjectMean,
        Self::ProjectDelta,
        Self::ProjectSpan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::BimodalFilter => "bimodal_filter",
            Self::Center => "center",
            Self::Shift => "shift",
            Self::RandomShift => "random_shift",
            Self::ProjectMean => "project_mean",
            Self::ProjectDelta => "project_delta",
            Self::ProjectSpan => "project_span",
        }
    }
}

impl std::fmt::Display for GapMethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GapMethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gap-removal method {s:?}")))
    }
}

/// Parameters frozen at fit time.
#[derive(Debug, Clone)]
struct Fitted {
    mean_a: Array1<f64>,
    mean_b: Array1<f64>,
    /// Shared target mean for the shift variants.
    target: Array1<f64>,
    /// Orthonormal directions removed from domain a and domain b.
    remove_a: Vec<Array1<f64>>,
    remove_b: Vec<Array1<f64>>,
}

/// A gap-removal transform. Mean-based methods are fitted once on a
/// reference dataset and then reused unchanged on any other data.
#[derive(Debug, Clone)]
pub struct GapRemoval {
    kind: GapMethodKind,
    seed: u64,
    /// Concept filter: model plus bimodal mask.
    filter: Option<(SaeModel, BinaryMask)>,
    /// User directions for `ProjectSpan`.
    directions: Vec<Array1<f64>>,
    fitted: Option<Fitted>,
}

impl GapRemoval {
    pub fn new(kind: GapMethodKind) -> Self {
        Self { kind, seed: 0, filter: None, directions: Vec::new(), fitted: None }
    }

    /// Concept filtering with a trained model and its bimodal mask. Ready to
    /// apply without fitting.
    pub fn bimodal_filter(model: SaeModel, delta: BinaryMask) -> Result<Self> {
        if delta.len() != model.n_atoms() {
            return Err(Error::Shape(format!("mask has {} bits for K = {}", delta.len(), model.n_atoms())));
        }
        Ok(Self { filter: Some((model, delta)), ..Self::new(GapMethodKind::BimodalFilter) })
    }

    /// Seed for the random direction of `RandomShift`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Directions projected out by `ProjectSpan`.
    pub fn with_directions(mut self, dirs: Vec<Array1<f64>>) -> Self {
        self.directions = dirs;
        self
    }

    pub fn kind(&self) -> GapMethodKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        match self.kind {
            GapMethodKind::BimodalFilter => self.filter.is_some(),
            _ => self.fitted.is_some(),
        }
    }

    /// Captures means and directions from `reference`.
    pub fn fit(&mut self, reference: &EmbeddingDataset) -> Result<()> {
        let d = reference.dim();
        let mean_a = column_mean(reference.domain_a());
        let mean_b = column_mean(reference.domain_b());
        let target = match self.kind {
            GapMethodKind::RandomShift => {
                let mut rng = SeedStream::new(self.seed).rng("random-shift", 0);
                crate::linalg::random_unit(&mut rng, d)
            }
            _ => (&mean_a + &mean_b) / 2.0,
        };
        let (remove_a, remove_b) = match self.kind {
            GapMethodKind::ProjectMean => (orthonormal(&[mean_a.clone()]), orthonormal(&[mean_b.clone()])),
            GapMethodKind::ProjectDelta => {
                let dirs = orthonormal(&[&mean_a - &mean_b]);
                (dirs.clone(), dirs)
            }
            GapMethodKind::ProjectSpan => {
                if let Some(v) = self.directions.iter().find(|v| v.len() != d) {
                    return Err(Error::Shape(format!("direction of length {} in R^{d}", v.len())));
                }
                let dirs = orthonormal(&self.directions);
                (dirs.clone(), dirs)
            }
            _ => (Vec::new(), Vec::new()),
        };
        self.fitted = Some(Fitted { mean_a, mean_b, target, remove_a, remove_b });
        Ok(())
    }

    /// Returns the transformed copy of `ds`.
    pub fn apply(&self, ds: &EmbeddingDataset) -> Result<EmbeddingDataset> {
        let meta = format!("{}+{}", ds.meta(), self.kind);
        if self.kind == GapMethodKind::BimodalFilter {
            let (model, delta) = self.filter.as_ref().ok_or(Error::Unfitted(self.kind.name()))?;
            if model.dim() != ds.dim() {
                return Err(Error::Shape(format!("model dimension {} vs data {}", model.dim(), ds.dim())));
            }
            let (za, zb) = model.encode_pair(ds);
            let a = filter_unimodal(&za, delta, &model.dictionary)?;
            let b = filter_unimodal(&zb, delta, &model.dictionary)?;
            return EmbeddingDataset::new(a, b, meta);
        }
        let f = self.fitted.as_ref().ok_or(Error::Unfitted(self.kind.name()))?;
        if f.mean_a.len() != ds.dim() {
            return Err(Error::Shape(format!("fitted in R^{} but data is in R^{}", f.mean_a.len(), ds.dim())));
        }
        let (a, b) = match self.kind {
            GapMethodKind::Center => (shift(ds.domain_a(), &-&f.mean_a), shift(ds.domain_b(), &-&f.mean_b)),
            GapMethodKind::Shift | GapMethodKind::RandomShift => (
                shift(ds.domain_a(), &(&f.target - &f.mean_a)),
                shift(ds.domain_b(), &(&f.target - &f.mean_b)),
            ),
            _ => (project_out(ds.domain_a(), &f.remove_a), project_out(ds.domain_b(), &f.remove_b)),
        };
        EmbeddingDataset::new(a, b, meta)
    }
}

fn shift(x: ArrayView2<f64>, by: &Array1<f64>) -> Array2<f64> {
    &x + &by.view().insert_axis(Axis(0))
}

fn project_out(x: ArrayView2<f64>, dirs: &[Array1<f64>]) -> Array2<f64> {
    let mut out = x.to_owned();
    for u in dirs {
        let coef = out.dot(u);
        for (mut row, c) in out.rows_mut().into_iter().zip(coef.iter()) {
            row.scaled_add(-c, u);
        }
    }
    out
}

/// Gram-Schmidt; directions that are (numerically) dependent are dropped.
fn orthonormal(dirs: &[Array1<f64>]) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for v in dirs {
        let scale = v.dot(v).sqrt();
        let mut w = v.clone();
        for u in &basis {
            let c = w.dot(u);
            w.scaled_add(-c, u);
        }
        let n = w.dot(&w).sqrt();
        if n > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            basis.push(w / n);
        }
    }
    basis
}
