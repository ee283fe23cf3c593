//! Core data types shared by every module: paired embedding datasets,
//! dictionaries, sparse codes and binary atom masks.

pub(crate) mod io;

pub use io::{
    load_codes, load_dataset, load_dictionary, read_dataset, save_codes, save_dataset,
    save_dictionary, write_dataset,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZED_TOL: f64 = 1e-5;
const ATOM_NORM_TOL: f64 = 1e-6;

/// Paired embeddings from two domains. Row `i` of `domain_a` (images) is
/// paired with row `i` of `domain_b` (texts).
///
/// Entries are stored as `f64` but always hold `f32`-representable values, so
/// that the on-disk format round-trips bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    domain_a: Array2<f64>,
    domain_b: Array2<f64>,
    normalized: bool,
    meta: String,
}

impl EmbeddingDataset {
    /// Builds a dataset, rounding entries to `f32` precision. The normalized
    /// flag is set when every row has unit norm (within 1e-5).
    pub fn new(domain_a: Array2<f64>, domain_b: Array2<f64>, meta: impl Into<String>) -> Result<Self> {
        let domain_a = quantize(domain_a);
        let domain_b = quantize(domain_b);
        check_pair_shapes(&domain_a, &domain_b)?;
        check_finite("domain_a", domain_a.view())?;
        check_finite("domain_b", domain_b.view())?;
        let normalized = domain_a.nrows() > 0
            && first_non_unit_row(domain_a.view()).is_none()
            && first_non_unit_row(domain_b.view()).is_none();
        Ok(Self {
            domain_a,
            domain_b,
            normalized,
            meta: meta.into(),
        })
    }

    /// Builds a dataset with an explicit normalized flag, validating it.
    pub fn from_parts(
        domain_a: Array2<f64>,
        domain_b: Array2<f64>,
        normalized: bool,
        meta: impl Into<String>,
    ) -> Result<Self> {
        let mut ds = Self::new(domain_a, domain_b, meta)?;
        if normalized {
            for m in [ds.domain_a.view(), ds.domain_b.view()] {
                if let Some((row, norm)) = first_non_unit_row(m) {
                    return Err(Error::NotNormalized { row, norm });
                }
            }
        }
        ds.normalized = normalized;
        Ok(ds)
    }

    /// Row-normalizes both domains.
    pub fn normalized(&self) -> Result<Self> {
        let a = normalize_rows(self.domain_a.view())?;
        let b = normalize_rows(self.domain_b.view())?;
        Self::from_parts(a, b, true, self.meta.clone())
    }

    pub fn domain_a(&self) -> ArrayView2<'_, f64> {
        self.domain_a.view()
    }

    pub fn domain_b(&self) -> ArrayView2<'_, f64> {
        self.domain_b.view()
    }

    pub fn len(&self) -> usize {
        self.domain_a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.domain_a.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn meta(&self) -> &str {
        &self.meta
    }

    /// Both domains stacked, domain a first. Row `i < n` is image `i`.
    pub fn stacked(&self) -> Array2<f64> {
        crate::linalg::vstack(self.domain_a.view(), self.domain_b.view())
    }

    /// Subset of pairs, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let a = self.domain_a.select(ndarray::Axis(0), rows);
        let b = self.domain_b.select(ndarray::Axis(0), rows);
        Self::from_parts(a, b, self.normalized, self.meta.clone())
    }
}

fn quantize(m: Array2<f64>) -> Array2<f64> {
    m.mapv(|v| f64::from(v as f32))
}

fn check_pair_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "domain a is {:?} but domain b is {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_finite(what: &'static str, m: ArrayView2<f64>) -> Result<()> {
    for ((row, col), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what, row, col });
        }
    }
    Ok(())
}

fn first_non_unit_row(m: ArrayView2<f64>) -> Option<(usize, f64)> {
    m.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .enumerate()
        .find(|(_, n)| (n - 1.0).abs() > NORMALIZED_TOL)
}

/// Scales every row to unit ℓ2 norm. Fails on the first zero row.
pub fn normalize_rows(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (row, mut r) in out.rows_mut().into_iter().enumerate() {
        let n = r.dot(&r).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroRow { row });
        }
        r /= n;
    }
    Ok(out)
}

/// `K` unit-norm atoms of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
    labels: Option<Vec<String>>,
}

impl Dictionary {
    /// Rejects any atom whose norm deviates from 1 by more than 1e-6.
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::Shape(format!(
                "dictionary needs K >= 1 and d >= 1, got {:?}",
                atoms.dim()
            )));
        }
        check_finite("dictionary", atoms.view())?;
        for (atom, r) in atoms.rows().into_iter().enumerate() {
            let norm = r.dot(&r).sqrt();
            if (norm - 1.0).abs() > ATOM_NORM_TOL {
                return Err(Error::AtomNorm { atom, norm });
            }
        }
        Ok(Self {
            atoms,
            labels: None,
        })
    }

    /// Normalizes the rows first.
    pub fn from_unnormalized(atoms: ArrayView2<f64>) -> Result<Self> {
        Self::new(normalize_rows(atoms)?)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} atoms",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(i)
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Number of atoms `K`.
    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    /// `D · Dᵀ`.
    pub fn gram(&self) -> Array2<f64> {
        self.atoms.dot(&self.atoms.t())
    }

    /// Stable identifier derived from the atom bits.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.atoms.iter() {
            for b in (*v as f32).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("{:016x}", h)
    }

    /// Rows permuted: atom `i` of the result is atom `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let atoms = self.atoms.select(ndarray::Axis(0), perm);
        let mut out = Self::new(atoms)?;
        if let Some(l) = &self.labels {
            out.labels = Some(perm.iter().map(|&i| l[i].clone()).collect());
        }
        Ok(out)
    }
}

/// CSR sparse code matrix (`N × K`). Stored entries are nonzero and sorted by
/// column within each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    n_atoms: usize,
    row_ptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    dictionary_id: Option<String>,
}

impl SparseCode {
    pub fn empty(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            row_ptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
            dictionary_id: None,
        }
    }

    /// Builds from per-row `(atom, value)` lists. Zeros are dropped and
    /// duplicate atoms within a row are summed.
    pub fn from_rows<I, R>(n_atoms: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = (usize, f64)>,
    {
        let mut code = Self::empty(n_atoms);
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for row in rows {
            buf.clear();
            buf.extend(row);
            code.push_row(&mut buf)?;
        }
        Ok(code)
    }

    fn push_row(&mut self, entries: &mut Vec<(usize, f64)>) -> Result<()> {
        entries.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(j, v) in entries.iter() {
            if j >= self.n_atoms {
                return Err(Error::Shape(format!(
                    "atom index {j} out of range for K = {}",
                    self.n_atoms
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "sparse code",
                    row: self.row_ptr.len() - 1,
                    col: j,
                });
            }
            if last == Some(j) {
                *self.values.last_mut().expect("previous entry") += v;
            } else {
                self.indices.push(j);
                self.values.push(v);
                last = Some(j);
            }
        }
        // drop exact zeros, including sums that cancelled
        let start = *self.row_ptr.last().expect("row_ptr non-empty");
        let mut w = start;
        for r in start..self.indices.len() {
            if self.values[r] != 0.0 {
                self.indices[w] = self.indices[r];
                self.values[w] = self.values[r];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
        self.row_ptr.push(w);
        Ok(())
    }

    pub fn from_dense(m: ArrayView2<f64>) -> Self {
        let rows = m.rows().into_iter().map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect::<Vec<_>>()
        });
        Self::from_rows(m.ncols(), rows).expect("dense input is well formed")
    }

    pub(crate) fn from_raw(
        n_atoms: usize,
        row_ptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let rows: Vec<Vec<(usize, f64)>> = row_ptr
            .windows(2)
            .map(|w| (w[0]..w[1]).map(|p| (indices[p], values[p])).collect())
            .collect();
        Self::from_rows(n_atoms, rows)
    }

    pub fn with_dictionary_id(mut self, id: impl Into<String>) -> Self {
        self.dictionary_id = Some(id.into());
        self
    }

    pub fn dictionary_id(&self) -> Option<&str> {
        self.dictionary_id.as_deref()
    }

    /// Number of rows `N`.
    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Number of atoms `K`.
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn row_iter(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (idx, val) = self.row(i);
        idx.iter().copied().zip(val.iter().copied())
    }

    pub fn support_size(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows(), self.n_atoms));
        for i in 0..self.n_rows() {
            for (j, v) in self.row_iter(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `values · atoms`.
    pub fn reconstruct(&self, dict: &Dictionary) -> Result<Array2<f64>> {
        if dict.len() != self.n_atoms {
            return Err(Error::Shape(format!(
                "code has K = {} but dictionary has {} atoms",
                self.n_atoms,
                dict.len()
            )));
        }
        let d = dict.dim();
        let mut out = Array2::zeros((self.n_rows(), d));
        for (i, mut orow) in out.rows_mut().into_iter().enumerate() {
            for (j, v) in self.row_iter(i) {
                orow.scaled_add(v, &dict.atom(j));
            }
        }
        Ok(out)
    }

    /// Entries on atoms with `mask[j] == false` removed.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        if mask.len() != self.n_atoms {
            return Err(Error::Shape(format!(
                "mask has {} bits for K = {}",
                mask.len(),
                self.n_atoms
            )));
        }
        let rows = (0..self.n_rows()).map(|i| {
            self.row_iter(i)
                .filter(|(j, _)| mask.get(*j))
                .collect::<Vec<_>>()
        });
        let mut out = Self::from_rows(self.n_atoms, rows)?;
        out.dictionary_id = self.dictionary_id.clone();
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        if factor == 0.0 {
            return Self::from_rows(self.n_atoms, (0..self.n_rows()).map(|_| Vec::new()))
                .expect("empty rows");
        }
        out
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn vstack(&self, other: &SparseCode) -> Result<Self> {
        if self.n_atoms != other.n_atoms {
            return Err(Error::Shape(format!(
                "cannot stack codes with K = {} and K = {}",
                self.n_atoms, other.n_atoms
            )));
        }
        let mut out = self.clone();
        let off = *out.row_ptr.last().expect("non-empty");
        out.indices.extend_from_slice(&other.indices);
        out.values.extend_from_slice(&other.values);
        out.row_ptr
            .extend(other.row_ptr.iter().skip(1).map(|p| p + off));
        Ok(out)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::from_rows(
            self.n_atoms,
            rows.iter().map(|&i| self.row_iter(i).collect::<Vec<_>>()),
        )
        .expect("rows are already valid");
        out.dictionary_id = self.dictionary_id.clone();
        out
    }

    /// Columns permuted: column `i` of the result is column `perm[i]` of `self`.
    pub fn permute_atoms(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        Self::from_rows(
            self.n_atoms,
            (0..self.n_rows()).map(|i| self.row_iter(i).map(|(j, v)| (inv[j], v)).collect::<Vec<_>>()),
        )
        .expect("permutation keeps indices in range")
    }

    /// Mean support size over rows.
    pub fn mean_l0(&self) -> f64 {
        if self.n_rows() == 0 {
            return 0.0;
        }
        self.nnz() as f64 / self.n_rows() as f64
    }

    /// Dense row `i`.
    pub fn dense_row(&self, i: usize) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_atoms);
        for (j, v) in self.row_iter(i) {
            out[j] = v;
        }
        out
    }
}

/// One bit per dictionary atom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(k: usize, value: bool) -> Self {
        Self {
            bits: vec![value; k],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&i| self.bits[i]).collect())
    }
}
