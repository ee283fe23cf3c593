//! Binary container formats.
//!
//! Every file is `magic (4 bytes) | header length (u32 LE) | JSON header |
//! body`. Bodies are little-endian `f32` blocks (plus `u64`/`u32` index arrays
//! for sparse codes). Errors carry the byte offset at which reading failed.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Dictionary, EmbeddingDataset, SparseCode};
use crate::error::{Error, Result};

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const DIC_MAGIC: &[u8; 4] = b"DIC1";
const SPC_MAGIC: &[u8; 4] = b"SPC1";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    d: usize,
    domains: Vec<String>,
    normalized: bool,
    dtype: String,
    #[serde(default)]
    meta: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryHeader {
    k: usize,
    d: usize,
    dtype: String,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CodeHeader {
    n: usize,
    k: usize,
    nnz: usize,
    dictionary_id: Option<String>,
}

/// Writes `magic | len | header` and returns the buffer for the body.
pub(crate) fn begin_container<H: Serialize>(magic: &[u8; 4], header: &H) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len())
        .map_err(|_| Error::Config("header larger than 4 GiB".into()))?;
    let mut buf = Vec::with_capacity(8 + json.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&json);
    Ok(buf)
}

pub(crate) fn push_f32s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Cursor over a container body that reports absolute byte offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the magic, parses the JSON header and leaves the cursor at the body.
    pub(crate) fn open<H: DeserializeOwned>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Self, H)> {
        if bytes.len() < 8 {
            return Err(Error::MalformedHeader {
                offset: bytes.len() as u64,
                reason: "file shorter than the 8-byte preamble".into(),
            });
        }
        if &bytes[..4] != magic {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: format!(
                    "expected magic {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&bytes[..4])
                ),
            });
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() < 8 + len {
            return Err(Error::MalformedHeader {
                offset: 4,
                reason: format!("header length {len} exceeds file size"),
            });
        }
        let header: H = serde_json::from_slice(&bytes[8..8 + len]).map_err(|e| {
            Error::MalformedHeader {
                offset: 8 + e.column().saturating_sub(1) as u64,
                reason: e.to_string(),
            }
        })?;
        Ok((Self { bytes, pos: 8 + len }, header))
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::DimensionMismatch {
                offset: self.bytes.len() as u64,
                reason: format!(
                    "{what} needs {n} bytes from byte {} but only {} remain",
                    self.pos,
                    self.remaining()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn f32_matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let start = self.pos;
        let raw = self.take(rows * cols * 4, what)?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFiniteAt {
                    offset: (start + 4 * i) as u64,
                });
            }
            data.push(f64::from(v));
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches shape"))
    }

    fn u64s(&mut self, n: usize, what: &str) -> Result<Vec<u64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::DimensionMismatch {
                offset: self.offset(),
                reason: format!("{} trailing bytes", self.remaining()),
            });
        }
        Ok(())
    }
}

fn require_f32(dtype: &str) -> Result<()> {
    if dtype != "f32le" {
        return Err(Error::MalformedHeader {
            offset: 8,
            reason: format!("unsupported dtype {dtype:?}"),
        });
    }
    Ok(())
}

/// Serializes a dataset to bytes.
pub fn write_dataset(ds: &EmbeddingDataset) -> Result<Vec<u8>> {
    let header = DatasetHeader {
        n: ds.len(),
        d: ds.dim(),
        domains: vec!["a".into(), "b".into()],
        normalized: ds.is_normalized(),
        dtype: "f32le".into(),
        meta: ds.meta().to_string(),
    };
    let mut buf = begin_container(EMB_MAGIC, &header)?;
    buf.reserve(ds.len() * ds.dim() * 8);
    push_f32s(&mut buf, ds.domain_a().iter());
    push_f32s(&mut buf, ds.domain_b().iter());
    Ok(buf)
}

/// Parses a dataset from bytes.
pub fn read_dataset(bytes: &[u8]) -> Result<EmbeddingDataset> {
    let (mut r, h): (_, DatasetHeader) = Reader::open(bytes, EMB_MAGIC)?;
    require_f32(&h.dtype)?;
    if h.domains != ["a", "b"] {
        return Err(Error::MalformedHeader {
            offset: 8,
            reason: format!("expected domains [\"a\", \"b\"], found {:?}", h.domains),
        });
    }
    if h.d == 0 {
        return Err(Error::MalformedHeader {
            offset: 8,
            reason: "d must be at least 1".into(),
        });
    }
    let block_a_start = r.offset();
    let row_bytes = h.d * 4;
    // Both blocks are present; check that they agree on N before reading.
    let rem = r.remaining();
    if rem % row_bytes != 0 {
        return Err(Error::DimensionMismatch {
            offset: block_a_start,
            reason: format!("body of {rem} bytes is not a whole number of {}-dim rows", h.d),
        });
    }
    let total_rows = rem / row_bytes;
    if total_rows != 2 * h.n {
        let rows_b = total_rows.saturating_sub(h.n);
        return Err(Error::PairingMismatch {
            rows_a: h.n,
            rows_b,
            offset: block_a_start + (h.n * row_bytes).min(rem) as u64,
        });
    }
    let a = r.f32_matrix(h.n, h.d, "domain a")?;
    let b = r.f32_matrix(h.n, h.d, "domain b")?;
    r.finish()?;
    EmbeddingDataset::from_parts(a, b, h.normalized, h.meta)
}

pub fn save_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_dataset(ds)?;
    write_file(path.as_ref(), &bytes)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    read_dataset(&fs::read(path)?)
}

pub fn save_dictionary(dict: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    let header = DictionaryHeader {
        k: dict.len(),
        d: dict.dim(),
        dtype: "f32le".into(),
        labels: dict.labels().map(<[String]>::to_vec),
    };
    let mut buf = begin_container(DIC_MAGIC, &header)?;
    push_f32s(&mut buf, dict.atoms().iter());
    write_file(path.as_ref(), &buf)
}

/// Loads a dictionary. Atoms stored as `f32` are renormalized in `f64`, since
/// rounding can move a norm by up to ~1e-7.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let bytes = fs::read(path)?;
    let (mut r, h): (_, DictionaryHeader) = Reader::open(&bytes, DIC_MAGIC)?;
    require_f32(&h.dtype)?;
    let atoms = r.f32_matrix(h.k, h.d, "atoms")?;
    r.finish()?;
    let dict = Dictionary::from_unnormalized(atoms.view())?;
    match h.labels {
        Some(l) => dict.with_labels(l),
        None => Ok(dict),
    }
}

pub fn save_codes(code: &SparseCode, path: impl AsRef<Path>) -> Result<()> {
    let header = CodeHeader {
        n: code.n_rows(),
        k: code.n_atoms(),
        nnz: code.nnz(),
        dictionary_id: code.dictionary_id().map(str::to_string),
    };
    let mut buf = begin_container(SPC_MAGIC, &header)?;
    for p in code.row_ptr() {
        buf.extend_from_slice(&(*p as u64).to_le_bytes());
    }
    for j in code.indices() {
        buf.extend_from_slice(&(*j as u32).to_le_bytes());
    }
    push_f32s(&mut buf, code.values().iter());
    write_file(path.as_ref(), &buf)
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<SparseCode> {
    let bytes = fs::read(path)?;
    let (mut r, h): (_, CodeHeader) = Reader::open(&bytes, SPC_MAGIC)?;
    let ptr_off = r.offset();
    let row_ptr: Vec<usize> = r.u64s(h.n + 1, "row pointers")?.into_iter().map(|p| p as usize).collect();
    if row_ptr.first() != Some(&0)
        || row_ptr.last() != Some(&h.nnz)
        || row_ptr.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::DimensionMismatch {
            offset: ptr_off,
            reason: "row pointers are not a monotone 0..nnz sequence".into(),
        });
    }
    let indices: Vec<usize> = r.u32s(h.nnz, "indices")?.into_iter().map(|j| j as usize).collect();
    let values = r.f32_matrix(1, h.nnz, "values")?.into_raw_vec_and_offset().0;
    r.finish()?;
    let code = SparseCode::from_raw(h.k, row_ptr, indices, values)?;
    Ok(match h.dictionary_id {
        Some(id) => code.with_dictionary_id(id),
        None => code,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::normalize_rows;
    use ndarray::array;

    fn unit_dataset(n: usize, d: usize, seed: u64) -> EmbeddingDataset {
        use rand::Rng;
        let mut rng = crate::rng::SeedStream::new(seed).rng("io", 0);
        let a = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        EmbeddingDataset::new(
            normalize_rows(a.view()).unwrap(),
            normalize_rows(b.view()).unwrap(),
            "random",
        )
        .unwrap()
        .normalized()
        .unwrap()
    }

    #[test]
    fn small_unit_dataset_round_trips_normalized() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, 0.8, 0.0]];
        let ds = EmbeddingDataset::new(a.clone(), a, "tiny").unwrap();
        let back = read_dataset(&write_dataset(&ds).unwrap()).unwrap();
        assert!(back.is_normalized());
        assert_eq!(back, ds);
    }

    #[test]
    fn large_round_trip_is_bitwise() {
        let ds = unit_dataset(1000, 512, 1);
        let bytes = write_dataset(&ds).unwrap();
        let back = read_dataset(&bytes).unwrap();
        for (x, y) in ds.domain_a().iter().zip(back.domain_a().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in ds.domain_b().iter().zip(back.domain_b().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(write_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let ds = EmbeddingDataset::new(Array2::zeros((0, 3)), Array2::zeros((0, 3)), "").unwrap();
        let back = read_dataset(&write_dataset(&ds).unwrap()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn unequal_blocks_are_a_pairing_mismatch() {
        let ds = unit_dataset(4, 3, 2);
        let mut bytes = write_dataset(&ds).unwrap();
        bytes.truncate(bytes.len() - 12);
        assert!(matches!(
            read_dataset(&bytes),
            Err(Error::PairingMismatch { rows_a: 4, rows_b: 3, .. })
        ));
    }

    #[test]
    fn bad_magic_and_nan_report_offsets() {
        let ds = unit_dataset(2, 3, 3);
        let mut bytes = write_dataset(&ds).unwrap();
        let body = bytes.len() - 2 * 2 * 3 * 4;
        bytes[body + 4..body + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        match read_dataset(&bytes) {
            Err(Error::NonFiniteAt { offset }) => assert_eq!(offset as usize, body + 4),
            other => panic!("unexpected {other:?}"),
        }
        bytes[0] = b'X';
        assert!(matches!(
            read_dataset(&bytes),
            Err(Error::MalformedHeader { offset: 0, .. })
        ));
    }

    #[test]
    fn nan_dataset_is_rejected_before_write() {
        let a = array![[f64::NAN]];
        assert!(EmbeddingDataset::new(a.clone(), a, "").is_err());
    }

    #[test]
    fn codes_and_dictionary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dict = Dictionary::new(array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
            .unwrap()
            .with_labels(vec!["x".into(), "y".into(), "z".into()])
            .unwrap();
        save_dictionary(&dict, dir.path().join("d.dic")).unwrap();
        let back = load_dictionary(dir.path().join("d.dic")).unwrap();
        assert_eq!(back.labels(), dict.labels());
        for (x, y) in back.atoms().iter().zip(dict.atoms().iter()) {
            assert!((x - y).abs() < 1e-7);
        }

        let code = SparseCode::from_rows(3, vec![vec![(0, 0.5), (2, -1.25)], vec![], vec![(1, 2.0)]])
            .unwrap()
            .with_dictionary_id(dict.fingerprint());
        save_codes(&code, dir.path().join("c.spc")).unwrap();
        assert_eq!(load_codes(dir.path().join("c.spc")).unwrap(), code);
    }
}
