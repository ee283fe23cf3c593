//! `SAE1` model files: JSON header followed by `f32` parameter blocks
//! (dictionary, encoder weight, encoder bias, thresholds).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SaeKind, SaeModel};
use crate::datastore::io::{begin_container, push_f32s, write_file, Reader};
use crate::datastore::Dictionary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SAE1";

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    kind: SaeKind,
    k: usize,
    d: usize,
    kappa: usize,
    l1_weight: f64,
    dtype: String,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

pub fn write_model(model: &SaeModel) -> Result<Vec<u8>> {
    let header = ModelHeader {
        kind: model.kind,
        k: model.n_atoms(),
        d: model.dim(),
        kappa: model.kappa,
        l1_weight: model.l1_weight,
        dtype: "f32le".into(),
        labels: model.dictionary.labels().map(<[String]>::to_vec),
    };
    let mut buf = begin_container(MAGIC, &header)?;
    push_f32s(&mut buf, model.dictionary.atoms().iter());
    push_f32s(&mut buf, model.enc_weight.iter());
    push_f32s(&mut buf, model.enc_bias.iter());
    push_f32s(&mut buf, model.thresholds.iter());
    Ok(buf)
}

pub fn read_model(bytes: &[u8]) -> Result<SaeModel> {
    let (mut r, h): (_, ModelHeader) = Reader::open(bytes, MAGIC)?;
    if h.dtype != "f32le" {
        return Err(Error::MalformedHeader { offset: 8, reason: format!("unsupported dtype {:?}", h.dtype) });
    }
    let atoms = r.f32_matrix(h.k, h.d, "dictionary")?;
    let (wk, wd) = if h.kind.has_encoder() { (h.k, h.d) } else { (0, 0) };
    let enc_weight = r.f32_matrix(wk, wd, "encoder weight")?;
    let enc_bias = r.f32_matrix(1, wk, "encoder bias")?.row(0).to_owned();
    let tk = if h.kind == SaeKind::JumpRelu { h.k } else { 0 };
    let thresholds = r.f32_matrix(1, tk, "thresholds")?.row(0).to_owned();
    r.finish()?;
    // f32 storage perturbs norms slightly; restore the unit-norm invariant.
    let mut dictionary = Dictionary::from_unnormalized(atoms.view())?;
    if let Some(labels) = h.labels {
        dictionary = dictionary.with_labels(labels)?;
    }
    let model = SaeModel { kind: h.kind, dictionary, enc_weight, enc_bias, thresholds, kappa: h.kappa, l1_weight: h.l1_weight };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &SaeModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &write_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SaeModel> {
    read_model(&fs::read(path)?)
}
