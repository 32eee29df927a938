//! Checkpoints: a JSON manifest (version, config, vocabulary, named-array
//! index) next to a binary blob of little-endian f64 values concatenated in
//! manifest order. Acoustic and LM checkpoints share the format and carry a
//! fingerprint of their vocabulary so decoding can refuse mismatched pairs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::io::{vocab_from_tsv, vocab_to_tsv};
use crate::corpus::{CharInventory, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{JointModel, ModelConfig};
use crate::numeric::ParamStore;
use crate::rnnlm::{LmConfig, RnnLm};

const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";

pub const KIND_ACOUSTIC: &str = "acoustic";
pub const KIND_LM: &str = "lm";

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    config: serde_json::Value,
    vocab_tsv: String,
    vocab_fingerprint: String,
    chars: Option<Vec<char>>,
    arrays: Vec<ArrayEntry>,
}

pub fn vocab_fingerprint(vocab: &Vocabulary) -> String {
    let mut hasher = Sha256::new();
    hasher.update(vocab_to_tsv(vocab).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_store(dir: &Path, store: &ParamStore) -> Result<Vec<ArrayEntry>> {
    let mut arrays = Vec::with_capacity(store.len());
    let mut blob = Vec::with_capacity(store.total_elements() * 8);
    let mut offset = 0usize;
    for (_, p) in store.iter() {
        arrays.push(ArrayEntry {
            name: p.name.clone(),
            shape: p.value.shape.clone(),
            offset,
            len: p.value.len(),
        });
        for v in &p.value.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value.len();
    }
    let path = dir.join(PARAMS);
    fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    Ok(arrays)
}

fn read_store(dir: &Path, arrays: &[ArrayEntry], store: &mut ParamStore) -> Result<()> {
    let path = dir.join(PARAMS);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let entry = arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::data(format!("checkpoint missing parameter {name}")))?;
        let value = store.value_mut(id);
        if entry.shape != value.shape {
            return Err(Error::data(format!(
                "parameter {name}: checkpoint shape {:?} does not match model shape {:?}",
                entry.shape, value.shape
            )));
        }
        let end = entry.offset + entry.len;
        if end > values.len() {
            return Err(Error::data(format!("parameter {name}: blob too short")));
        }
        value.data.copy_from_slice(&values[entry.offset..end]);
    }
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Json { path: path.clone(), source: e })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn save_model(
    dir: &Path,
    model: &JointModel,
    vocab: &Vocabulary,
    chars: &CharInventory,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let arrays = write_store(dir, &model.store)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: KIND_ACOUSTIC.to_string(),
        config: serde_json::to_value(&model.cfg)
            .map_err(|e| Error::Json { path: dir.join(MANIFEST), source: e })?,
        vocab_tsv: vocab_to_tsv(vocab),
        vocab_fingerprint: vocab_fingerprint(vocab),
        chars: Some(chars.chars().to_vec()),
        arrays,
    };
    write_manifest(dir, &manifest)
}

pub fn load_model(dir: &Path) -> Result<(JointModel, Vocabulary, CharInventory)> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != KIND_ACOUSTIC {
        return Err(Error::data(format!(
            "{}: expected an acoustic checkpoint, found kind {:?}",
            dir.display(),
            manifest.kind
        )));
    }
    let cfg: ModelConfig = serde_json::from_value(manifest.config)
        .map_err(|e| Error::Json { path: dir.join(MANIFEST), source: e })?;
    let vocab = vocab_from_tsv(&manifest.vocab_tsv)
        .map_err(|msg| Error::data(format!("{}: {msg}", dir.display())))?;
    let chars = manifest
        .chars
        .ok_or_else(|| Error::data("acoustic checkpoint missing character inventory"))?;
    let inventory = CharInventory::from_chars(chars);
    let mut model = JointModel::new(cfg)?;
    read_store(dir, &manifest.arrays, &mut model.store)?;
    Ok((model, vocab, inventory))
}

pub fn save_lm(dir: &Path, lm: &RnnLm, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let arrays = write_store(dir, &lm.store)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: KIND_LM.to_string(),
        config: serde_json::to_value(&lm.cfg)
            .map_err(|e| Error::Json { path: dir.join(MANIFEST), source: e })?,
        vocab_tsv: vocab_to_tsv(vocab),
        vocab_fingerprint: vocab_fingerprint(vocab),
        chars: None,
        arrays,
    };
    write_manifest(dir, &manifest)
}

pub fn load_lm(dir: &Path) -> Result<(RnnLm, Vocabulary)> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != KIND_LM {
        return Err(Error::data(format!(
            "{}: expected an LM checkpoint, found kind {:?}",
            dir.display(),
            manifest.kind
        )));
    }
    let cfg: LmConfig = serde_json::from_value(manifest.config)
        .map_err(|e| Error::Json { path: dir.join(MANIFEST), source: e })?;
    let vocab = vocab_from_tsv(&manifest.vocab_tsv)
        .map_err(|msg| Error::data(format!("{}: {msg}", dir.display())))?;
    let mut lm = RnnLm::new(cfg)?;
    read_store(dir, &manifest.arrays, &mut lm.store)?;
    Ok((lm, vocab))
}

/// Fingerprint recorded in a checkpoint without loading the whole model.
pub fn peek_fingerprint(dir: &Path) -> Result<String> {
    Ok(read_manifest(dir)?.vocab_fingerprint)
}
