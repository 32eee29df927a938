//! On-disk formats: feature files, corpus manifests, vocabulary TSV.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::{Utterance, Vocabulary};

const FEATURE_MAGIC: &[u8; 4] = b"A2WF";
const FEATURE_VERSION: u16 = 1;

/// Feature file: magic, version u16, T u32, D u32, then T*D little-endian
/// f32 frames.
pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<()> {
    let (t, d) = (features.rows(), features.cols());
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(FEATURE_MAGIC)?;
    emit(&FEATURE_VERSION.to_le_bytes())?;
    emit(&(t as u32).to_le_bytes())?;
    emit(&(d as u32).to_le_bytes())?;
    for &v in &features.data {
        emit(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 14];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != FEATURE_MAGIC {
        return Err(Error::data(format!("{}: bad feature file magic", path.display())));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::data(format!("{}: unsupported feature version {version}", path.display())));
    }
    let t = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; t * d * 4];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::new(vec![t, d], data))
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    features: String,
    words: String,
}

/// Write a corpus directory: `manifest.jsonl` plus one feature file per
/// utterance under `feats/`.
pub fn write_corpus(dir: &Path, utterances: &[Utterance]) -> Result<()> {
    let feats = dir.join("feats");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut w = BufWriter::new(file);
    for utt in utterances {
        let rel = format!("feats/{}.a2wf", utt.id);
        write_feature_file(&dir.join(&rel), &utt.features)?;
        let entry = ManifestEntry {
            id: utt.id.clone(),
            features: rel,
            words: utt.words.clone(),
        };
        let line = serde_json::to_string(&entry)
            .map_err(|e| Error::Json { path: manifest_path.clone(), source: e })?;
        writeln!(w, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))
}

/// Read a manifest without loading features; returns (id, feature path, words).
pub fn read_manifest(manifest_path: &Path) -> Result<Vec<(String, PathBuf, String)>> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let file = fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Json { path: manifest_path.to_path_buf(), source: e })?;
        out.push((entry.id, base.join(entry.features), entry.words));
    }
    Ok(out)
}

/// Load a full corpus (manifest plus features) into memory.
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<Utterance>> {
    read_manifest(manifest_path)?
        .into_iter()
        .map(|(id, feat_path, words)| {
            Ok(Utterance { id, features: read_feature_file(&feat_path)?, words })
        })
        .collect()
}

/// Vocabulary TSV: `word<TAB>count`, specials first with count 0, then
/// descending count.
pub fn write_vocab_tsv(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for (w, c) in vocab.entries() {
        out.push_str(w);
        out.push('\t');
        out.push_str(&c.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_vocab_tsv(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    vocab_from_tsv(&text).map_err(|msg| Error::data(format!("{}: {msg}", path.display())))
}

pub(crate) fn vocab_from_tsv(text: &str) -> std::result::Result<Vocabulary, String> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (word, count) = line
            .split_once('\t')
            .ok_or_else(|| format!("line {}: missing tab", i + 1))?;
        let count: u64 = count.parse().map_err(|_| format!("line {}: bad count", i + 1))?;
        entries.push((word.to_string(), count));
    }
    let specials = [super::SOS_TOKEN, super::EOS_TOKEN, super::OOV_TOKEN];
    if entries.len() < 3 || entries[..3].iter().map(|e| e.0.as_str()).ne(specials) {
        return Err("specials missing or out of order".to_string());
    }
    Ok(Vocabulary::from_sorted(entries.split_off(3)))
}

/// Canonical serialization used for checkpoint fingerprints.
pub(crate) fn vocab_to_tsv(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (w, c) in vocab.entries() {
        out.push_str(w);
        out.push('\t');
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}
