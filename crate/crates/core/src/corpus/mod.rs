//! Corpus handling: vocabulary with a frequency cutoff and a dedicated OOV
//! class, character inventory, utterances, on-disk formats, and the
//! synthetic speech generator used for desk-scale experiments.

pub(crate) mod io;
mod synth;

pub use io::{
    load_corpus, read_feature_file, read_manifest, read_vocab_tsv, write_corpus,
    write_feature_file, write_vocab_tsv,
};
pub use synth::{synth_generate, GeneratedCorpus, SynthSpec};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const SOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const OOV_ID: usize = 2;

pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const OOV_TOKEN: &str = "<oov>";

/// Word vocabulary with reserved ids for sentence markers and the OOV class.
///
/// Ids are dense and deterministic: specials first, then words ordered by
/// descending count and lexicographically within ties.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_sorted(entries: Vec<(String, u64)>) -> Vocabulary {
        let mut words = vec![SOS_TOKEN.to_string(), EOS_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let mut counts = vec![0, 0, 0];
        for (w, c) in entries {
            words.push(w);
            counts.push(c);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, counts, index }
    }

    /// Build from transcripts, keeping words with at least `min_count`
    /// occurrences; everything else maps to the OOV class.
    pub fn build(transcripts: &[String], min_count: u64) -> Vocabulary {
        Self::build_limited(transcripts, min_count, usize::MAX)
    }

    /// As [`Vocabulary::build`], additionally capped to the `max_words` most
    /// frequent words (used by vocabulary-size sweeps).
    pub fn build_limited(transcripts: &[String], min_count: u64, max_words: usize) -> Vocabulary {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for line in transcripts {
            for w in line.split_whitespace() {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_words);
        Self::from_sorted(entries)
    }

    /// Total entries including the three specials.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    /// In-vocabulary lookup that does not fall back to the OOV class.
    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(|w| w.as_str()).zip(self.counts.iter().copied())
    }

    pub fn encode(&self, transcript: &str) -> Vec<usize> {
        transcript.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    /// Percentage of transcript tokens that map to the OOV class.
    pub fn oov_rate(&self, transcripts: &[String]) -> Result<f64> {
        let mut total = 0usize;
        let mut oov = 0usize;
        for line in transcripts {
            for w in line.split_whitespace() {
                total += 1;
                if self.lookup(w).is_none() {
                    oov += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::data("oov rate undefined on empty transcripts"));
        }
        Ok(100.0 * oov as f64 / total as f64)
    }
}

/// Character inventory for the character-level decoder. Ids 0 and 1 are the
/// sentence markers; actual characters (including space) follow in sorted
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct CharInventory {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharInventory {
    /// Collect every character appearing in the transcripts, plus space.
    pub fn build(transcripts: &[String]) -> CharInventory {
        Self::from_chars(transcripts.iter().flat_map(|t| t.chars()))
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> CharInventory {
        let mut set: Vec<char> = chars.into_iter().chain(std::iter::once(' ')).collect();
        set.sort_unstable();
        set.dedup();
        let index = set.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharInventory { chars: set, index }
    }

    /// Total entries including the two specials.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_for(&self, id: usize) -> Option<char> {
        if id < 2 {
            None
        } else {
            self.chars.get(id - 2).copied()
        }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Encode a character transcript; every character must be covered.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| Error::data(format!("character {c:?} not in inventory")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.char_for(i)).collect()
    }
}

/// One training or test item: acoustic frames plus its word transcript.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    /// (T x D) frames.
    pub features: Tensor,
    pub words: String,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    /// Character-level transcript: words joined by single spaces.
    pub fn char_transcript(&self) -> String {
        char_transcript(&self.words)
    }
}

pub fn char_transcript(words: &str) -> String {
    words.split_whitespace().collect::<Vec<_>>().join(" ")
}
