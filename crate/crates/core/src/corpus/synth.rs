//! Synthetic corpus generator: renders character strings as noisy template
//! frames so the whole recognition pipeline can be exercised without audio.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::{char_transcript, Utterance};

/// Parameters of the generator.
///
/// Every character (including space) renders as a fixed one-hot template of
/// dimension `feature_dim`, repeated `frames_per_char` times, with Gaussian
/// noise of standard deviation `noise_sigma` added per element. Word choice
/// follows a Zipf distribution over a fixed lexicon; test-only OOV words are
/// built from the same alphabet but never appear in the lexicon.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub alphabet_size: usize,
    pub frames_per_char: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub lexicon_size: usize,
    pub zipf_exponent: f64,
    /// Inclusive range of word lengths in characters.
    pub word_len: (usize, usize),
    /// Inclusive range of utterance lengths in words.
    pub utt_words: (usize, usize),
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_test_oov: usize,
    pub n_oov_words: usize,
    /// OOV words injected into each utterance of the OOV test split.
    pub oov_per_utterance: usize,
    /// Extra text-only lines for the larger LM training condition.
    pub lm_extra_lines: usize,
    /// Drop word sequences that would repeat more than this many times.
    pub max_duplicate_count: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            alphabet_size: 12,
            frames_per_char: 3,
            feature_dim: 16,
            noise_sigma: 0.15,
            lexicon_size: 200,
            zipf_exponent: 1.0,
            word_len: (2, 4),
            utt_words: (2, 4),
            n_train: 2000,
            n_valid: 100,
            n_test: 200,
            n_test_oov: 200,
            n_oov_words: 30,
            oov_per_utterance: 1,
            lm_extra_lines: 4000,
            max_duplicate_count: None,
            seed: 17,
        }
    }
}

/// Everything the generator produces for one seeding.
pub struct GeneratedCorpus {
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub test_oov: Vec<Utterance>,
    /// Transcript-only text matching the train split distribution.
    pub lm_extra_text: Vec<String>,
    pub lexicon: Vec<String>,
    pub oov_words: Vec<String>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream simple and reproducible.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn alphabet(size: usize) -> Vec<char> {
    (0..size).map(|i| (b'a' + i as u8) as char).collect()
}

fn random_word(rng: &mut ChaCha8Rng, chars: &[char], len_range: (usize, usize)) -> String {
    let len = rng.gen_range(len_range.0..=len_range.1);
    (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect()
}

/// Distinct random words; `taken` entries are excluded.
fn word_list(
    rng: &mut ChaCha8Rng,
    chars: &[char],
    len_range: (usize, usize),
    n: usize,
    taken: &[String],
) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(Error::config(format!(
                "could not draw {n} distinct words of length {len_range:?} over {} characters",
                chars.len()
            )));
        }
        let w = random_word(rng, chars, len_range);
        if !taken.contains(&w) && !out.contains(&w) {
            out.push(w);
        }
    }
    Ok(out)
}

struct Renderer {
    templates: HashMap<char, usize>,
    feature_dim: usize,
    frames_per_char: usize,
    sigma: f64,
}

impl Renderer {
    fn new(spec: &SynthSpec, chars: &[char]) -> Result<Renderer> {
        // one basis slot per alphabet character plus one for space
        if chars.len() + 1 > spec.feature_dim {
            return Err(Error::config(format!(
                "alphabet of {} plus space needs feature_dim >= {}, got {}",
                chars.len(),
                chars.len() + 1,
                spec.feature_dim
            )));
        }
        let mut templates: HashMap<char, usize> =
            chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        templates.insert(' ', chars.len());
        Ok(Renderer {
            templates,
            feature_dim: spec.feature_dim,
            frames_per_char: spec.frames_per_char,
            sigma: spec.noise_sigma,
        })
    }

    fn render(&self, words: &str, rng: &mut ChaCha8Rng) -> Tensor {
        let text = char_transcript(words);
        let t_len = text.chars().count() * self.frames_per_char;
        let mut data = Vec::with_capacity(t_len * self.feature_dim);
        for c in text.chars() {
            let slot = self.templates[&c];
            for _ in 0..self.frames_per_char {
                for d in 0..self.feature_dim {
                    let base = if d == slot { 1.0 } else { 0.0 };
                    let noise = if self.sigma > 0.0 { self.sigma * gaussian(rng) } else { 0.0 };
                    // quantize through f32 so in-memory corpora match the disk format
                    data.push((base + noise) as f32 as f64);
                }
            }
        }
        Tensor::new(vec![t_len, self.feature_dim], data)
    }
}

struct Sampler<'a> {
    lexicon: &'a [String],
    zipf: WeightedIndex<f64>,
    utt_words: (usize, usize),
}

impl<'a> Sampler<'a> {
    fn new(spec: &SynthSpec, lexicon: &'a [String]) -> Sampler<'a> {
        let weights: Vec<f64> =
            (0..lexicon.len()).map(|k| 1.0 / ((k + 1) as f64).powf(spec.zipf_exponent)).collect();
        Sampler {
            lexicon,
            zipf: WeightedIndex::new(weights).expect("nonempty lexicon"),
            utt_words: spec.utt_words,
        }
    }

    fn sample_words(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let n = rng.gen_range(self.utt_words.0..=self.utt_words.1);
        (0..n).map(|_| self.lexicon[self.zipf.sample(rng)].clone()).collect()
    }
}

/// Generate all splits and LM text for a spec. Fixed seed, fixed output.
pub fn synth_generate(spec: &SynthSpec) -> Result<GeneratedCorpus> {
    if spec.lexicon_size == 0 || spec.utt_words.0 == 0 || spec.frames_per_char == 0 {
        return Err(Error::config("lexicon, utterance length, and frames per char must be positive"));
    }
    if spec.word_len.0 == 0 || spec.word_len.0 > spec.word_len.1 || spec.utt_words.0 > spec.utt_words.1 {
        return Err(Error::config("bad word/utterance length ranges"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let chars = alphabet(spec.alphabet_size);
    let renderer = Renderer::new(spec, &chars)?;

    let lexicon = word_list(&mut rng, &chars, spec.word_len, spec.lexicon_size, &[])?;
    let oov_words = word_list(&mut rng, &chars, spec.word_len, spec.n_oov_words, &lexicon)?;
    let sampler = Sampler::new(spec, &lexicon);

    let mut dup_counts: HashMap<String, usize> = HashMap::new();
    let mut sample_capped = |rng: &mut ChaCha8Rng| -> Vec<String> {
        for _ in 0..200 {
            let words = sampler.sample_words(rng);
            let key = words.join(" ");
            let seen = dup_counts.entry(key).or_insert(0);
            if spec.max_duplicate_count.is_none_or(|cap| *seen < cap) {
                *seen += 1;
                return words;
            }
        }
        sampler.sample_words(rng)
    };

    let make_split = |prefix: &str, n: usize, rng: &mut ChaCha8Rng, inject_oov: bool,
                          dup: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<String>|
     -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let mut words = dup(rng);
                if inject_oov {
                    for _ in 0..spec.oov_per_utterance {
                        let pos = rng.gen_range(0..words.len());
                        words[pos] = oov_words[rng.gen_range(0..oov_words.len())].clone();
                    }
                }
                let words = words.join(" ");
                let features = renderer.render(&words, rng);
                Utterance { id: format!("{prefix}-{i:05}"), features, words }
            })
            .collect()
    };

    let train = make_split("train", spec.n_train, &mut rng, false, &mut sample_capped);
    let mut uncapped = |rng: &mut ChaCha8Rng| sampler.sample_words(rng);
    let valid = make_split("valid", spec.n_valid, &mut rng, false, &mut uncapped);
    let test = make_split("test", spec.n_test, &mut rng, false, &mut uncapped);
    let test_oov = make_split("oov", spec.n_test_oov, &mut rng, true, &mut uncapped);

    let lm_extra_text: Vec<String> =
        (0..spec.lm_extra_lines).map(|_| sampler.sample_words(&mut rng).join(" ")).collect();

    Ok(GeneratedCorpus { train, valid, test, test_oov, lm_extra_text, lexicon, oov_words })
}
