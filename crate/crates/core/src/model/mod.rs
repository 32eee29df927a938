//! The joint recognizer: a shared encoder feeding a word-level and a
//! character-level attention decoder, trained on an interpolated loss.

pub mod attention;
pub mod decoder;
pub mod encoder;

pub use attention::{attend, attend_eval, AttentionParams};
pub use decoder::{
    argmax, decode_step, init_state, score_sequence, sequence_nll, AttentionDecoder,
    AttentionTrace, DecState, DecoderStepper, StepOut, TapeDecState,
};
pub use encoder::EncoderStack;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharInventory, Utterance, Vocabulary, EOS_ID};
use crate::error::{Error, Result};
use crate::layers::InitConfig;
use crate::numeric::{ParamStore, Tape, Tensor, Var};

/// Model hyperparameters. Defaults are desk-scale; the structural choices
/// (five encoder layers, subsampling at layers 1, 2, and 4, character tap
/// at layer 4) mirror the full-scale recipe.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    pub subsample_layers: Vec<usize>,
    pub char_tap_layer: usize,
    pub dec_hidden: usize,
    pub att_dim: usize,
    pub loc_channels: usize,
    pub loc_kernel_width: usize,
    pub word_embed: usize,
    pub char_embed: usize,
    pub word_vocab: usize,
    pub char_vocab: usize,
    /// Word-loss weight in the joint objective.
    pub lambda: f64,
    pub dropout: f64,
    pub init_range: f64,
    pub forget_bias: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 16,
            enc_layers: 5,
            enc_hidden: 20,
            subsample_layers: vec![1, 2, 4],
            char_tap_layer: 4,
            dec_hidden: 24,
            att_dim: 24,
            loc_channels: 10,
            loc_kernel_width: 5,
            word_embed: 16,
            char_embed: 8,
            word_vocab: 0,
            char_vocab: 0,
            lambda: 0.5,
            dropout: 0.2,
            init_range: 0.1,
            forget_bias: 1.0,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enc_layers == 0 || self.char_tap_layer == 0 || self.char_tap_layer > self.enc_layers {
            return Err(Error::config(format!(
                "character tap layer {} outside encoder stack of {}",
                self.char_tap_layer, self.enc_layers
            )));
        }
        let late_subsamples = self
            .subsample_layers
            .iter()
            .filter(|&&l| l >= self.char_tap_layer && l <= self.enc_layers)
            .count();
        if late_subsamples != 1 {
            return Err(Error::config(
                "exactly one subsampling stage must separate the character tap from the word \
                 branch output",
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.loc_kernel_width.is_multiple_of(2) {
            return Err(Error::config("location kernel width must be odd"));
        }
        if self.word_vocab < 3 || self.char_vocab < 2 {
            return Err(Error::config("vocabulary sizes not set"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Word decoder plus character decoder over one shared encoder.
pub struct JointModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderStack,
    pub word_decoder: AttentionDecoder,
    pub char_decoder: AttentionDecoder,
}

/// Loss components of one utterance.
pub struct JointLoss {
    pub joint: Var,
    pub word_nll: f64,
    pub char_nll: f64,
    pub word_trace: AttentionTrace,
    pub char_trace: AttentionTrace,
}

impl JointModel {
    pub fn new(cfg: ModelConfig) -> Result<JointModel> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let init = InitConfig { range: cfg.init_range, forget_bias: cfg.forget_bias };
        let encoder = EncoderStack::new(
            &mut store,
            cfg.feat_dim,
            cfg.enc_layers,
            cfg.enc_hidden,
            &cfg.subsample_layers,
            cfg.char_tap_layer,
            init,
            &mut rng,
        );
        let enc_dim = 2 * cfg.enc_hidden;
        let word_decoder = AttentionDecoder::new(
            &mut store,
            "word_dec",
            cfg.word_vocab,
            cfg.word_embed,
            cfg.dec_hidden,
            enc_dim,
            cfg.att_dim,
            cfg.loc_channels,
            cfg.loc_kernel_width,
            init,
            &mut rng,
        );
        let char_decoder = AttentionDecoder::new(
            &mut store,
            "char_dec",
            cfg.char_vocab,
            cfg.char_embed,
            cfg.dec_hidden,
            enc_dim,
            cfg.att_dim,
            cfg.loc_channels,
            cfg.loc_kernel_width,
            init,
            &mut rng,
        );
        Ok(JointModel { cfg, store, encoder, word_decoder, char_decoder })
    }

    /// Configure vocab sizes from built corpora resources.
    pub fn for_vocab(mut cfg: ModelConfig, vocab: &Vocabulary, chars: &CharInventory) -> Result<JointModel> {
        cfg.word_vocab = vocab.len();
        cfg.char_vocab = chars.len();
        JointModel::new(cfg)
    }

    /// Inference-time encoding of a feature matrix.
    pub fn encode_eval(&self, feats: &Tensor) -> (Tensor, Tensor) {
        assert!(feats.rows() >= 1, "empty feature sequence");
        self.encoder.forward_eval(&self.store, feats)
    }

    /// Training loss of one utterance on the tape. Word and character
    /// targets must already end with the end marker.
    #[allow(clippy::too_many_arguments)]
    pub fn joint_loss(
        &self,
        tape: &mut Tape,
        feats: &Tensor,
        word_targets: &[usize],
        char_targets: &[usize],
        sampling_prob: f64,
        smoothing: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> JointLoss {
        assert!(feats.rows() >= 1, "empty feature sequence");
        assert_eq!(word_targets.last(), Some(&EOS_ID), "word targets must end with the end marker");
        assert_eq!(char_targets.last(), Some(&EOS_ID), "char targets must end with the end marker");
        let drop = if train { self.cfg.dropout } else { 0.0 };

        let feats_var = tape.leaf(feats.clone());
        let (h_word, h_char) = self.encoder.forward(tape, &self.store, feats_var, drop, rng);
        let (word_nll, word_trace) = sequence_nll(
            tape,
            &self.store,
            &self.word_decoder,
            h_word,
            word_targets,
            sampling_prob,
            smoothing,
            drop,
            rng,
        );
        let (char_nll, char_trace) = sequence_nll(
            tape,
            &self.store,
            &self.char_decoder,
            h_char,
            char_targets,
            sampling_prob,
            smoothing,
            drop,
            rng,
        );
        let word_part = tape.scale(word_nll, self.cfg.lambda);
        let char_part = tape.scale(char_nll, 1.0 - self.cfg.lambda);
        let joint = tape.add(word_part, char_part);
        JointLoss {
            joint,
            word_nll: tape.value(word_nll).data[0],
            char_nll: tape.value(char_nll).data[0],
            word_trace,
            char_trace,
        }
    }

    /// Encode an utterance's transcripts into (word, char) target ids with
    /// trailing end markers.
    pub fn targets(
        vocab: &Vocabulary,
        chars: &CharInventory,
        utt: &Utterance,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut w = vocab.encode(&utt.words);
        w.push(EOS_ID);
        let mut c = chars.encode(&utt.char_transcript())?;
        c.push(EOS_ID);
        Ok((w, c))
    }
}
