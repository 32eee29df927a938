//! Attention-based acoustic-to-word speech recognition with a shared-encoder
//! character decoder, LM shallow fusion in beam search, and attention-overlap
//! recovery of out-of-vocabulary words — plus the synthetic corpus generator
//! and evaluation harness used to exercise the whole pipeline on a CPU.

pub mod beam;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod resolver;
pub mod rnnlm;
pub mod trainer;

pub use beam::{beam_search, coverage, decode_utterance, greedy_decode, BeamHypothesis, FusionConfig};
pub use corpus::{synth_generate, CharInventory, SynthSpec, Utterance, Vocabulary};
pub use error::{Error, Result};
pub use metrics::{edit_distance, EvalReport};
pub use model::{AttentionTrace, JointModel, ModelConfig};
pub use numeric::{ParamId, ParamStore, Tape, Tensor, Var};
pub use resolver::{align_oov, average_adjacent, resolve, AlignmentResult};
pub use rnnlm::{train_lm, LmConfig, LmTrainConfig, RnnLm};
pub use trainer::{clip_gradients, sort_by_length, train, TrainConfig};
