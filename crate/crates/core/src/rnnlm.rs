//! Word-level recurrent language model for shallow fusion: two
//! unidirectional LSTM layers with a residual connection between them and
//! input/output embeddings tied to one buffer.
//!
//! Sentence boundaries are marked with the end token; it also serves as the
//! initial input when scoring from a fresh state, so scoring matches the
//! training stream exactly. The model is trained on OOV-mapped text, so the
//! OOV class receives genuine probability mass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EOS_ID;
use crate::error::{Error, Result};
use crate::layers::{InitConfig, LstmCell, LstmState, LstmVarState};
use crate::numeric::{kernels, ParamId, ParamStore, Tape, Tensor, Var};
use crate::trainer::{clip_gradients, Adam};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LmConfig {
    pub vocab: usize,
    /// Hidden size; also the embedding size, forced by tying.
    pub hidden: usize,
    pub init_range: f64,
    pub forget_bias: f64,
    pub init_seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { vocab: 0, hidden: 32, init_range: 0.1, forget_bias: 1.0, init_seed: 1 }
    }
}

pub struct RnnLm {
    pub cfg: LmConfig,
    pub store: ParamStore,
    /// (V x H); rows are input embeddings, and the same buffer is the
    /// output projection.
    pub embedding: ParamId,
    pub layer1: LstmCell,
    pub layer2: LstmCell,
}

/// Hidden and cell activations for both layers.
#[derive(Clone, Debug)]
pub struct LmState {
    pub l1: LstmState,
    pub l2: LstmState,
}

impl RnnLm {
    pub fn new(cfg: LmConfig) -> Result<RnnLm> {
        if cfg.vocab < 3 {
            return Err(Error::config("LM vocabulary not set"));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let init = InitConfig { range: cfg.init_range, forget_bias: cfg.forget_bias };
        let embedding =
            store.add_uniform("lm.embedding", vec![cfg.vocab, cfg.hidden], cfg.init_range, &mut rng);
        let layer1 = LstmCell::new(&mut store, "lm.l1", cfg.hidden, cfg.hidden, init, &mut rng);
        let layer2 = LstmCell::new(&mut store, "lm.l2", cfg.hidden, cfg.hidden, init, &mut rng);
        Ok(RnnLm { cfg, store, embedding, layer1, layer2 })
    }

    pub fn zero_state(&self) -> LmState {
        LmState { l1: LstmState::zeros(self.cfg.hidden), l2: LstmState::zeros(self.cfg.hidden) }
    }

    /// One step over plain values: log-probabilities of the next token and
    /// the advanced state.
    pub fn step_eval(&self, y_prev: usize, state: &LmState) -> (Vec<f64>, LmState) {
        assert!(y_prev < self.cfg.vocab, "token id {y_prev} outside LM vocabulary");
        let emb = self.store.value(self.embedding).row(y_prev).to_vec();
        let l1 = self.layer1.step_eval(&self.store, &emb, &state.l1);
        let l2 = self.layer2.step_eval(&self.store, &l1.h, &state.l2);
        let mut rep = l1.h.clone();
        for (r, h2) in rep.iter_mut().zip(&l2.h) {
            *r += h2;
        }
        let v = self.cfg.vocab;
        let mut logits = vec![0.0; v];
        kernels::matmul(&self.store.value(self.embedding).data, &rep, &mut logits, v, self.cfg.hidden, 1);
        let mut log_probs = vec![0.0; v];
        kernels::log_softmax(&logits, &mut log_probs);
        (log_probs, LmState { l1, l2 })
    }

    /// Total log-probability of a token sequence from a zero state, scoring
    /// each token given its prefix.
    pub fn sequence_logprob(&self, tokens: &[usize]) -> f64 {
        let mut state = self.zero_state();
        let mut input = EOS_ID;
        let mut total = 0.0;
        for &tok in tokens {
            let (lp, next) = self.step_eval(input, &state);
            total += lp[tok];
            state = next;
            input = tok;
        }
        total
    }

    /// Tape-path step used for training.
    pub fn tape_step(
        &self,
        tape: &mut Tape,
        y_prev: usize,
        state: (LstmVarState, LstmVarState),
    ) -> (Var, (LstmVarState, LstmVarState)) {
        let table = tape.param(&self.store, self.embedding);
        let emb = tape.row(table, y_prev);
        let l1 = self.layer1.step(tape, &self.store, emb, state.0);
        let l2 = self.layer2.step(tape, &self.store, l1.h, state.1);
        let rep = tape.add(l1.h, l2.h);
        let logits = tape.matvec(table, rep);
        (logits, (l1, l2))
    }
}

/// Concatenate sentences into one boundary-marked token stream:
/// eos, s1, eos, s2, eos, ...
pub fn boundary_stream(sentences: &[Vec<usize>]) -> Vec<usize> {
    let mut stream = vec![EOS_ID];
    for s in sentences {
        stream.extend_from_slice(s);
        stream.push(EOS_ID);
    }
    stream
}

/// Mean negative log-likelihood per predicted position of a boundary-marked
/// stream, scored stepwise with state carried across the whole stream.
pub fn stream_nll(lm: &RnnLm, sentences: &[Vec<usize>]) -> Result<f64> {
    let stream = boundary_stream(sentences);
    if stream.len() < 2 {
        return Err(Error::data("empty LM evaluation stream"));
    }
    let mut state = lm.zero_state();
    let mut total = 0.0;
    for t in 0..stream.len() - 1 {
        let (lp, next) = lm.step_eval(stream[t], &state);
        total += -lp[stream[t + 1]];
        state = next;
    }
    Ok(total / (stream.len() - 1) as f64)
}

pub fn perplexity(lm: &RnnLm, sentences: &[Vec<usize>]) -> Result<f64> {
    Ok(stream_nll(lm, sentences)?.exp())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub bptt_len: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig { lr: 1e-3, bptt_len: 100, clip_norm: 5.0, max_epochs: 10, seed: 1 }
    }
}

#[derive(Debug)]
pub struct LmTrainOutcome {
    /// (epoch, train nll per token, validation perplexity)
    pub log: Vec<(usize, f64, f64)>,
    pub best_valid_ppl: f64,
}

/// Truncated-BPTT training over the boundary-marked stream. State values
/// carry across window boundaries; gradients do not.
pub fn train_lm(
    lm: &mut RnnLm,
    train_sentences: &[Vec<usize>],
    valid_sentences: &[Vec<usize>],
    cfg: &LmTrainConfig,
) -> Result<LmTrainOutcome> {
    if train_sentences.is_empty() {
        return Err(Error::data("empty LM training corpus"));
    }
    if cfg.bptt_len == 0 || cfg.lr <= 0.0 {
        return Err(Error::config("bptt length and learning rate must be positive"));
    }
    let stream = boundary_stream(train_sentences);
    let mut adam = Adam::new(&lm.store, cfg.lr);
    let mut log = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_snapshot = None;

    for epoch in 1..=cfg.max_epochs {
        let mut carried = lm.zero_state();
        let mut total_nll = 0.0;
        let mut positions = 0usize;

        let mut start = 0;
        while start + 1 < stream.len() {
            let end = (start + cfg.bptt_len).min(stream.len() - 1);
            let mut tape = Tape::new();
            let mut state = (
                LstmVarState {
                    h: tape.leaf(Tensor::vector(carried.l1.h.clone())),
                    c: tape.leaf(Tensor::vector(carried.l1.c.clone())),
                },
                LstmVarState {
                    h: tape.leaf(Tensor::vector(carried.l2.h.clone())),
                    c: tape.leaf(Tensor::vector(carried.l2.c.clone())),
                },
            );
            let mut window_sum: Option<Var> = None;
            for t in start..end {
                let (logits, next) = lm.tape_step(&mut tape, stream[t], state);
                let logp = tape.log_softmax(logits);
                let gold = tape.slice(logp, stream[t + 1], 1);
                window_sum = Some(match window_sum {
                    None => gold,
                    Some(acc) => tape.add(acc, gold),
                });
                state = next;
            }
            let window_len = end - start;
            let sum = window_sum.expect("nonempty window");
            let loss = tape.scale(sum, -1.0 / window_len as f64);
            let loss_value = tape.value(loss).data[0];
            if !loss_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite LM loss {loss_value} at epoch {epoch}"
                )));
            }
            total_nll += loss_value * window_len as f64;
            positions += window_len;

            lm.store.zero_grads();
            tape.backward(loss, &mut lm.store);
            clip_gradients(&mut lm.store, cfg.clip_norm);
            adam.step(&mut lm.store);

            carried = LmState {
                l1: LstmState {
                    h: tape.value(state.0.h).data.clone(),
                    c: tape.value(state.0.c).data.clone(),
                },
                l2: LstmState {
                    h: tape.value(state.1.h).data.clone(),
                    c: tape.value(state.1.c).data.clone(),
                },
            };
            start = end;
        }

        let train_nll = total_nll / positions as f64;
        let valid_ppl = if valid_sentences.is_empty() {
            f64::NAN
        } else {
            perplexity(lm, valid_sentences)?
        };
        log.push((epoch, train_nll, valid_ppl));
        if valid_ppl.is_finite() && valid_ppl < best {
            best = valid_ppl;
            best_snapshot = Some(lm.store.snapshot());
        }
    }
    if let Some(snap) = &best_snapshot {
        lm.store.restore(snap);
    }
    Ok(LmTrainOutcome { log, best_valid_ppl: best })
}
