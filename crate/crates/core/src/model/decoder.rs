//! Attention decoder shared by the word and character branches.
//!
//! Step contract, identical on the tape and eval paths: absorb the
//! previously emitted token into the LSTM state together with the context
//! that produced it, attend with the updated state, then project
//! state-plus-context to logits for the next token. The first step absorbs
//! the start marker with a zero context and a uniform attention prior.

use rand::Rng;

use crate::corpus::SOS_ID;
use crate::layers::{dropout, embed, InitConfig, Linear, LstmCell, LstmState, LstmVarState};
use crate::numeric::{kernels, ParamId, ParamStore, Tape, Tensor, Var};

use super::attention::{attend, attend_eval, AttentionParams};

/// Attention weights recorded during decoding, one row per emitted token.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub rows: Vec<Vec<f64>>,
}

impl AttentionTrace {
    pub fn new() -> AttentionTrace {
        AttentionTrace { rows: Vec::new() }
    }

    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn frames(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Every row is a distribution over source frames.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < tol)
    }

    /// Cumulative attention mass per source frame.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.frames()];
        for row in &self.rows {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }
}

/// One attention decoder: embedding, single LSTM, location-aware attention,
/// and an output projection over its token inventory.
#[derive(Clone, Debug)]
pub struct AttentionDecoder {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub enc_dim: usize,
    /// (V x E)
    pub embedding: ParamId,
    pub lstm: LstmCell,
    /// (H + enc_dim) -> V
    pub output: Linear,
    pub att: AttentionParams,
}

impl AttentionDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        enc_dim: usize,
        att_dim: usize,
        loc_channels: usize,
        loc_width: usize,
        init: InitConfig,
        rng: &mut impl Rng,
    ) -> AttentionDecoder {
        let embedding =
            store.add_uniform(format!("{prefix}.embedding"), vec![vocab, embed_dim], init.range, rng);
        let lstm = LstmCell::new(store, &format!("{prefix}.lstm"), embed_dim + enc_dim, hidden, init, rng);
        let output = Linear::new(store, &format!("{prefix}.output"), hidden + enc_dim, vocab, init, rng);
        let att = AttentionParams::new(
            store,
            &format!("{prefix}.att"),
            hidden,
            enc_dim,
            att_dim,
            loc_channels,
            loc_width,
            init.range,
            rng,
        );
        AttentionDecoder { vocab, embed_dim, hidden, enc_dim, embedding, lstm, output, att }
    }
}

/// Decoder state on the tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeDecState {
    pub lstm: LstmVarState,
    pub ctx: Var,
    pub att: Var,
}

pub fn init_state(tape: &mut Tape, dec: &AttentionDecoder, frames: usize) -> TapeDecState {
    assert!(frames >= 1, "decoder needs at least one encoded frame");
    TapeDecState {
        lstm: dec.lstm.zero_state(tape),
        ctx: tape.leaf(Tensor::zeros(vec![dec.enc_dim])),
        att: tape.leaf(Tensor::vector(vec![1.0 / frames as f64; frames])),
    }
}

/// One decoder step on the tape. Returns logits over the vocabulary, the
/// advanced state, and this step's attention row.
#[allow(clippy::too_many_arguments)]
pub fn decode_step(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &AttentionDecoder,
    state: &TapeDecState,
    y_prev: usize,
    h: Var,
    h_proj: Var,
    drop_ratio: f64,
    rng: &mut impl Rng,
) -> (Var, TapeDecState, Var) {
    let emb = embed(tape, store, dec.embedding, y_prev);
    let emb = dropout(tape, emb, drop_ratio, rng);
    let x = tape.concat(&[emb, state.ctx]);
    let lstm = dec.lstm.step(tape, store, x, state.lstm);
    let (ctx, alpha) = attend(tape, store, &dec.att, lstm.h, h, h_proj, state.att);
    let gen_in = tape.concat(&[lstm.h, ctx]);
    let gen_in = dropout(tape, gen_in, drop_ratio, rng);
    let logits = dec.output.apply(tape, store, gen_in);
    (logits, TapeDecState { lstm, ctx, att: alpha }, alpha)
}

/// Teacher-forced negative log-likelihood of a target sequence under the
/// decoder, with label smoothing and scheduled sampling.
///
/// Targets must end with the end marker. With probability `sampling_prob`
/// each non-initial input token is the model's own previous argmax instead
/// of the gold token. The trace holds one attention row per target.
#[allow(clippy::too_many_arguments)]
pub fn sequence_nll(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &AttentionDecoder,
    h: Var,
    targets: &[usize],
    sampling_prob: f64,
    smoothing: f64,
    drop_ratio: f64,
    rng: &mut impl Rng,
) -> (Var, AttentionTrace) {
    assert!(!targets.is_empty(), "empty target sequence");
    assert!((0.0..=1.0).contains(&sampling_prob), "bad sampling prob {sampling_prob}");
    assert!((0.0..=1.0).contains(&smoothing), "bad smoothing {smoothing}");

    let frames = tape.shape(h)[0];
    let h_proj = dec.att.project_encoding(tape, store, h);
    let mut state = init_state(tape, dec, frames);
    let mut trace = AttentionTrace::new();
    let mut input = SOS_ID;
    let mut gold_sum: Option<Var> = None;

    let v = dec.vocab;
    for (n, &target) in targets.iter().enumerate() {
        assert!(target < v, "target id {target} outside vocabulary of {v}");
        if n > 0 {
            // scheduled sampling draw happens for every step for a stable
            // rng stream, whether or not the sample is taken
            let take_model = rng.gen::<f64>() < sampling_prob;
            if !take_model {
                input = targets[n - 1];
            }
        }
        let (logits, next, alpha) =
            decode_step(tape, store, dec, &state, input, h, h_proj, drop_ratio, rng);
        let logp = tape.log_softmax(logits);

        let mut target_dist = vec![smoothing / (v - 1) as f64; v];
        target_dist[target] = 1.0 - smoothing;
        let q = tape.leaf(Tensor::vector(target_dist));
        let term = tape.dot(q, logp);
        gold_sum = Some(match gold_sum {
            Some(acc) => tape.add(acc, term),
            None => term,
        });

        trace.rows.push(tape.value(alpha).data.clone());
        input = argmax(&tape.value(logits).data);
        state = next;
    }

    let loss = tape.scale(gold_sum.expect("nonempty targets"), -1.0);
    (loss, trace)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Plain-value decoder state used during search.
#[derive(Clone, Debug)]
pub struct DecState {
    pub lstm: LstmState,
    pub ctx: Vec<f64>,
    pub att: Vec<f64>,
}

/// Output of one eval step: token log-probabilities and the advanced state
/// (whose `att` field is this step's attention row).
pub struct StepOut {
    pub log_probs: Vec<f64>,
    pub state: DecState,
}

/// Inference-time stepper over a frozen decoder; precomputes the encoder
/// projection once per utterance.
pub struct DecoderStepper<'a> {
    pub dec: &'a AttentionDecoder,
    store: &'a ParamStore,
    h: &'a Tensor,
    h_proj: Tensor,
}

impl<'a> DecoderStepper<'a> {
    pub fn new(store: &'a ParamStore, dec: &'a AttentionDecoder, h: &'a Tensor) -> DecoderStepper<'a> {
        assert!(h.rows() >= 1, "decoder needs at least one encoded frame");
        let h_proj = dec.att.project_encoding_eval(store, h);
        DecoderStepper { dec, store, h, h_proj }
    }

    pub fn frames(&self) -> usize {
        self.h.rows()
    }

    pub fn init_state(&self) -> DecState {
        DecState {
            lstm: LstmState::zeros(self.dec.hidden),
            ctx: vec![0.0; self.dec.enc_dim],
            att: vec![1.0 / self.h.rows() as f64; self.h.rows()],
        }
    }

    pub fn step(&self, state: &DecState, y_prev: usize) -> StepOut {
        let dec = self.dec;
        assert!(y_prev < dec.vocab, "token id {y_prev} outside vocabulary of {}", dec.vocab);
        let emb = self.store.value(dec.embedding).row(y_prev);
        let mut x = Vec::with_capacity(dec.embed_dim + dec.enc_dim);
        x.extend_from_slice(emb);
        x.extend_from_slice(&state.ctx);
        let lstm = dec.lstm.step_eval(self.store, &x, &state.lstm);
        let (ctx, alpha) = attend_eval(self.store, &dec.att, &lstm.h, self.h, &self.h_proj, &state.att);

        let mut gen_in = Vec::with_capacity(dec.hidden + dec.enc_dim);
        gen_in.extend_from_slice(&lstm.h);
        gen_in.extend_from_slice(&ctx);
        let mut logits = Vec::new();
        dec.output.apply_eval(self.store, &gen_in, &mut logits);
        let mut log_probs = vec![0.0; dec.vocab];
        kernels::log_softmax(&logits, &mut log_probs);

        StepOut { log_probs, state: DecState { lstm, ctx, att: alpha } }
    }
}

/// Teacher-forced log-probability of a token sequence, optionally scoring
/// the end marker after the last token. Returns the total log-probability
/// and one attention row per scored step (the end-marker step included).
pub fn score_sequence(
    store: &ParamStore,
    dec: &AttentionDecoder,
    h: &Tensor,
    tokens: &[usize],
    score_eos: bool,
    eos_id: usize,
) -> (f64, AttentionTrace) {
    let stepper = DecoderStepper::new(store, dec, h);
    let mut state = stepper.init_state();
    let mut input = SOS_ID;
    let mut total = 0.0;
    let mut trace = AttentionTrace::new();
    let steps = tokens.len() + usize::from(score_eos);
    for n in 0..steps {
        let out = stepper.step(&state, input);
        let target = if n < tokens.len() { tokens[n] } else { eos_id };
        total += out.log_probs[target];
        state = out.state;
        trace.rows.push(state.att.clone());
        input = target;
    }
    (total, trace)
}
