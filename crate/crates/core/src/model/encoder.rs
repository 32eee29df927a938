//! Stacked bidirectional encoder with a character-branch tap.
//!
//! Designated layers halve the frame rate by keeping even-indexed frames.
//! The character tap reads a layer's output before that layer's own
//! subsampling, so the character branch runs at twice the word branch's
//! frame rate.

use rand::Rng;

use crate::layers::{dropout, BlstmLayer, InitConfig, LstmState};
use crate::numeric::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub layers: Vec<BlstmLayer>,
    /// 1-indexed layer whose pre-subsample output feeds the character branch.
    pub char_tap_layer: usize,
}

impl EncoderStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        feat_dim: usize,
        n_layers: usize,
        hidden: usize,
        subsample_layers: &[usize],
        char_tap_layer: usize,
        init: InitConfig,
        rng: &mut impl Rng,
    ) -> EncoderStack {
        assert!(n_layers >= 1 && char_tap_layer >= 1 && char_tap_layer <= n_layers);
        let layers = (1..=n_layers)
            .map(|i| {
                let input_dim = if i == 1 { feat_dim } else { 2 * hidden };
                BlstmLayer::new(
                    store,
                    &format!("enc.l{i}"),
                    input_dim,
                    hidden,
                    subsample_layers.contains(&i),
                    init,
                    rng,
                )
            })
            .collect();
        EncoderStack { layers, char_tap_layer }
    }

    /// Frame count of the word branch for an input of length `t`.
    pub fn word_len(&self, t: usize) -> usize {
        self.layers.iter().fold(t.max(1), |len, l| l.subsampled_len(len))
    }

    /// Frame count of the character branch for an input of length `t`.
    pub fn char_len(&self, t: usize) -> usize {
        self.layers[..self.char_tap_layer - 1]
            .iter()
            .fold(t.max(1), |len, l| l.subsampled_len(len))
    }

    /// Tape forward; returns (word encoding, char encoding).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        feats: Var,
        drop_ratio: f64,
        rng: &mut impl Rng,
    ) -> (Var, Var) {
        let mut x = feats;
        let mut char_tap = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let full = layer.forward_full(tape, store, x);
            let full = dropout(tape, full, drop_ratio, rng);
            if idx + 1 == self.char_tap_layer {
                char_tap = Some(full);
            }
            x = if layer.subsample { decimate_rows(tape, full) } else { full };
        }
        (x, char_tap.expect("tap layer within stack"))
    }

    /// Eval forward on plain values (no dropout).
    pub fn forward_eval(&self, store: &ParamStore, feats: &Tensor) -> (Tensor, Tensor) {
        let mut x = feats.clone();
        let mut char_tap = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let full = layer.forward_full_eval(store, &x);
            if idx + 1 == self.char_tap_layer {
                char_tap = Some(full.clone());
            }
            x = if layer.subsample { decimate_rows_eval(&full) } else { full };
        }
        (x, char_tap.expect("tap layer within stack"))
    }
}

/// Keep even-indexed rows of a matrix.
pub fn decimate_rows(tape: &mut Tape, m: Var) -> Var {
    let t = tape.shape(m)[0];
    let rows: Vec<Var> = (0..t).step_by(2).map(|i| tape.row(m, i)).collect();
    tape.stack_rows(&rows)
}

pub fn decimate_rows_eval(m: &Tensor) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..m.rows()).step_by(2).map(|i| m.row(i).to_vec()).collect();
    Tensor::from_rows(&rows)
}

impl BlstmLayer {
    /// Forward without this layer's subsampling (tape path).
    pub fn forward_full(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Var {
        let t_len = tape.shape(xs)[0];
        assert!(t_len >= 1, "blstm on empty sequence");
        let frames: Vec<Var> = (0..t_len).map(|t| tape.row(xs, t)).collect();

        let mut fwd_h = Vec::with_capacity(t_len);
        let mut st = self.fwd.zero_state(tape);
        for &x in &frames {
            st = self.fwd.step(tape, store, x, st);
            fwd_h.push(st.h);
        }
        let mut bwd_h = vec![None; t_len];
        let mut st = self.bwd.zero_state(tape);
        for t in (0..t_len).rev() {
            st = self.bwd.step(tape, store, frames[t], st);
            bwd_h[t] = Some(st.h);
        }
        let rows: Vec<Var> =
            (0..t_len).map(|t| tape.concat(&[fwd_h[t], bwd_h[t].unwrap()])).collect();
        tape.stack_rows(&rows)
    }

    /// Forward without this layer's subsampling (eval path).
    pub fn forward_full_eval(&self, store: &ParamStore, xs: &Tensor) -> Tensor {
        let t_len = xs.rows();
        assert!(t_len >= 1, "blstm on empty sequence");
        let h = self.fwd.hidden;

        let mut fwd_h = Vec::with_capacity(t_len);
        let mut st = LstmState::zeros(h);
        for t in 0..t_len {
            st = self.fwd.step_eval(store, xs.row(t), &st);
            fwd_h.push(st.h.clone());
        }
        let mut bwd_h = vec![Vec::new(); t_len];
        let mut st = LstmState::zeros(h);
        for t in (0..t_len).rev() {
            st = self.bwd.step_eval(store, xs.row(t), &st);
            bwd_h[t] = st.h.clone();
        }
        let rows: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let mut r = fwd_h[t].clone();
                r.extend_from_slice(&bwd_h[t]);
                r
            })
            .collect();
        Tensor::from_rows(&rows)
    }
}
