//! Location-aware attention: the energy for each source frame combines the
//! decoder state, the frame encoding, and convolutional features of the
//! previous attention distribution.

use rand::Rng;

use crate::numeric::{kernels, ParamId, ParamStore, Tape, Tensor, Var};

/// Trainable attention parameters. Projection matrices are stored with the
/// attention dimension last so activations multiply from the left as rows.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub att_dim: usize,
    pub channels: usize,
    pub width: usize,
    /// (H_dec x A)
    pub state_proj: ParamId,
    /// (enc_dim x A)
    pub enc_proj: ParamId,
    /// (C x A)
    pub loc_proj: ParamId,
    /// (C x w) location feature kernels
    pub kernels: ParamId,
    /// (A)
    pub bias: ParamId,
    /// (A) energy readout
    pub score: ParamId,
}

impl AttentionParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dec_hidden: usize,
        enc_dim: usize,
        att_dim: usize,
        channels: usize,
        width: usize,
        init_range: f64,
        rng: &mut impl Rng,
    ) -> AttentionParams {
        assert!(width % 2 == 1, "location kernel width must be odd, got {width}");
        let mut p = |name: &str, shape: Vec<usize>| {
            store.add_uniform(format!("{prefix}.{name}"), shape, init_range, rng)
        };
        AttentionParams {
            att_dim,
            channels,
            width,
            state_proj: p("state_proj", vec![dec_hidden, att_dim]),
            enc_proj: p("enc_proj", vec![enc_dim, att_dim]),
            loc_proj: p("loc_proj", vec![channels, att_dim]),
            kernels: p("kernels", vec![channels, width]),
            bias: p("bias", vec![att_dim]),
            score: p("score", vec![att_dim]),
        }
    }

    /// Per-utterance projection of the encoder output, (T' x A).
    pub fn project_encoding(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let enc_proj = tape.param(store, self.enc_proj);
        tape.matmul(h, enc_proj)
    }

    pub fn project_encoding_eval(&self, store: &ParamStore, h: &Tensor) -> Tensor {
        let (t_len, enc_dim) = (h.rows(), h.cols());
        let mut out = Tensor::zeros(vec![t_len, self.att_dim]);
        kernels::matmul(
            &h.data,
            &store.value(self.enc_proj).data,
            &mut out.data,
            t_len,
            enc_dim,
            self.att_dim,
        );
        out
    }
}

/// One attention evaluation on the tape: previous attention focuses the
/// location features, energies are read out per frame, and the context is
/// the attention-weighted sum of encoder frames.
pub fn attend(
    tape: &mut Tape,
    store: &ParamStore,
    att: &AttentionParams,
    s_prev: Var,
    h: Var,
    h_proj: Var,
    a_prev: Var,
) -> (Var, Var) {
    let t_len = tape.shape(h)[0];
    assert_eq!(
        tape.shape(a_prev),
        &[t_len],
        "previous attention length {:?} does not match encoding length {t_len}",
        tape.shape(a_prev)
    );
    let kernels_var = tape.param(store, att.kernels);
    let loc_proj = tape.param(store, att.loc_proj);
    let state_proj = tape.param(store, att.state_proj);
    let bias = tape.param(store, att.bias);
    let score = tape.param(store, att.score);

    let f = tape.conv1d_same(a_prev, kernels_var);
    let ft = tape.transpose(f);
    let loc = tape.matmul(ft, loc_proj);
    let pre = tape.add(h_proj, loc);
    let s_term = tape.vecmat(s_prev, state_proj);
    let s_bias = tape.add(s_term, bias);
    let shifted = tape.add_row(pre, s_bias);
    let act = tape.tanh(shifted);
    let energy = tape.matvec(act, score);
    let alpha = tape.softmax(energy);
    let context = tape.vecmat(alpha, h);
    (context, alpha)
}

/// Eval-path attention, arithmetic-identical to [`attend`].
pub fn attend_eval(
    store: &ParamStore,
    att: &AttentionParams,
    s_prev: &[f64],
    h: &Tensor,
    h_proj: &Tensor,
    a_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let t_len = h.rows();
    assert_eq!(a_prev.len(), t_len, "previous attention length mismatch");
    let (c, w, a_dim) = (att.channels, att.width, att.att_dim);

    let mut f = vec![0.0; c * t_len];
    kernels::conv1d_same(a_prev, &store.value(att.kernels).data, c, w, &mut f);
    let mut ft = vec![0.0; t_len * c];
    for ci in 0..c {
        for t in 0..t_len {
            ft[t * c + ci] = f[ci * t_len + t];
        }
    }
    let mut pre = vec![0.0; t_len * a_dim];
    kernels::matmul(&ft, &store.value(att.loc_proj).data, &mut pre, t_len, c, a_dim);
    for (p, hp) in pre.iter_mut().zip(&h_proj.data) {
        *p += hp;
    }

    let mut s_bias = vec![0.0; a_dim];
    kernels::matmul(s_prev, &store.value(att.state_proj).data, &mut s_bias, 1, s_prev.len(), a_dim);
    for (sb, b) in s_bias.iter_mut().zip(&store.value(att.bias).data) {
        *sb += b;
    }

    let mut act = pre;
    for t in 0..t_len {
        for a in 0..a_dim {
            act[t * a_dim + a] = (act[t * a_dim + a] + s_bias[a]).tanh();
        }
    }

    let mut energy = vec![0.0; t_len];
    kernels::matmul(&act, &store.value(att.score).data, &mut energy, t_len, a_dim, 1);
    let mut alpha = vec![0.0; t_len];
    kernels::softmax(&energy, &mut alpha);
    let mut context = vec![0.0; h.cols()];
    kernels::matmul(&alpha, &h.data, &mut context, 1, t_len, h.cols());
    (context, alpha)
}
