//! Recurrent building blocks: LSTM cell, bidirectional layer with optional
//! 2x subsampling, linear projection, embedding lookup, dropout.
//!
//! Each block owns [`ParamId`]s only; values live in the [`ParamStore`].
//! Every block has two forward paths that share the same scalar kernels:
//! a tape path used for training and an eval path used during decoding.

use rand::Rng;

use crate::numeric::{kernels, ParamId, ParamStore, Tape, Tensor, Var};

/// Initialization used throughout: uniform weights plus a constant
/// forget-gate bias that keeps early cell states alive.
#[derive(Clone, Copy, Debug)]
pub struct InitConfig {
    pub range: f64,
    pub forget_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { range: 0.1, forget_bias: 1.0 }
    }
}

/// Single LSTM cell. Gate order in the fused buffers is
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    /// (4H x input_dim)
    pub w_x: ParamId,
    /// (4H x H)
    pub w_h: ParamId,
    /// (4H)
    pub b: ParamId,
}

/// LSTM hidden and cell activations as plain values.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> LstmState {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Tape-resident LSTM state for training passes.
#[derive(Clone, Copy, Debug)]
pub struct LstmVarState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init: InitConfig,
        rng: &mut impl Rng,
    ) -> LstmCell {
        let w_x = store.add_uniform(format!("{prefix}.w_x"), vec![4 * hidden, input_dim], init.range, rng);
        let w_h = store.add_uniform(format!("{prefix}.w_h"), vec![4 * hidden, hidden], init.range, rng);
        let b = store.add_uniform(format!("{prefix}.b"), vec![4 * hidden], init.range, rng);
        store.value_mut(b).data[hidden..2 * hidden].fill(init.forget_bias);
        LstmCell { input_dim, hidden, w_x, w_h, b }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> LstmVarState {
        let h = tape.leaf(Tensor::zeros(vec![self.hidden]));
        let c = tape.leaf(Tensor::zeros(vec![self.hidden]));
        LstmVarState { h, c }
    }

    /// One step on the tape.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: LstmVarState,
    ) -> LstmVarState {
        assert_eq!(
            tape.shape(x),
            &[self.input_dim],
            "lstm input dim mismatch: cell wants {}, got {:?}",
            self.input_dim,
            tape.shape(x)
        );
        let h = self.hidden;
        let w_x = tape.param(store, self.w_x);
        let w_h = tape.param(store, self.w_h);
        let b = tape.param(store, self.b);

        let gx = tape.matvec(w_x, x);
        let gh = tape.matvec(w_h, state.h);
        let pre0 = tape.add(gx, gh);
        let pre = tape.add(pre0, b);

        let i_pre = tape.slice(pre, 0, h);
        let f_pre = tape.slice(pre, h, h);
        let g_pre = tape.slice(pre, 2 * h, h);
        let o_pre = tape.slice(pre, 3 * h, h);

        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);

        let keep = tape.mul(f, state.c);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        let c_act = tape.tanh(c);
        let h_out = tape.mul(o, c_act);
        LstmVarState { h: h_out, c }
    }

    /// One step on plain values, arithmetic-identical to the tape path.
    pub fn step_eval(&self, store: &ParamStore, x: &[f64], state: &LstmState) -> LstmState {
        assert_eq!(x.len(), self.input_dim, "lstm input dim mismatch");
        let h = self.hidden;
        let mut pre = vec![0.0; 4 * h];
        kernels::matmul(&store.value(self.w_x).data, x, &mut pre, 4 * h, self.input_dim, 1);
        kernels::matmul_acc(&store.value(self.w_h).data, &state.h, &mut pre, 4 * h, h, 1);
        for (p, bv) in pre.iter_mut().zip(&store.value(self.b).data) {
            *p += bv;
        }
        let mut out = LstmState::zeros(h);
        for k in 0..h {
            let i = kernels::sigmoid(pre[k]);
            let f = kernels::sigmoid(pre[h + k]);
            let g = pre[2 * h + k].tanh();
            let o = kernels::sigmoid(pre[3 * h + k]);
            let c = f * state.c[k] + i * g;
            out.c[k] = c;
            out.h[k] = o * c.tanh();
        }
        out
    }
}

/// Bidirectional LSTM layer; output feature dim is 2H. With `subsample`
/// set, even-indexed output frames are kept, halving the length (ceil).
#[derive(Clone, Debug)]
pub struct BlstmLayer {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub subsample: bool,
}

impl BlstmLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        subsample: bool,
        init: InitConfig,
        rng: &mut impl Rng,
    ) -> BlstmLayer {
        let fwd = LstmCell::new(store, &format!("{prefix}.fwd"), input_dim, hidden, init, rng);
        let bwd = LstmCell::new(store, &format!("{prefix}.bwd"), input_dim, hidden, init, rng);
        BlstmLayer { fwd, bwd, subsample }
    }

    pub fn subsampled_len(&self, t: usize) -> usize {
        if self.subsample {
            t.div_ceil(2)
        } else {
            t
        }
    }

    /// Forward over a (T x d) matrix on the tape, producing (T' x 2H).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, xs: Var) -> Var {
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

        let out_rows: Vec<Var> = (0..t_len)
            .step_by(if self.subsample { 2 } else { 1 })
            .map(|t| tape.concat(&[fwd_h[t], bwd_h[t].unwrap()]))
            .collect();
        tape.stack_rows(&out_rows)
    }

    /// Eval-path forward on plain values.
    pub fn forward_eval(&self, store: &ParamStore, xs: &Tensor) -> Tensor {
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
            .step_by(if self.subsample { 2 } else { 1 })
            .map(|t| {
                let mut r = fwd_h[t].clone();
                r.extend_from_slice(&bwd_h[t]);
                r
            })
            .collect();
        Tensor::from_rows(&rows)
    }
}

/// Affine projection y = W x + b.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// (out x in)
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        init: InitConfig,
        rng: &mut impl Rng,
    ) -> Linear {
        let w = store.add_uniform(format!("{prefix}.w"), vec![out_dim, in_dim], init.range, rng);
        let b = store.add_uniform(format!("{prefix}.b"), vec![out_dim], init.range, rng);
        Linear { in_dim, out_dim, w, b }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let wx = tape.matvec(w, x);
        tape.add(wx, b)
    }

    pub fn apply_eval(&self, store: &ParamStore, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.out_dim, 0.0);
        kernels::matmul(&store.value(self.w).data, x, out, self.out_dim, self.in_dim, 1);
        for (o, bv) in out.iter_mut().zip(&store.value(self.b).data) {
            *o += bv;
        }
    }
}

/// Row lookup in an embedding table held by the store.
pub fn embed(tape: &mut Tape, store: &ParamStore, table: ParamId, id: usize) -> Var {
    let rows = store.value(table).shape[0];
    assert!(id < rows, "embedding id {id} out of range (table has {rows} rows)");
    let t = tape.param(store, table);
    tape.row(t, id)
}

/// Train-time inverted dropout: zero with probability `ratio`, scale kept
/// units by 1/(1-ratio) so the expectation matches the input.
pub fn dropout(tape: &mut Tape, x: Var, ratio: f64, rng: &mut impl Rng) -> Var {
    assert!((0.0..1.0).contains(&ratio), "dropout ratio {ratio} outside [0, 1)");
    if ratio == 0.0 {
        return x;
    }
    let scale = 1.0 / (1.0 - ratio);
    let n = tape.value(x).len();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < ratio { 0.0 } else { scale })
        .collect();
    let shape = tape.shape(x).to_vec();
    let m = tape.leaf(Tensor::new(shape, mask));
    tape.mul(x, m)
}
