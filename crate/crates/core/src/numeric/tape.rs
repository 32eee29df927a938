//! Reverse-mode automatic differentiation over a linear op tape.
//!
//! A forward pass appends nodes in topological order (inputs always precede
//! their consumers); `backward` walks the tape once in exact reverse
//! construction order, so gradients are deterministic for a fixed graph.
//! Parameters are leased from a [`ParamStore`] and their gradients are
//! accumulated back into the store at the end of the backward pass.

use std::collections::HashMap;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    /// a(m x k) . b(k x n)
    MatMul { a: Var, b: Var },
    /// m(r x c) . v(c) -> (r)
    MatVec { m: Var, v: Var },
    /// v(r) . m(r x c) -> (c)
    VecMat { v: Var, m: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// Broadcast-add a row vector to every row of a matrix.
    AddRow { m: Var, row: Var },
    Scale { x: Var, c: f64 },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Log { x: Var },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    Sum { x: Var },
    Dot { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    /// Select one row of a matrix (also the embedding lookup).
    Row { m: Var, index: usize },
    StackRows { rows: Vec<Var> },
    /// signal(t), kernels(c x w) -> (c x t), zero-padded "same" convolution.
    Conv1dSame { signal: Var, kernels: Var },
    Transpose { m: Var },
    Reshape { x: Var },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leased: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), leased: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    /// Lease a parameter onto the tape. Repeated leases of the same id
    /// return the same node, so shared parameters (tied embeddings) are a
    /// single buffer with one gradient accumulator.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.leased.get(&id) {
            return v;
        }
        let v = self.push(Op::Leaf { param: Some(id) }, store.value(id).clone());
        self.leased.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch: {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        kernels::matmul(&self.value(a).data, &self.value(b).data, &mut out.data, m, k, n);
        self.push(Op::MatMul { a, b }, out)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let (sm, sv) = (self.shape(m).to_vec(), self.shape(v).to_vec());
        assert!(
            sm.len() == 2 && sv.len() == 1 && sm[1] == sv[0],
            "matvec shape mismatch: {sm:?} x {sv:?}"
        );
        let (r, c) = (sm[0], sm[1]);
        let mut out = Tensor::zeros(vec![r]);
        kernels::matmul(&self.value(m).data, &self.value(v).data, &mut out.data, r, c, 1);
        self.push(Op::MatVec { m, v }, out)
    }

    pub fn vecmat(&mut self, v: Var, m: Var) -> Var {
        let (sv, sm) = (self.shape(v).to_vec(), self.shape(m).to_vec());
        assert!(
            sv.len() == 1 && sm.len() == 2 && sv[0] == sm[0],
            "vecmat shape mismatch: {sv:?} x {sm:?}"
        );
        let (r, c) = (sm[0], sm[1]);
        let mut out = Tensor::zeros(vec![c]);
        kernels::matmul(&self.value(v).data, &self.value(m).data, &mut out.data, 1, r, c);
        self.push(Op::VecMat { v, m }, out)
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{name} shape mismatch: {sa:?} vs {sb:?}");
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary_elementwise(a, b, "add", |x, y| x + y);
        self.push(Op::Add { a, b }, out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary_elementwise(a, b, "sub", |x, y| x - y);
        self.push(Op::Sub { a, b }, out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary_elementwise(a, b, "mul", |x, y| x * y);
        self.push(Op::Mul { a, b }, out)
    }

    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        let (sm, sr) = (self.shape(m).to_vec(), self.shape(row).to_vec());
        assert!(
            sm.len() == 2 && sr.len() == 1 && sm[1] == sr[0],
            "add_row shape mismatch: {sm:?} + {sr:?}"
        );
        let mut out = self.value(m).clone();
        let rowv = &self.value(row).data;
        for r in 0..sm[0] {
            for (o, &rv) in out.data[r * sm[1]..(r + 1) * sm[1]].iter_mut().zip(rowv) {
                *o += rv;
            }
        }
        self.push(Op::AddRow { m, row }, out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        for o in &mut out.data {
            *o *= c;
        }
        self.push(Op::Scale { x, c }, out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for o in &mut out.data {
            *o = o.tanh();
        }
        self.push(Op::Tanh { x }, out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for o in &mut out.data {
            *o = kernels::sigmoid(*o);
        }
        self.push(Op::Sigmoid { x }, out)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for o in &mut out.data {
            assert!(*o > 0.0, "log domain error: input {o} is not positive");
            *o = o.ln();
        }
        self.push(Op::Log { x }, out)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 1 && s[0] >= 1, "softmax wants a nonempty vector, got {s:?}");
        let mut out = Tensor::zeros(s);
        kernels::softmax(&self.value(x).data, &mut out.data);
        self.push(Op::Softmax { x }, out)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() == 1 && s[0] >= 1, "log_softmax wants a nonempty vector, got {s:?}");
        let mut out = Tensor::zeros(s);
        kernels::log_softmax(&self.value(x).data, &mut out.data);
        self.push(Op::LogSoftmax { x }, out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 1 && sa == sb, "dot shape mismatch: {sa:?} vs {sb:?}");
        let s = kernels::dot(&self.value(a).data, &self.value(b).data);
        self.push(Op::Dot { a, b }, Tensor::scalar(s))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        for &p in parts {
            assert_eq!(self.shape(p).len(), 1, "concat wants vectors, got {:?}", self.shape(p));
            data.extend_from_slice(&self.value(p).data);
        }
        self.push(Op::Concat { parts: parts.to_vec() }, Tensor::vector(data))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x);
        assert!(
            s.len() == 1 && start + len <= s[0],
            "slice [{start}, {start}+{len}) out of bounds for {s:?}"
        );
        let data = self.value(x).data[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, Tensor::vector(data))
    }

    pub fn row(&mut self, m: Var, index: usize) -> Var {
        let s = self.shape(m);
        assert!(s.len() == 2 && index < s[0], "row {index} out of bounds for {s:?}");
        let data = self.value(m).row(index).to_vec();
        self.push(Op::Row { m, index }, Tensor::vector(data))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let cols = self.shape(rows[0]).to_vec();
        assert_eq!(cols.len(), 1, "stack_rows wants vectors");
        let mut data = Vec::with_capacity(rows.len() * cols[0]);
        for &r in rows {
            assert_eq!(self.shape(r), &cols[..], "stack_rows ragged row");
            data.extend_from_slice(&self.value(r).data);
        }
        self.push(
            Op::StackRows { rows: rows.to_vec() },
            Tensor::new(vec![rows.len(), cols[0]], data),
        )
    }

    pub fn conv1d_same(&mut self, signal: Var, kernels_var: Var) -> Var {
        let (ss, sk) = (self.shape(signal).to_vec(), self.shape(kernels_var).to_vec());
        assert!(
            ss.len() == 1 && sk.len() == 2,
            "conv1d wants signal vector and kernel matrix, got {ss:?}, {sk:?}"
        );
        assert!(sk[1] % 2 == 1, "conv1d kernel width must be odd, got {}", sk[1]);
        let (c, w, t) = (sk[0], sk[1], ss[0]);
        let mut out = Tensor::zeros(vec![c, t]);
        kernels::conv1d_same(
            &self.value(signal).data,
            &self.value(kernels_var).data,
            c,
            w,
            &mut out.data,
        );
        self.push(Op::Conv1dSame { signal, kernels: kernels_var }, out)
    }

    pub fn transpose(&mut self, m: Var) -> Var {
        let s = self.shape(m).to_vec();
        assert_eq!(s.len(), 2, "transpose wants a matrix, got {s:?}");
        let (r, c) = (s[0], s[1]);
        let src = &self.value(m).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(Op::Transpose { m }, Tensor::new(vec![c, r], data))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.value(x).len(),
            "reshape to {shape:?} changes element count from {}",
            self.value(x).len()
        );
        let data = self.value(x).data.clone();
        self.push(Op::Reshape { x }, Tensor::new(shape, data))
    }

    /// Backward pass from a scalar loss. Gradients of leased parameters are
    /// added into the store, so calling twice without `zero_grads` doubles
    /// them.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) {
        assert!(
            self.value(loss).is_scalar(),
            "backward wants a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| -> &[f64] { &nodes[v.0].value.data };
            let shp = |v: Var| -> &[usize] { &nodes[v.0].value.shape };
            match &nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        for (acc, gv) in store.grad_mut(*pid).iter_mut().zip(&g) {
                            *acc += gv;
                        }
                    }
                }
                &Op::MatMul { a, b } => {
                    let (m, k) = (shp(a)[0], shp(a)[1]);
                    let n = shp(b)[1];
                    // dA += dC . B^T ; dB += A^T . dC
                    with_buf(&mut grads, a.0, |ga| kernels::matmul_acc_bt(&g, val(b), ga, m, n, k));
                    with_buf(&mut grads, b.0, |gb| kernels::matmul_acc_at(val(a), &g, gb, k, m, n));
                }
                &Op::MatVec { m, v } => {
                    let (r, c) = (shp(m)[0], shp(m)[1]);
                    // dM += g . v^T ; dv += M^T . g
                    with_buf(&mut grads, m.0, |gm| kernels::matmul_acc(&g, val(v), gm, r, 1, c));
                    with_buf(&mut grads, v.0, |gv| kernels::matmul_acc_at(val(m), &g, gv, c, r, 1));
                }
                &Op::VecMat { v, m } => {
                    let (r, c) = (shp(m)[0], shp(m)[1]);
                    // dv += M . g ; dM += v . g^T
                    with_buf(&mut grads, v.0, |gv| kernels::matmul_acc(val(m), &g, gv, r, c, 1));
                    with_buf(&mut grads, m.0, |gm| kernels::matmul_acc(val(v), &g, gm, r, 1, c));
                }
                &Op::Add { a, b } => {
                    axpy(&mut grads[a.0], 1.0, &g);
                    axpy(&mut grads[b.0], 1.0, &g);
                }
                &Op::Sub { a, b } => {
                    axpy(&mut grads[a.0], 1.0, &g);
                    axpy(&mut grads[b.0], -1.0, &g);
                }
                &Op::Mul { a, b } => {
                    with_buf(&mut grads, a.0, |ga| {
                        for (gd, (&gv, &bv)) in ga.iter_mut().zip(g.iter().zip(val(b))) {
                            *gd += gv * bv;
                        }
                    });
                    with_buf(&mut grads, b.0, |gb| {
                        for (gd, (&gv, &av)) in gb.iter_mut().zip(g.iter().zip(val(a))) {
                            *gd += gv * av;
                        }
                    });
                }
                &Op::AddRow { m, row } => {
                    let cols = shp(row)[0];
                    axpy(&mut grads[m.0], 1.0, &g);
                    let grow = &mut grads[row.0];
                    for (idx, &gv) in g.iter().enumerate() {
                        grow[idx % cols] += gv;
                    }
                }
                &Op::Scale { x, c } => axpy(&mut grads[x.0], c, &g),
                &Op::Tanh { x } => {
                    let y = &nodes[i].value.data;
                    for (gx, (&gv, &yv)) in grads[x.0].iter_mut().zip(g.iter().zip(y)) {
                        *gx += gv * (1.0 - yv * yv);
                    }
                }
                &Op::Sigmoid { x } => {
                    let y = &nodes[i].value.data;
                    for (gx, (&gv, &yv)) in grads[x.0].iter_mut().zip(g.iter().zip(y)) {
                        *gx += gv * yv * (1.0 - yv);
                    }
                }
                &Op::Log { x } => {
                    for (gx, (&gv, &v)) in grads[x.0].iter_mut().zip(g.iter().zip(val(x))) {
                        *gx += gv / v;
                    }
                }
                &Op::Softmax { x } => {
                    let y = &nodes[i].value.data;
                    let inner = kernels::dot(&g, y);
                    for (gx, (&gv, &yv)) in grads[x.0].iter_mut().zip(g.iter().zip(y)) {
                        *gx += yv * (gv - inner);
                    }
                }
                &Op::LogSoftmax { x } => {
                    let y = &nodes[i].value.data;
                    let gsum: f64 = g.iter().sum();
                    for (gx, (&gv, &yv)) in grads[x.0].iter_mut().zip(g.iter().zip(y)) {
                        *gx += gv - yv.exp() * gsum;
                    }
                }
                &Op::Sum { x } => {
                    let gv = g[0];
                    for gx in grads[x.0].iter_mut() {
                        *gx += gv;
                    }
                }
                &Op::Dot { a, b } => {
                    let gv = g[0];
                    with_buf(&mut grads, a.0, |ga| {
                        for (gd, &bv) in ga.iter_mut().zip(val(b)) {
                            *gd += gv * bv;
                        }
                    });
                    with_buf(&mut grads, b.0, |gb| {
                        for (gd, &av) in gb.iter_mut().zip(val(a)) {
                            *gd += gv * av;
                        }
                    });
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.len();
                        axpy(&mut grads[p.0], 1.0, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                &Op::Slice { x, start } => {
                    axpy(&mut grads[x.0][start..start + g.len()], 1.0, &g);
                }
                &Op::Row { m, index } => {
                    let cols = g.len();
                    axpy(&mut grads[m.0][index * cols..(index + 1) * cols], 1.0, &g);
                }
                Op::StackRows { rows } => {
                    let cols = nodes[rows[0].0].value.len();
                    for (r, row) in rows.iter().enumerate() {
                        axpy(&mut grads[row.0], 1.0, &g[r * cols..(r + 1) * cols]);
                    }
                }
                &Op::Conv1dSame { signal, kernels: kv } => {
                    let t = shp(signal)[0];
                    let (c, w) = (shp(kv)[0], shp(kv)[1]);
                    let off = (w - 1) / 2;
                    let sig = val(signal);
                    let ker = val(kv);
                    let mut gsig = vec![0.0; t];
                    let mut gker = vec![0.0; c * w];
                    for ch in 0..c {
                        for ti in 0..t {
                            let gv = g[ch * t + ti];
                            for j in 0..w {
                                let idx = ti + j;
                                if idx >= off && idx - off < t {
                                    gsig[idx - off] += gv * ker[ch * w + j];
                                    gker[ch * w + j] += gv * sig[idx - off];
                                }
                            }
                        }
                    }
                    axpy(&mut grads[signal.0], 1.0, &gsig);
                    axpy(&mut grads[kv.0], 1.0, &gker);
                }
                &Op::Transpose { m } => {
                    let (r, c) = (shp(m)[0], shp(m)[1]);
                    let gm = &mut grads[m.0];
                    for ci in 0..c {
                        for ri in 0..r {
                            gm[ri * c + ci] += g[ci * r + ri];
                        }
                    }
                }
                &Op::Reshape { x } => axpy(&mut grads[x.0], 1.0, &g),
            }
        }
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Run an accumulation against one gradient buffer, detached from the pool so
/// the closure may also read other buffers' values via the tape. Handles the
/// case where both inputs of an op alias the same node.
fn with_buf(grads: &mut [Vec<f64>], idx: usize, f: impl FnOnce(&mut [f64])) {
    let mut buf = std::mem::take(&mut grads[idx]);
    f(&mut buf);
    grads[idx] = buf;
}
