//! Scalar f64 kernels shared by the tape ops and the inference-time steppers.
//!
//! Both paths must call the same kernels so their arithmetic agrees to the
//! last bit; the tape adds bookkeeping, never different math.

/// out = a(m x k) . b(k x n), overwriting out.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.fill(0.0);
    matmul_acc(a, b, out, m, k, n);
}

/// out += a(m x k) . b(k x n).
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out += a(m x k) . b(n x k)^T.
pub fn matmul_acc_bt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * n + j] += s;
        }
    }
}

/// out += a(k x m)^T . b(k x n).
pub fn matmul_acc_at(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax of a vector, overwriting out.
pub fn softmax(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Numerically stable log-softmax of a vector, overwriting out.
pub fn log_softmax(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in x {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// "Same" 1-d convolution with zero padding: out(c, t) = sum_j kernels(c, j) * signal(t + j - (w-1)/2).
pub fn conv1d_same(signal: &[f64], kernels: &[f64], channels: usize, width: usize, out: &mut [f64]) {
    let t_len = signal.len();
    debug_assert_eq!(kernels.len(), channels * width);
    debug_assert_eq!(out.len(), channels * t_len);
    let off = (width - 1) / 2;
    out.fill(0.0);
    for c in 0..channels {
        let krow = &kernels[c * width..(c + 1) * width];
        let orow = &mut out[c * t_len..(c + 1) * t_len];
        for (t, o) in orow.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, &kv) in krow.iter().enumerate() {
                let idx = t + j;
                if idx >= off && idx - off < t_len {
                    s += kv * signal[idx - off];
                }
            }
            *o = s;
        }
    }
}
