//! Dense f64 tensors with reverse-mode automatic differentiation, sized for
//! small recurrent models trained on a CPU.

pub mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let c = t.matmul(eye, b);
        assert_eq!(t.value(c).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projection() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]));
        let v = t.leaf(Tensor::new(vec![2, 1], vec![5.0, 7.0]));
        let out = t.matmul(p, v);
        assert_eq!(t.value(out).data, vec![5.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch")]
    fn matmul_shape_mismatch_panics() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(vec![2, 3]));
        let b = t.leaf(Tensor::zeros(vec![2, 2]));
        t.matmul(a, b);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![3, 4], rand_vec(&mut rng, 12)));
        store.add("b", Tensor::new(vec![4, 2], rand_vec(&mut rng, 8)));
        gradcheck::assert_grads_match(
            &mut store,
            |t, s| {
                let ids: Vec<ParamId> = s.ids().collect();
                let a = t.param(s, ids[0]);
                let b = t.param(s, ids[1]);
                let c = t.matmul(a, b);
                let flat = t.reshape(c, vec![6]);
                t.sum(flat)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = t.softmax(x);
        for v in &t.value(y).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1000.0, 0.0]));
        let y = t.softmax(x);
        let out = &t.value(y).data;
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!(out[1] >= 0.0 && out[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = [1.0, 2.0, 3.0];
        let mut t = Tape::new();
        let xv = t.leaf(Tensor::vector(x.to_vec()));
        let y = t.softmax(xv);
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        for (out, v) in t.value(y).data.iter().zip(&x) {
            assert!((out - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_vec(&mut rng, 9);
        let shifted: Vec<f64> = x.iter().map(|v| v + 7.25).collect();
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(x));
        let b = t.leaf(Tensor::vector(shifted));
        let ya = t.softmax(a);
        let yb = t.softmax(b);
        let sum: f64 = t.value(ya).data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for (u, v) in t.value(ya).data.iter().zip(&t.value(yb).data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "softmax wants a nonempty vector")]
    fn softmax_empty_panics() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![]));
        t.softmax(x);
    }

    #[test]
    fn elementwise_basics() {
        let mut t = Tape::new();
        let zero = t.leaf(Tensor::vector(vec![0.0]));
        let th = t.tanh(zero);
        assert_eq!(t.value(th).data[0], 0.0);
        let sg = t.sigmoid(zero);
        assert_eq!(t.value(sg).data[0], 0.5);
    }

    #[test]
    #[should_panic(expected = "add shape mismatch")]
    fn elementwise_shape_mismatch_panics() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0]));
        let b = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        t.add(a, b);
    }

    #[test]
    #[should_panic(expected = "log domain error")]
    fn log_of_nonpositive_panics() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0]));
        t.log(x);
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(rand_vec(&mut rng, 10)));
        gradcheck::assert_grads_match(
            &mut store,
            |t, s| {
                let ids: Vec<ParamId> = s.ids().collect();
                let x = t.param(s, ids[0]);
                let y = t.tanh(x);
                t.sum(y)
            },
            1e-6,
        );
    }

    #[test]
    fn conv_identity_kernel() {
        let mut t = Tape::new();
        let sig = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let ker = t.leaf(Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]));
        let out = t.conv1d_same(sig, ker);
        assert_eq!(t.shape(out), &[1, 3]);
        assert_eq!(t.value(out).data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_lag_kernel() {
        let mut t = Tape::new();
        let sig = t.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let ker = t.leaf(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]));
        let out = t.conv1d_same(sig, ker);
        assert_eq!(t.value(out).data, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "kernel width must be odd")]
    fn conv_even_width_panics() {
        let mut t = Tape::new();
        let sig = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let ker = t.leaf(Tensor::new(vec![1, 2], vec![1.0, 0.0]));
        t.conv1d_same(sig, ker);
    }

    #[test]
    fn conv_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t_len, c, w) = (8usize, 2usize, 5usize);
        let sig = rand_vec(&mut rng, t_len);
        let ker = rand_vec(&mut rng, c * w);

        // independent definition: out(c, t) = sum_j ker(c, j) * sig(t + j - (w-1)/2)
        let off = (w as isize - 1) / 2;
        let mut naive = vec![0.0; c * t_len];
        for ch in 0..c {
            for ti in 0..t_len {
                let mut s = 0.0;
                for j in 0..w {
                    let src = ti as isize + j as isize - off;
                    if src >= 0 && (src as usize) < t_len {
                        s += ker[ch * w + j] * sig[src as usize];
                    }
                }
                naive[ch * t_len + ti] = s;
            }
        }

        let mut tape = Tape::new();
        let sv = tape.leaf(Tensor::vector(sig));
        let kv = tape.leaf(Tensor::new(vec![c, w], ker));
        let out = tape.conv1d_same(sv, kv);
        assert_eq!(tape.value(out).data, naive);
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.add("sig", Tensor::vector(rand_vec(&mut rng, 7)));
        store.add("ker", Tensor::new(vec![2, 3], rand_vec(&mut rng, 6)));
        gradcheck::assert_grads_match(
            &mut store,
            |t, s| {
                let ids: Vec<ParamId> = s.ids().collect();
                let sig = t.param(s, ids[0]);
                let ker = t.param(s, ids[1]);
                let out = t.conv1d_same(sig, ker);
                let flat = t.reshape(out, vec![14]);
                t.sum(flat)
            },
            1e-6,
        );
    }

    #[test]
    fn backward_sum_of_params_gives_ones() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = store.add("b", Tensor::vector(vec![4.0, 5.0]));
        let mut t = Tape::new();
        let av = t.param(&store, a);
        let bv = t.param(&store, b);
        let sa = t.sum(av);
        let sb = t.sum(bv);
        let loss = t.add(sa, sb);
        t.backward(loss, &mut store);
        assert_eq!(store.grad(a), &[1.0, 1.0, 1.0]);
        assert_eq!(store.grad(b), &[1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_matches_closed_form() {
        // loss = |W x|^2 for fixed x; dW = 2 (W x) x^T
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![3, 4], rand_vec(&mut rng, 12)));
        let x = rand_vec(&mut rng, 4);

        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let xv = t.leaf(Tensor::vector(x.clone()));
        let y = t.matvec(wv, xv);
        let loss = t.dot(y, y);
        let yval = t.value(y).data.clone();
        t.backward(loss, &mut store);

        for i in 0..3 {
            for j in 0..4 {
                let expect = 2.0 * yval[i] * x[j];
                assert!((store.grad(w)[i * 4 + j] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0]));
        for _ in 0..2 {
            let mut t = Tape::new();
            let av = t.param(&store, a);
            let loss = t.sum(av);
            t.backward(loss, &mut store);
        }
        assert_eq!(store.grad(a), &[2.0, 2.0]);
    }

    #[test]
    fn backward_deterministic_after_zeroing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::new(vec![4, 4], rand_vec(&mut rng, 16)));
        let b = store.add("b", Tensor::vector(rand_vec(&mut rng, 4)));
        let run = |store: &mut ParamStore| -> Vec<f64> {
            store.zero_grads();
            let mut t = Tape::new();
            let av = t.param(store, a);
            let bv = t.param(store, b);
            let y = t.matvec(av, bv);
            let z = t.tanh(y);
            let sm = t.softmax(z);
            let lg = t.log(sm);
            let loss = t.sum(lg);
            t.backward(loss, store);
            let mut out = store.grad(a).to_vec();
            out.extend_from_slice(store.grad(b));
            out
        };
        let g1 = run(&mut store);
        let g2 = run(&mut store);
        assert_eq!(g1, g2);
    }

    #[test]
    #[should_panic(expected = "backward wants a scalar loss")]
    fn backward_nonscalar_panics() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0]));
        let mut t = Tape::new();
        let av = t.param(&store, a);
        t.backward(av, &mut store);
    }

    #[test]
    fn embedding_row_gradient_accumulates() {
        let mut store = ParamStore::new();
        let table = store.add("emb", Tensor::new(vec![4, 2], vec![0.0; 8]));
        let mut t = Tape::new();
        let tv = t.param(&store, table);
        let e1 = t.row(tv, 3);
        let e2 = t.row(tv, 3);
        let both = t.add(e1, e2);
        let loss = t.sum(both);
        t.backward(loss, &mut store);
        assert_eq!(store.grad(table)[6..8], [2.0, 2.0]);
        assert_eq!(store.grad(table)[0..6], [0.0; 6]);
    }

    #[test]
    fn shared_param_lease_is_one_node() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0]));
        let mut t = Tape::new();
        let a = t.param(&store, w);
        let b = t.param(&store, w);
        assert_eq!(a, b);
    }
}
