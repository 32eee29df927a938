use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use a2w_core::beam::{beam_search, FusionConfig};
use a2w_core::corpus::EOS_ID;
use a2w_core::layers::InitConfig;
use a2w_core::metrics::edit_distance;
use a2w_core::model::{sequence_nll, AttentionDecoder, JointModel, ModelConfig};
use a2w_core::numeric::{kernels, ParamStore, Tape, Tensor};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], rand_vec(rng, r * c))
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_vec(&mut rng, 64 * 64);
    let b = rand_vec(&mut rng, 64 * 64);
    let mut out = vec![0.0; 64 * 64];
    c.bench_function("matmul_64x64", |bench| {
        bench.iter(|| kernels::matmul(&a, &b, &mut out, 64, 64, 64));
    });
}

fn desk_model() -> JointModel {
    JointModel::new(ModelConfig {
        feat_dim: 16,
        word_vocab: 150,
        char_vocab: 16,
        dropout: 0.0,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn bench_joint_loss_backward(c: &mut Criterion) {
    let mut model = desk_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let feats = rand_matrix(&mut rng, 36, 16);
    let words = vec![20usize, 31, 42, EOS_ID];
    let chars = vec![5usize, 6, 7, 2, 8, 9, 10, EOS_ID];
    c.bench_function("joint_loss_forward_backward_t36", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let loss = model.joint_loss(&mut tape, &feats, &words, &chars, 0.0, 0.1, true, &mut r);
            model.store.zero_grads();
            tape.backward(loss.joint, &mut model.store);
            model.store.grad_norm()
        });
    });
}

fn bench_beam_search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let dec = AttentionDecoder::new(
        &mut store,
        "dec",
        150,
        16,
        24,
        32,
        24,
        10,
        5,
        InitConfig::default(),
        &mut rng,
    );
    let h = rand_matrix(&mut rng, 6, 32);
    let cfg = FusionConfig::default();
    c.bench_function("beam5_search_v150_t6", |bench| {
        bench.iter(|| beam_search(&store, &dec, &h, None, &cfg));
    });
}

fn bench_teacher_forced_nll(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let dec = AttentionDecoder::new(
        &mut store,
        "dec",
        150,
        16,
        24,
        32,
        24,
        10,
        5,
        InitConfig::default(),
        &mut rng,
    );
    let h = rand_matrix(&mut rng, 6, 32);
    let targets = vec![10usize, 20, 30, EOS_ID];
    c.bench_function("sequence_nll_4steps", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let hv = tape.leaf(h.clone());
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (loss, _) = sequence_nll(&mut tape, &store, &dec, hv, &targets, 0.0, 0.1, 0.0, &mut r);
            tape.value(loss).data[0]
        });
    });
}

fn bench_edit_distance(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<u32> = (0..40).map(|_| rng.gen_range(0..50)).collect();
    let b: Vec<u32> = (0..40).map(|_| rng.gen_range(0..50)).collect();
    c.bench_function("edit_distance_40x40", |bench| {
        bench.iter(|| edit_distance(&a, &b));
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_joint_loss_backward,
    bench_beam_search,
    bench_teacher_forced_nll,
    bench_edit_distance
);
criterion_main!(benches);
