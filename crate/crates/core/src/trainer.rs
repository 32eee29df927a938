//! Optimization loop for the joint model: length-sorted batches, gradient
//! clipping, Adam switching to SGD once validation stalls, and early
//! stopping with the best-validation parameters retained.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CharInventory, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::numeric::{ParamStore, Tape};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub sampling_prob: f64,
    pub smoothing: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam_lr: 1e-3,
            sgd_lr: 1e-4,
            clip_norm: 5.0,
            batch_size: 16,
            sampling_prob: 0.2,
            smoothing: 0.1,
            max_epochs: 20,
            patience: 3,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adam_lr <= 0.0 || self.sgd_lr <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::config("learning rates and clip norm must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

/// Scale all gradients so the global L2 norm is at most `clip_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(store: &mut ParamStore, clip_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            for g in store.grad_mut(id) {
                *g *= scale;
            }
        }
    }
    norm
}

/// Stable ascending sort by frame count.
pub fn sort_by_length(utterances: &[Utterance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.sort_by_key(|&i| utterances[i].frames());
    order
}

/// Canonical Adam with bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        let m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        let v = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pi, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grads = store.grad(id).to_vec();
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            let values = &mut store.value_mut(id).data;
            for i in 0..grads.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Plain SGD step.
pub fn sgd_step(store: &mut ParamStore, lr: f64) {
    for id in store.ids().collect::<Vec<_>>() {
        let grads = store.grad(id).to_vec();
        for (w, g) in store.value_mut(id).data.iter_mut().zip(grads) {
            *w -= lr * g;
        }
    }
}

enum Phase {
    Adam(Box<Adam>),
    Sgd { lr: f64 },
}

/// One CSV row of the metrics log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub split: String,
    pub loss_word: f64,
    pub loss_char: f64,
    pub loss_joint: f64,
    pub wall_seconds: f64,
}

pub fn stats_csv_header() -> &'static str {
    "epoch,split,loss_word,loss_char,loss_joint,wall_seconds"
}

pub fn stats_csv_row(s: &EpochStats) -> String {
    format!(
        "{},{},{},{},{},{:.3}",
        s.epoch, s.split, s.loss_word, s.loss_char, s.loss_joint, s.wall_seconds
    )
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochStats>,
    pub best_valid_joint: f64,
    pub epochs_run: usize,
    pub switched_to_sgd_at: Option<usize>,
}

struct Encoded {
    words: Vec<usize>,
    chars: Vec<usize>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Train the model in place. On return the parameters are those of the best
/// validation epoch.
pub fn train(
    model: &mut JointModel,
    train_set: &[Utterance],
    valid_set: &[Utterance],
    vocab: &Vocabulary,
    chars: &CharInventory,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("empty training set"));
    }
    let encode = |set: &[Utterance]| -> Result<Vec<Encoded>> {
        set.iter()
            .map(|u| {
                let (words, chars) = JointModel::targets(vocab, chars, u)?;
                Ok(Encoded { words, chars })
            })
            .collect()
    };
    let train_targets = encode(train_set)?;
    let valid_targets = encode(valid_set)?;
    let order = sort_by_length(train_set);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut phase = Phase::Adam(Box::new(Adam::new(&model.store, cfg.adam_lr)));
    let mut log = Vec::new();
    let mut best_valid = f64::INFINITY;
    let mut best_snapshot = None;
    let mut bad_epochs = 0usize;
    let mut switched_at = None;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let t0 = Instant::now();
        let (mut ws, mut cs, mut js) = (Vec::new(), Vec::new(), Vec::new());

        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut batch_loss = None;
            let inv = 1.0 / batch.len() as f64;
            for &ui in batch {
                let utt = &train_set[ui];
                let enc = &train_targets[ui];
                let l = model.joint_loss(
                    &mut tape,
                    &utt.features,
                    &enc.words,
                    &enc.chars,
                    cfg.sampling_prob,
                    cfg.smoothing,
                    true,
                    &mut rng,
                );
                ws.push(l.word_nll);
                cs.push(l.char_nll);
                js.push(tape.value(l.joint).data[0]);
                let scaled = tape.scale(l.joint, inv);
                batch_loss = Some(match batch_loss {
                    None => scaled,
                    Some(acc) => tape.add(acc, scaled),
                });
            }
            let loss = batch_loss.expect("nonempty batch");
            let loss_value = tape.value(loss).data[0];
            if !loss_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss {loss_value} at epoch {epoch}"
                )));
            }
            model.store.zero_grads();
            tape.backward(loss, &mut model.store);
            clip_gradients(&mut model.store, cfg.clip_norm);
            match &mut phase {
                Phase::Adam(a) => a.step(&mut model.store),
                Phase::Sgd { lr } => sgd_step(&mut model.store, *lr),
            }
            if !model.store.values_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after update at epoch {epoch}"
                )));
            }
        }

        let wall = t0.elapsed().as_secs_f64();
        log.push(EpochStats {
            epoch,
            split: "train".into(),
            loss_word: mean(&ws),
            loss_char: mean(&cs),
            loss_joint: mean(&js),
            wall_seconds: wall,
        });

        // validation: teacher forcing, no dropout
        let tv = Instant::now();
        let (mut vws, mut vcs, mut vjs) = (Vec::new(), Vec::new(), Vec::new());
        for (utt, enc) in valid_set.iter().zip(&valid_targets) {
            let mut tape = Tape::new();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let l = model.joint_loss(
                &mut tape,
                &utt.features,
                &enc.words,
                &enc.chars,
                0.0,
                cfg.smoothing,
                false,
                &mut r,
            );
            vws.push(l.word_nll);
            vcs.push(l.char_nll);
            vjs.push(tape.value(l.joint).data[0]);
        }
        let valid_joint = mean(&vjs);
        log.push(EpochStats {
            epoch,
            split: "valid".into(),
            loss_word: mean(&vws),
            loss_char: mean(&vcs),
            loss_joint: valid_joint,
            wall_seconds: tv.elapsed().as_secs_f64(),
        });

        let improved = valid_set.is_empty() || valid_joint < best_valid;
        if improved {
            best_valid = valid_joint;
            best_snapshot = Some(model.store.snapshot());
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            match &mut phase {
                Phase::Adam(_) => {
                    phase = Phase::Sgd { lr: cfg.sgd_lr };
                    switched_at = Some(epoch);
                }
                Phase::Sgd { lr } => *lr /= 2.0,
            }
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }

    if let Some(snap) = &best_snapshot {
        model.store.restore(snap);
    }
    Ok(TrainOutcome { log, best_valid_joint: best_valid, epochs_run, switched_to_sgd_at: switched_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, SynthSpec};
    use crate::model::ModelConfig;
    use crate::numeric::Tensor;

    #[test]
    fn clip_boundary_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("g", Tensor::vector(vec![0.0, 0.0]));
        store.grad_mut(id).copy_from_slice(&[3.0, 4.0]);
        clip_gradients(&mut store, 5.0);
        assert_eq!(store.grad(id), &[3.0, 4.0]);
    }

    #[test]
    fn clip_scales_down() {
        let mut store = ParamStore::new();
        let id = store.add("g", Tensor::vector(vec![0.0, 0.0]));
        store.grad_mut(id).copy_from_slice(&[6.0, 8.0]);
        clip_gradients(&mut store, 5.0);
        assert_eq!(store.grad(id), &[3.0, 4.0]);
    }

    #[test]
    fn clip_bounds_random_gradients() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(vec![40]));
        let b = store.add("b", Tensor::zeros(vec![25]));
        for id in [a, b] {
            for g in store.grad_mut(id) {
                *g = rng.gen_range(-3.0..3.0);
            }
        }
        clip_gradients(&mut store, 5.0);
        let norm: f64 = store.grad_norm();
        assert!(norm <= 5.0 + 1e-9, "post-clip norm {norm}");
    }

    fn utt(id: &str, frames: usize) -> Utterance {
        Utterance {
            id: id.into(),
            features: Tensor::zeros(vec![frames, 2]),
            words: "x".into(),
        }
    }

    #[test]
    fn length_sort_ascending_and_stable() {
        let utts = vec![utt("a", 5), utt("b", 3), utt("c", 9), utt("d", 3)];
        let order = sort_by_length(&utts);
        assert_eq!(order, vec![1, 3, 0, 2]);

        // reference comparison sort oracle on 100 random lengths
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let utts: Vec<Utterance> =
            (0..100).map(|i| utt(&format!("u{i}"), rng.gen_range(1..20))).collect();
        let order = sort_by_length(&utts);
        let mut reference: Vec<usize> = (0..100).collect();
        reference.sort_by(|&x, &y| {
            utts[x].frames().cmp(&utts[y].frames()).then(x.cmp(&y))
        });
        assert_eq!(order, reference);
    }

    #[test]
    fn adam_matches_canonical_scalar_iteration() {
        // loss = (w - 1)^2, g = 2 (w - 1); iterate the published update rule
        // independently and compare
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![3.0]));
        let mut adam = Adam::new(&store, 0.1);

        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expect = 3.0f64;
        for t in 1..=3 {
            let g = 2.0 * (store.value(id).data[0] - 1.0);
            store.grad_mut(id)[0] = g;
            adam.step(&mut store);

            let ge = 2.0 * (expect - 1.0);
            m = b1 * m + (1.0 - b1) * ge;
            v = b2 * v + (1.0 - b2) * ge * ge;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            expect -= lr * mhat / (vhat.sqrt() + eps);

            assert!(
                (store.value(id).data[0] - expect).abs() < 1e-12,
                "step {t}: {} vs {expect}",
                store.value(id).data[0]
            );
            store.zero_grads();
        }
    }

    fn toy_setup(
        n: usize,
        lambda: f64,
        seed: u64,
    ) -> (JointModel, Vec<Utterance>, Vec<Utterance>, Vocabulary, CharInventory) {
        let spec = SynthSpec {
            alphabet_size: 6,
            frames_per_char: 2,
            feature_dim: 8,
            noise_sigma: 0.05,
            lexicon_size: 10,
            zipf_exponent: 1.0,
            word_len: (2, 3),
            utt_words: (1, 2),
            n_train: n,
            n_valid: 8,
            n_test: 0,
            n_test_oov: 0,
            n_oov_words: 2,
            oov_per_utterance: 1,
            lm_extra_lines: 0,
            max_duplicate_count: None,
            seed,
        };
        let g = synth_generate(&spec).unwrap();
        let transcripts: Vec<String> = g.train.iter().map(|u| u.words.clone()).collect();
        let vocab = Vocabulary::build(&transcripts, 1);
        let all_text: Vec<String> = g
            .train
            .iter()
            .chain(&g.valid)
            .map(|u| u.words.clone())
            .collect();
        let chars = CharInventory::build(&all_text);
        let cfg = ModelConfig {
            feat_dim: 8,
            enc_layers: 2,
            enc_hidden: 6,
            subsample_layers: vec![1, 2],
            char_tap_layer: 2,
            dec_hidden: 8,
            att_dim: 8,
            loc_channels: 2,
            loc_kernel_width: 3,
            word_embed: 6,
            char_embed: 4,
            lambda,
            dropout: 0.1,
            init_seed: seed,
            ..ModelConfig::default()
        };
        let model = JointModel::for_vocab(cfg, &vocab, &chars).unwrap();
        (model, g.train, g.valid, vocab, chars)
    }

    #[test]
    fn word_loss_decreases_over_first_epochs() {
        let (mut model, train_set, valid_set, vocab, chars) = toy_setup(50, 1.0, 5);
        let cfg = TrainConfig { max_epochs: 3, batch_size: 10, seed: 5, ..TrainConfig::default() };
        let out = train(&mut model, &train_set, &valid_set, &vocab, &chars, &cfg).unwrap();
        let train_rows: Vec<&EpochStats> =
            out.log.iter().filter(|r| r.split == "train").collect();
        assert_eq!(train_rows.len(), 3);
        assert!(
            train_rows[0].loss_word > train_rows[1].loss_word
                && train_rows[1].loss_word > train_rows[2].loss_word,
            "word loss not monotone: {:?}",
            train_rows.iter().map(|r| r.loss_word).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (mut model, train_set, valid_set, vocab, chars) = toy_setup(10, 0.5, 6);
        let before = model.store.snapshot();
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let out = train(&mut model, &train_set, &valid_set, &vocab, &chars, &cfg).unwrap();
        assert_eq!(out.epochs_run, 0);
        assert_eq!(model.store.snapshot(), before);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = || {
            let (mut model, train_set, valid_set, vocab, chars) = toy_setup(12, 0.5, 7);
            let cfg =
                TrainConfig { max_epochs: 2, batch_size: 4, seed: 9, ..TrainConfig::default() };
            train(&mut model, &train_set, &valid_set, &vocab, &chars, &cfg).unwrap();
            model.store.snapshot()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn poisoned_parameters_raise_divergence() {
        let (mut model, train_set, valid_set, vocab, chars) = toy_setup(6, 0.5, 8);
        let first = model.store.ids().next().unwrap();
        model.store.value_mut(first).data[0] = f64::INFINITY;
        let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
        let err = train(&mut model, &train_set, &valid_set, &vocab, &chars, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "got {err:?}");
    }

    #[test]
    fn empty_corpus_is_data_error() {
        let (mut model, _, valid_set, vocab, chars) = toy_setup(6, 0.5, 9);
        let cfg = TrainConfig::default();
        let err = train(&mut model, &[], &valid_set, &vocab, &chars, &cfg).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
