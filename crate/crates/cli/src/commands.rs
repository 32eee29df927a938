use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;
use serde_json::json;

use a2w_core::beam::{decode_utterance, DecodeOutput, FusionConfig};
use a2w_core::checkpoint;
use a2w_core::corpus::{
    self, load_corpus, synth_generate, write_corpus, write_vocab_tsv, CharInventory, SynthSpec,
    Utterance, Vocabulary, OOV_ID,
};
use a2w_core::error::{Error, Result};
use a2w_core::metrics::{self, EvalReport, ScoredUtterance};
use a2w_core::model::{JointModel, ModelConfig};
use a2w_core::numeric::gradcheck as gc;
use a2w_core::resolver;
use a2w_core::rnnlm::{self, LmConfig, LmTrainConfig, RnnLm};
use a2w_core::trainer::{self, TrainConfig};

use crate::records::{DecodeSummary, HypRecord, NbestEntry, ResolutionRecord};
use crate::{
    DecodeArgs, EvalArgs, GradcheckArgs, SweepArgs, SynthArgs, TrainAmArgs, TrainLmArgs,
};

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    write_file(path, text)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
        out.push(b'\n');
    }
    write_file(path, out)
}

// ---- synth ---------------------------------------------------------------

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &args.spec {
        Some(path) => toml::from_str(&read_to_string(path)?)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let generated = synth_generate(&spec)?;

    for (name, split) in [
        ("train", &generated.train),
        ("valid", &generated.valid),
        ("test", &generated.test),
        ("test_oov", &generated.test_oov),
    ] {
        write_corpus(&args.out.join(name), split)?;
    }

    let small: Vec<&str> = generated.train.iter().map(|u| u.words.as_str()).collect();
    write_file(&args.out.join("lm_small.txt"), small.join("\n") + "\n")?;
    let mut large = small;
    large.extend(generated.lm_extra_text.iter().map(|s| s.as_str()));
    write_file(&args.out.join("lm_large.txt"), large.join("\n") + "\n")?;

    write_json(
        &args.out.join("synth_meta.json"),
        &json!({
            "spec": spec,
            "lexicon": generated.lexicon,
            "oov_words": generated.oov_words,
        }),
    )?;
    println!(
        "wrote {} train / {} valid / {} test / {} oov-test utterances to {}",
        generated.train.len(),
        generated.valid.len(),
        generated.test.len(),
        generated.test_oov.len(),
        args.out.display()
    );
    Ok(())
}

// ---- train-am ------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(default)]
struct VocabSection {
    min_count: Option<u64>,
    max_size: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct TrainAmFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    vocab: VocabSection,
}

pub fn train_am(args: TrainAmArgs) -> Result<()> {
    let file: TrainAmFile = match &args.config {
        Some(path) => toml::from_str(&read_to_string(path)?)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        None => TrainAmFile::default(),
    };
    let mut model_cfg = file.model.unwrap_or_default();
    let mut train_cfg = file.train.unwrap_or_default();
    let min_count = args.vocab_min_count.or(file.vocab.min_count).unwrap_or(5);
    let max_size = args.vocab_max_size.or(file.vocab.max_size);

    if let Some(mtl) = args.mtl {
        model_cfg.lambda = mtl;
    }
    if let Some(dropout) = args.dropout {
        model_cfg.dropout = dropout;
    }
    if let Some(epochs) = args.epochs {
        train_cfg.max_epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        train_cfg.batch_size = batch;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
        model_cfg.init_seed = seed;
    }

    let train_set = load_corpus(&args.corpus.join("train").join("manifest.jsonl"))?;
    let valid_set = load_corpus(&args.corpus.join("valid").join("manifest.jsonl"))?;
    if train_set.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    model_cfg.feat_dim = train_set[0].features.cols();

    let transcripts: Vec<String> = train_set.iter().map(|u| u.words.clone()).collect();
    let vocab = Vocabulary::build_limited(&transcripts, min_count, max_size.unwrap_or(usize::MAX));
    let all_text: Vec<String> =
        train_set.iter().chain(&valid_set).map(|u| u.words.clone()).collect();
    let inventory = CharInventory::build(&all_text);

    let mut model = JointModel::for_vocab(model_cfg, &vocab, &inventory)?;
    let outcome = trainer::train(&mut model, &train_set, &valid_set, &vocab, &inventory, &train_cfg)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    checkpoint::save_model(&args.out, &model, &vocab, &inventory)?;
    write_vocab_tsv(&args.out.join("vocab.tsv"), &vocab)?;

    let mut csv = String::from(trainer::stats_csv_header());
    csv.push('\n');
    for row in &outcome.log {
        csv.push_str(&trainer::stats_csv_row(row));
        csv.push('\n');
    }
    write_file(&args.out.join("train.csv"), csv)?;
    write_json(
        &args.out.join("train_config.json"),
        &json!({
            "model": model.cfg,
            "train": train_cfg,
            "vocab_min_count": min_count,
            "vocab_max_size": max_size,
            "vocab_size": vocab.len(),
            "char_inventory_size": inventory.len(),
            "epochs_run": outcome.epochs_run,
            "best_valid_joint": outcome.best_valid_joint,
            "switched_to_sgd_at": outcome.switched_to_sgd_at,
        }),
    )?;
    println!(
        "trained {} epochs (best valid loss {:.4}), checkpoint at {}",
        outcome.epochs_run,
        outcome.best_valid_joint,
        args.out.display()
    );
    Ok(())
}

// ---- train-lm ------------------------------------------------------------

pub fn train_lm(args: TrainLmArgs) -> Result<()> {
    let (_, vocab, _) = checkpoint::load_model(&args.am)?;

    let mut sentences: Vec<Vec<usize>> = Vec::new();
    for path in &args.text {
        for line in read_to_string(path)?.lines() {
            if !line.trim().is_empty() {
                sentences.push(vocab.encode(line));
            }
        }
    }
    if sentences.is_empty() {
        return Err(Error::data("no LM training text"));
    }
    // hold out every 20th sentence for validation
    let mut train_sents = Vec::new();
    let mut valid_sents = Vec::new();
    for (i, s) in sentences.into_iter().enumerate() {
        if i % 20 == 19 {
            valid_sents.push(s);
        } else {
            train_sents.push(s);
        }
    }
    if valid_sents.is_empty() {
        valid_sents.push(train_sents[0].clone());
    }

    let mut lm = RnnLm::new(LmConfig {
        vocab: vocab.len(),
        hidden: args.hidden,
        init_seed: args.seed,
        ..LmConfig::default()
    })?;
    let cfg = LmTrainConfig {
        lr: args.lr,
        bptt_len: args.bptt,
        max_epochs: args.epochs,
        seed: args.seed,
        ..LmTrainConfig::default()
    };
    let outcome = rnnlm::train_lm(&mut lm, &train_sents, &valid_sents, &cfg)?;
    checkpoint::save_lm(&args.out, &lm, &vocab)?;
    write_json(
        &args.out.join("lm_train_log.json"),
        &json!({
            "config": cfg,
            "hidden": args.hidden,
            "log": outcome.log,
            "best_valid_ppl": outcome.best_valid_ppl,
        }),
    )?;
    println!(
        "LM perplexity {:.3} on held-out text, checkpoint at {}",
        outcome.best_valid_ppl,
        args.out.display()
    );
    Ok(())
}

// ---- decode ---------------------------------------------------------------

pub struct DecodePipeline<'a> {
    pub model: &'a JointModel,
    pub vocab: &'a Vocabulary,
    pub inventory: &'a CharInventory,
    pub lm: Option<&'a RnnLm>,
    pub fusion: FusionConfig,
    pub resolve: bool,
}

type DecodedRecord = (HypRecord, Option<ResolutionRecord>, f64);

impl DecodePipeline<'_> {
    /// Decode one utterance into its file record. Pure given frozen models.
    pub fn run(&self, utt: &Utterance) -> DecodedRecord {
        let t0 = Instant::now();
        let out: DecodeOutput = decode_utterance(self.model, self.lm, &utt.features, &self.fusion);
        let best = out.best();
        let words: Vec<String> =
            best.tokens.iter().map(|&t| self.vocab.word(t).to_string()).collect();
        let chars = self.inventory.decode(&out.char_tokens);
        let nbest = out
            .nbest
            .iter()
            .map(|h| NbestEntry {
                words: h.tokens.iter().map(|&t| self.vocab.word(t).to_string()).collect(),
                log_am: h.log_am,
                log_lm: h.log_lm,
                coverage: h.coverage,
                total: h.total(&self.fusion),
                finished: h.finished,
            })
            .collect();
        let n_oov = best.tokens.iter().filter(|&&t| t == OOV_ID).count();

        let (resolved, resolution) = if self.resolve {
            let (resolved_words, alignments) = resolver::resolve(
                &best.tokens,
                &best.trace,
                &out.char_tokens,
                &out.char_trace,
                self.vocab,
                self.inventory,
            );
            let fallback_count = alignments.iter().filter(|a| a.fallback).count();
            let record = ResolutionRecord {
                id: utt.id.clone(),
                fallback_count,
                alignments,
            };
            (Some(resolved_words), Some(record))
        } else {
            (None, None)
        };
        let (n_resolved, n_fallback, resolved_positions) = match &resolution {
            Some(r) => (
                r.alignments.iter().filter(|a| !a.fallback).count(),
                r.fallback_count,
                r.alignments.iter().filter(|a| !a.fallback).map(|a| a.word_step).collect(),
            ),
            None => (0, 0, Vec::new()),
        };
        let wall = t0.elapsed().as_secs_f64();
        let record = HypRecord {
            id: utt.id.clone(),
            words,
            chars,
            nbest,
            resolved,
            n_oov,
            n_resolved,
            n_fallback,
            resolved_positions,
            finished: best.finished,
            char_finished: out.char_finished,
            frames: utt.frames(),
        };
        (record, resolution, wall)
    }

    /// Decode a corpus with the given worker count; records come back in
    /// utterance-id order regardless of scheduling.
    pub fn run_corpus(
        &self,
        utterances: &[Utterance],
        workers: usize,
    ) -> Result<(Vec<HypRecord>, Vec<ResolutionRecord>, f64)> {
        let results: Vec<DecodedRecord> = if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::config(format!("worker pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                utterances.par_iter().map(|u| self.run(u)).collect()
            })
        } else {
            utterances.iter().map(|u| self.run(u)).collect()
        };

        let mut indexed: Vec<(usize, DecodedRecord)> = results.into_iter().enumerate().collect();
        indexed.sort_by(|a, b| a.1 .0.id.cmp(&b.1 .0.id));
        let mut records = Vec::with_capacity(indexed.len());
        let mut resolutions = Vec::new();
        let mut wall = 0.0;
        for (_, (rec, res, w)) in indexed {
            records.push(rec);
            if let Some(r) = res {
                resolutions.push(r);
            }
            wall += w;
        }
        Ok((records, resolutions, wall))
    }
}

pub fn fusion_from_flags(
    beam: usize,
    beta: Option<f64>,
    gamma: Option<f64>,
    tau: f64,
    max_len_factor: f64,
    with_lm: bool,
) -> FusionConfig {
    FusionConfig {
        beam_size: beam,
        lm_weight: if with_lm { beta.unwrap_or(0.2) } else { 0.0 },
        coverage_weight: gamma.unwrap_or_else(|| FusionConfig::default_coverage_weight(with_lm)),
        coverage_tau: tau,
        max_len_factor,
    }
}

pub fn decode(args: DecodeArgs) -> Result<()> {
    let (model, vocab, inventory) = checkpoint::load_model(&args.am)?;
    let lm = match &args.lm {
        Some(path) => {
            let (lm, lm_vocab) = checkpoint::load_lm(path)?;
            if checkpoint::vocab_fingerprint(&lm_vocab) != checkpoint::vocab_fingerprint(&vocab) {
                return Err(Error::config(format!(
                    "vocabulary fingerprint mismatch between {} and {}; retrain the LM \
                     against this acoustic model's vocabulary",
                    args.am.display(),
                    path.display()
                )));
            }
            Some(lm)
        }
        None => None,
    };

    let utterances = load_corpus(&args.corpus)?;
    let fusion = fusion_from_flags(
        args.beam,
        args.beta,
        args.gamma,
        args.tau,
        args.max_len_factor,
        lm.is_some(),
    );
    let pipeline = DecodePipeline {
        model: &model,
        vocab: &vocab,
        inventory: &inventory,
        lm: lm.as_ref(),
        fusion: fusion.clone(),
        resolve: args.resolve,
    };
    let (records, resolutions, wall) = pipeline.run_corpus(&utterances, args.workers)?;

    let audio: f64 = records.iter().map(|r| metrics::audio_seconds(r.frames)).sum();
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_jsonl(&args.out.join("hyps.jsonl"), &records)?;
    if args.resolve {
        write_jsonl(&args.out.join("resolve.jsonl"), &resolutions)?;
    }
    let summary = DecodeSummary {
        config: json!({
            "corpus": args.corpus,
            "am": args.am,
            "lm": args.lm,
            "fusion": fusion,
            "resolve": args.resolve,
            "workers": args.workers,
        }),
        utterances: records.len(),
        wall_seconds: wall,
        audio_seconds: audio,
        rtf: if audio > 0.0 { wall / audio } else { 0.0 },
    };
    write_json(&args.out.join("decode_summary.json"), &summary)?;
    println!(
        "decoded {} utterances (RTF {:.4}) into {}",
        records.len(),
        summary.rtf,
        args.out.display()
    );
    Ok(())
}

// ---- eval ------------------------------------------------------------------

fn read_hyp_records(path: &Path) -> Result<Vec<HypRecord>> {
    read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
        })
        .collect()
}

pub fn scored_from_records(
    refs: &[(String, PathBuf, String)],
    records: &[HypRecord],
) -> Result<Vec<ScoredUtterance>> {
    let by_id: std::collections::HashMap<&str, &str> =
        refs.iter().map(|(id, _, words)| (id.as_str(), words.as_str())).collect();
    if refs.len() != records.len() {
        return Err(Error::data(format!(
            "reference has {} utterances but hypotheses have {}",
            refs.len(),
            records.len()
        )));
    }
    records
        .iter()
        .map(|rec| {
            let reference = by_id
                .get(rec.id.as_str())
                .ok_or_else(|| Error::data(format!("hypothesis id {} not in references", rec.id)))?;
            Ok(ScoredUtterance {
                id: rec.id.clone(),
                reference: reference.split_whitespace().map(String::from).collect(),
                hypothesis: rec
                    .resolved
                    .clone()
                    .unwrap_or_else(|| rec.words.clone()),
                oov_detected: rec.n_oov,
                oov_resolved: rec.n_resolved,
                fallbacks: rec.n_fallback,
                resolved_positions: rec.resolved_positions.clone(),
                wall_seconds: 0.0,
                frames: rec.frames,
            })
        })
        .collect()
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let refs = corpus::read_manifest(&args.refs)?;
    let records = read_hyp_records(&args.hyps)?;
    let scored = scored_from_records(&refs, &records)?;
    let mut report = metrics::evaluate(
        &args.system,
        &args.split,
        &scored,
        json!({"refs": args.refs, "hyps": args.hyps, "timing": args.timing}),
    )?;
    if let Some(timing) = &args.timing {
        let summary: DecodeSummary = serde_json::from_str(&read_to_string(timing)?)
            .map_err(|e| Error::Json { path: timing.clone(), source: e })?;
        report.rtf = summary.rtf;
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_json(&args.out.join("report.json"), &report)?;
    let csv = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row());
    write_file(&args.out.join("report.csv"), csv)?;
    println!(
        "{}: WER {:.2} ({} OOV detected, {} resolved, {} fallbacks)",
        args.system, report.wer, report.n_oov_detected, report.n_oov_resolved, report.n_fallback
    );
    Ok(())
}

// ---- sweep-vocab -----------------------------------------------------------

pub fn sweep_vocab(args: SweepArgs) -> Result<()> {
    let file: TrainAmFile = match &args.config {
        Some(path) => toml::from_str(&read_to_string(path)?)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        None => TrainAmFile::default(),
    };
    let model_cfg = file.model.unwrap_or_default();
    let mut train_cfg = file.train.unwrap_or_default();
    if let Some(epochs) = args.epochs {
        train_cfg.max_epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        train_cfg.batch_size = batch;
    }

    let train_set = load_corpus(&args.corpus.join("train").join("manifest.jsonl"))?;
    let valid_set = load_corpus(&args.corpus.join("valid").join("manifest.jsonl"))?;
    let eval_split = if args.oov_split { "test_oov" } else { "test" };
    let eval_set = load_corpus(&args.corpus.join(eval_split).join("manifest.jsonl"))?;
    let transcripts: Vec<String> = train_set.iter().map(|u| u.words.clone()).collect();
    let all_text: Vec<String> =
        train_set.iter().chain(&valid_set).map(|u| u.words.clone()).collect();
    let inventory = CharInventory::build(&all_text);
    let eval_transcripts: Vec<String> = eval_set.iter().map(|u| u.words.clone()).collect();

    let mut csv = String::from(
        "vocab_size,oov_rate,seed,system,wer,n_oov_detected,n_oov_resolved,n_fallback,rtf\n",
    );
    for &size in &args.sizes {
        let vocab = Vocabulary::build_limited(&transcripts, 1, size);
        let oov_rate = vocab.oov_rate(&eval_transcripts)?;
        for &seed in &args.seeds {
            for (system, lambda, resolve) in
                [("a2w", 1.0, false), ("a2w+a2c+resolve", 0.5, true)]
            {
                let report = sweep_point(
                    &train_set,
                    &valid_set,
                    &eval_set,
                    &vocab,
                    &inventory,
                    &model_cfg,
                    &train_cfg,
                    lambda,
                    resolve,
                    seed,
                    system,
                    eval_split,
                )?;
                csv.push_str(&format!(
                    "{},{:.4},{},{},{:.4},{},{},{},{:.6}\n",
                    vocab.len(),
                    oov_rate,
                    seed,
                    system,
                    report.wer,
                    report.n_oov_detected,
                    report.n_oov_resolved,
                    report.n_fallback,
                    report.rtf
                ));
                println!(
                    "size {} seed {seed} {system}: WER {:.2} (OOV rate {:.2}%)",
                    vocab.len(),
                    report.wer,
                    oov_rate
                );
            }
        }
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_file(&args.out.join("sweep.csv"), csv)?;
    println!("sweep results at {}", args.out.join("sweep.csv").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    train_set: &[Utterance],
    valid_set: &[Utterance],
    eval_set: &[Utterance],
    vocab: &Vocabulary,
    inventory: &CharInventory,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    lambda: f64,
    resolve: bool,
    seed: u64,
    system: &str,
    split: &str,
) -> Result<EvalReport> {
    let model_cfg = ModelConfig {
        feat_dim: train_set[0].features.cols(),
        lambda,
        init_seed: seed,
        ..model_cfg.clone()
    };
    let train_cfg = TrainConfig { seed, ..train_cfg.clone() };
    let mut model = JointModel::for_vocab(model_cfg, vocab, inventory)?;
    trainer::train(&mut model, train_set, valid_set, vocab, inventory, &train_cfg)?;

    let fusion = fusion_from_flags(5, None, None, 0.0, 1.5, false);
    let pipeline = DecodePipeline {
        model: &model,
        vocab,
        inventory,
        lm: None,
        fusion,
        resolve,
    };
    let (records, _, wall) = pipeline.run_corpus(eval_set, 1)?;
    let refs: Vec<(String, PathBuf, String)> =
        eval_set.iter().map(|u| (u.id.clone(), PathBuf::new(), u.words.clone())).collect();
    let mut scored = scored_from_records(&refs, &records)?;
    let per_utt_wall = wall / scored.len().max(1) as f64;
    for s in &mut scored {
        s.wall_seconds = per_utt_wall;
    }
    metrics::evaluate(system, split, &scored, json!({"seed": seed, "vocab_size": vocab.len()}))
}

// ---- gradcheck ---------------------------------------------------------------

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    use a2w_core::corpus::EOS_ID;
    use a2w_core::model::sequence_nll;
    use a2w_core::numeric::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let cfg = ModelConfig {
        feat_dim: 4,
        enc_layers: 2,
        enc_hidden: 4,
        subsample_layers: vec![1, 2],
        char_tap_layer: 2,
        dec_hidden: 5,
        att_dim: 5,
        loc_channels: 2,
        loc_kernel_width: 3,
        word_embed: 4,
        char_embed: 3,
        word_vocab: 8,
        char_vocab: 6,
        dropout: 0.0,
        init_seed: args.seed,
        ..ModelConfig::default()
    };
    let model = JointModel::new(cfg)?;
    let feats = Tensor::from_rows(
        &(0..8)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect::<Vec<Vec<f64>>>(),
    );
    let words = vec![4usize, 3, EOS_ID];
    let chars = vec![5usize, 2, 3, EOS_ID];

    let encoder = model.encoder.clone();
    let word_dec = model.word_decoder.clone();
    let char_dec = model.char_decoder.clone();
    let mut store = model.store;
    let reports = gc::check_all(
        &mut store,
        move |tape, s| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let fv = tape.leaf(feats.clone());
            let (h_word, h_char) = encoder.forward(tape, s, fv, 0.0, &mut r);
            let (wl, _) = sequence_nll(tape, s, &word_dec, h_word, &words, 0.0, 0.1, 0.0, &mut r);
            let (cl, _) = sequence_nll(tape, s, &char_dec, h_char, &chars, 0.0, 0.1, 0.0, &mut r);
            let wls = tape.scale(wl, 0.5);
            let cls = tape.scale(cl, 0.5);
            tape.add(wls, cls)
        },
        gc::DEFAULT_EPS,
    );

    let mut lm = RnnLm::new(LmConfig { vocab: 8, hidden: 6, init_seed: args.seed, ..LmConfig::default() })?;
    let seq = [EOS_ID, 3, 4, 7, EOS_ID];
    let (l1c, l2c, emb) = (lm.layer1.clone(), lm.layer2.clone(), lm.embedding);
    let lm_reports = gc::check_all(
        &mut lm.store,
        move |tape, s| {
            let mut state = (l1c.zero_state(tape), l2c.zero_state(tape));
            let mut sum = None;
            for t in 0..seq.len() - 1 {
                let table = tape.param(s, emb);
                let e = tape.row(table, seq[t]);
                let s1 = l1c.step(tape, s, e, state.0);
                let s2 = l2c.step(tape, s, s1.h, state.1);
                let rep = tape.add(s1.h, s2.h);
                let logits = tape.matvec(table, rep);
                let lp = tape.log_softmax(logits);
                let gold = tape.slice(lp, seq[t + 1], 1);
                sum = Some(match sum {
                    None => gold,
                    Some(acc) => tape.add(acc, gold),
                });
                state = (s1, s2);
            }
            tape.scale(sum.unwrap(), -1.0)
        },
        gc::DEFAULT_EPS,
    );

    let mut failures = 0;
    for r in reports.iter().chain(&lm_reports) {
        let status = if r.passes(gc::DEFAULT_TOL) { "ok" } else { "FAIL" };
        if status == "FAIL" {
            failures += 1;
        }
        println!("{status}  {:<28} max rel err {:.3e}", r.name, r.max_rel_err);
    }
    if failures > 0 {
        return Err(Error::Divergence(format!(
            "{failures} parameter(s) failed the finite-difference check"
        )));
    }
    println!("all {} parameters match finite differences", reports.len() + lm_reports.len());
    Ok(())
}
