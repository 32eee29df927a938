//! Command-line surface for the recognizer: synthetic corpus generation,
//! acoustic and LM training, fused decoding with OOV resolution, scoring,
//! vocabulary-size sweeps, and gradient verification.

mod commands;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use a2w_core::error::Error;

#[derive(Parser)]
#[command(name = "a2w", version, about = "acoustic-to-word recognizer with OOV recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus splits and LM text.
    Synth(SynthArgs),
    /// Train the joint acoustic model.
    TrainAm(TrainAmArgs),
    /// Train the fusion language model on transcript text.
    TrainLm(TrainLmArgs),
    /// Beam-decode a corpus, optionally with LM fusion and OOV resolution.
    Decode(DecodeArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// Train/decode/score across vocabulary sizes.
    SweepVocab(SweepArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// TOML generator spec; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainAmArgs {
    /// Corpus root containing train/ and valid/ split directories.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML config with [model] and [train] sections; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Word-loss weight (1.0 trains the word branch alone).
    #[arg(long)]
    mtl: Option<f64>,
    #[arg(long)]
    vocab_min_count: Option<u64>,
    /// Keep only the most frequent words up to this count.
    #[arg(long)]
    vocab_max_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainLmArgs {
    /// Acoustic checkpoint whose vocabulary the LM shares.
    #[arg(long)]
    am: PathBuf,
    /// Text files, one utterance per line, whitespace-tokenized.
    #[arg(long, num_args = 1.., required = true)]
    text: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    bptt: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
pub struct DecodeArgs {
    /// Manifest of the corpus to decode.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    am: PathBuf,
    /// LM checkpoint for shallow fusion.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// LM weight; only meaningful with --lm.
    #[arg(long, requires = "lm")]
    beta: Option<f64>,
    /// Coverage weight; defaults differ with and without --lm.
    #[arg(long)]
    gamma: Option<f64>,
    /// Coverage threshold.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 1.5)]
    max_len_factor: f64,
    /// Replace OOV emissions from the character branch.
    #[arg(long)]
    resolve: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Reference manifest.
    #[arg(long)]
    refs: PathBuf,
    /// Decoded hypotheses (JSON lines).
    #[arg(long)]
    hyps: PathBuf,
    /// Decode summary providing wall-clock timing for the RTF.
    #[arg(long)]
    timing: Option<PathBuf>,
    #[arg(long, default_value = "system")]
    system: String,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Corpus root with train/, valid/, test/, and test_oov/ splits.
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated vocabulary sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Evaluate on the OOV split instead of the in-domain test split.
    #[arg(long)]
    oov_split: bool,
    /// TOML config with [model] and [train] sections, as for train-am.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Json { .. } => 3,
        Error::Divergence(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::TrainAm(args) => commands::train_am(args),
        Command::TrainLm(args) => commands::train_lm(args),
        Command::Decode(args) => commands::decode(args),
        Command::Eval(args) => commands::eval(args),
        Command::SweepVocab(args) => commands::sweep_vocab(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
