//! On-disk record formats produced by `decode` and consumed by `eval`.

use serde::{Deserialize, Serialize};

use a2w_core::resolver::AlignmentResult;

/// One line of `hyps.jsonl`. Deterministic for a fixed model and corpus;
/// wall-clock timing lives in the decode summary instead.
#[derive(Serialize, Deserialize)]
pub struct HypRecord {
    pub id: String,
    /// Best word hypothesis before resolution.
    pub words: Vec<String>,
    /// Greedy character hypothesis.
    pub chars: String,
    pub nbest: Vec<NbestEntry>,
    /// Best hypothesis after OOV resolution, when resolution ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved: Option<Vec<String>>,
    pub n_oov: usize,
    pub n_resolved: usize,
    pub n_fallback: usize,
    /// Hypothesis positions whose OOV token was substituted.
    pub resolved_positions: Vec<usize>,
    pub finished: bool,
    pub char_finished: bool,
    pub frames: usize,
}

#[derive(Serialize, Deserialize)]
pub struct NbestEntry {
    pub words: Vec<String>,
    pub log_am: f64,
    pub log_lm: f64,
    pub coverage: usize,
    pub total: f64,
    pub finished: bool,
}

/// One line of `resolve.jsonl`.
#[derive(Serialize)]
pub struct ResolutionRecord {
    pub id: String,
    pub alignments: Vec<AlignmentResult>,
    pub fallback_count: usize,
}

/// Timing and configuration echo for one decode run.
#[derive(Serialize, Deserialize)]
pub struct DecodeSummary {
    pub config: serde_json::Value,
    pub utterances: usize,
    pub wall_seconds: f64,
    pub audio_seconds: f64,
    pub rtf: f64,
}
