//! OOV recovery: each OOV emission in the word hypothesis is replaced by
//! the space-delimited token of the character hypothesis at the position
//! where the two decoders' attention distributions overlap most.
//!
//! The character branch runs at twice the word branch's frame rate, so its
//! attention rows are averaged over adjacent frame pairs before the overlap
//! products are taken.

use serde::Serialize;

use crate::corpus::{CharInventory, Vocabulary, OOV_ID, OOV_TOKEN};
use crate::error::{Error, Result};
use crate::model::AttentionTrace;

/// Outcome of resolving one OOV slot.
#[derive(Clone, Debug, Serialize)]
pub struct AlignmentResult {
    /// Word-hypothesis step holding the OOV token.
    pub word_step: usize,
    /// Chosen character step, absent when resolution fell back.
    pub char_step: Option<usize>,
    /// Overlap score per character step.
    pub scores: Vec<f64>,
    /// Substituted text (the literal OOV marker on fallback).
    pub word: String,
    pub fallback: bool,
}

/// Average adjacent column pairs of a character-branch attention trace,
/// zero-padding the final column when the frame count is odd.
pub fn average_adjacent(trace: &AttentionTrace) -> AttentionTrace {
    let frames = trace.frames();
    let out_frames = frames.div_ceil(2);
    let rows = trace
        .rows
        .iter()
        .map(|row| {
            (0..out_frames)
                .map(|i| {
                    let a = row[2 * i];
                    let b = row.get(2 * i + 1).copied().unwrap_or(0.0);
                    (a + b) / 2.0
                })
                .collect()
        })
        .collect();
    AttentionTrace { rows }
}

/// Index of the character step whose (averaged) attention row overlaps the
/// given word-step row most; ties take the earliest step. Rows of unequal
/// length are zero-padded to match, tolerating the off-by-one that odd
/// frame counts introduce.
pub fn align_oov(word_row: &[f64], char_rows: &AttentionTrace) -> Result<usize> {
    if char_rows.steps() == 0 {
        return Err(Error::data("cannot align against an empty character hypothesis"));
    }
    Ok(pick_best(&overlap_scores(word_row, char_rows)))
}

/// Overlap score (dot product over frames) of the word row against every
/// character row.
pub fn overlap_scores(word_row: &[f64], char_rows: &AttentionTrace) -> Vec<f64> {
    let w = char_rows.frames().abs_diff(word_row.len());
    assert!(w <= 1, "frame counts differ by {w}; traces are inconsistent");
    char_rows
        .rows
        .iter()
        .map(|cr| {
            let n = cr.len().min(word_row.len());
            word_row[..n].iter().zip(&cr[..n]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

fn pick_best(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Replace OOV tokens in a word hypothesis using the character hypothesis.
///
/// Word-trace rows correspond 1:1 to word tokens and character steps map
/// 1:1 to characters (spaces included). A slot falls back to the literal
/// OOV marker when the alignment lands on a space, a non-character step, or
/// when there is no character hypothesis at all.
pub fn resolve(
    word_tokens: &[usize],
    word_trace: &AttentionTrace,
    char_tokens: &[usize],
    char_trace: &AttentionTrace,
    vocab: &Vocabulary,
    inventory: &CharInventory,
) -> (Vec<String>, Vec<AlignmentResult>) {
    assert_eq!(
        word_tokens.len(),
        word_trace.steps(),
        "word trace rows must match word tokens"
    );
    assert_eq!(
        char_tokens.len(),
        char_trace.steps(),
        "char trace rows must match char tokens"
    );

    let averaged = average_adjacent(char_trace);
    let chars: Vec<Option<char>> = char_tokens.iter().map(|&id| inventory.char_for(id)).collect();

    let mut words = Vec::with_capacity(word_tokens.len());
    let mut alignments = Vec::new();
    for (n, &tok) in word_tokens.iter().enumerate() {
        if tok != OOV_ID {
            words.push(vocab.word(tok).to_string());
            continue;
        }
        let (result, word) = resolve_slot(n, &word_trace.rows[n], &averaged, &chars);
        words.push(word.clone());
        alignments.push(result);
    }
    (words, alignments)
}

fn resolve_slot(
    word_step: usize,
    word_row: &[f64],
    averaged: &AttentionTrace,
    chars: &[Option<char>],
) -> (AlignmentResult, String) {
    let fallback = |scores: Vec<f64>, step: Option<usize>| {
        let r = AlignmentResult {
            word_step,
            char_step: step,
            scores,
            word: OOV_TOKEN.to_string(),
            fallback: true,
        };
        (r, OOV_TOKEN.to_string())
    };

    if averaged.steps() == 0 {
        return fallback(Vec::new(), None);
    }
    let scores = overlap_scores(word_row, averaged);
    let m = pick_best(&scores);
    match chars[m] {
        Some(c) if c != ' ' => {
            let mut start = m;
            while start > 0 && matches!(chars[start - 1], Some(c) if c != ' ') {
                start -= 1;
            }
            let mut end = m + 1;
            while end < chars.len() && matches!(chars[end], Some(c) if c != ' ') {
                end += 1;
            }
            let word: String = chars[start..end].iter().map(|c| c.unwrap()).collect();
            let r = AlignmentResult {
                word_step,
                char_step: Some(m),
                scores,
                word: word.clone(),
                fallback: false,
            };
            (r, word)
        }
        _ => fallback(scores, Some(m)),
    }
}
