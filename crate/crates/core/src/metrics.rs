//! Evaluation: token edit distance with alignment, pooled word error rate,
//! detected-OOV counting, real-time factor, and report emission.

use serde::Serialize;

use crate::corpus::OOV_ID;
use crate::error::{Error, Result};

/// Frame shift of the acoustic front end; frames map to seconds with this.
pub const FRAME_SHIFT_SECONDS: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EditOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

/// Edit distance plus its deterministic alignment. Alignment entries carry
/// (op, ref index, hyp index); insertions have no ref index, deletions no
/// hyp index.
#[derive(Clone, Debug)]
pub struct EditStats {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub alignment: Vec<(EditOp, Option<usize>, Option<usize>)>,
}

/// Levenshtein distance over tokens with unit costs. Ties in the backtrace
/// prefer substitution over insertion over deletion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditStats {
    let (m, n) = (reference.len(), hypothesis.len());
    let width = n + 1;
    let mut dist = vec![0usize; (m + 1) * width];
    let mut from = vec![EditOp::Match; (m + 1) * width];
    for j in 0..=n {
        dist[j] = j;
        if j > 0 {
            from[j] = EditOp::Insert;
        }
    }
    for i in 1..=m {
        dist[i * width] = i;
        from[i * width] = EditOp::Delete;
        for j in 1..=n {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = dist[(i - 1) * width + j - 1] + usize::from(!same);
            let ins = dist[i * width + j - 1] + 1;
            let del = dist[(i - 1) * width + j] + 1;
            // preference order on ties: substitution/match, insert, delete
            let (best, op) = if diag <= ins && diag <= del {
                (diag, if same { EditOp::Match } else { EditOp::Substitute })
            } else if ins <= del {
                (ins, EditOp::Insert)
            } else {
                (del, EditOp::Delete)
            };
            dist[i * width + j] = best;
            from[i * width + j] = op;
        }
    }

    let mut alignment = Vec::new();
    let (mut i, mut j) = (m, n);
    let (mut subs, mut ins, mut dels) = (0, 0, 0);
    while i > 0 || j > 0 {
        match from[i * width + j] {
            EditOp::Match => {
                alignment.push((EditOp::Match, Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
            }
            EditOp::Substitute => {
                subs += 1;
                alignment.push((EditOp::Substitute, Some(i - 1), Some(j - 1)));
                i -= 1;
                j -= 1;
            }
            EditOp::Insert => {
                ins += 1;
                alignment.push((EditOp::Insert, None, Some(j - 1)));
                j -= 1;
            }
            EditOp::Delete => {
                dels += 1;
                alignment.push((EditOp::Delete, Some(i - 1), None));
                i -= 1;
            }
        }
    }
    alignment.reverse();
    EditStats { distance: dist[m * width + n], substitutions: subs, insertions: ins, deletions: dels, alignment }
}

/// Total OOV-class emissions across raw (pre-resolution) hypotheses.
pub fn count_detected_oov<'a>(hyps: impl IntoIterator<Item = &'a [usize]>) -> usize {
    hyps.into_iter().flat_map(|h| h.iter()).filter(|&&t| t == OOV_ID).count()
}

/// Decoding wall time over audio duration.
pub fn rtf(wall_seconds: f64, audio_seconds: f64) -> Result<f64> {
    if audio_seconds <= 0.0 {
        return Err(Error::data("real-time factor undefined for zero audio duration"));
    }
    Ok(wall_seconds / audio_seconds)
}

pub fn audio_seconds(frames: usize) -> f64 {
    frames as f64 * FRAME_SHIFT_SECONDS
}

/// Everything the scorer needs about one decoded utterance.
#[derive(Clone, Debug)]
pub struct ScoredUtterance {
    pub id: String,
    pub reference: Vec<String>,
    /// Final hypothesis (post-resolution when resolution ran).
    pub hypothesis: Vec<String>,
    /// OOV tokens in the raw hypothesis before any resolution.
    pub oov_detected: usize,
    /// Slots where resolution substituted a character-branch token.
    pub oov_resolved: usize,
    /// Slots where resolution fell back to the OOV marker.
    pub fallbacks: usize,
    /// Hypothesis positions of the non-fallback resolved slots.
    pub resolved_positions: Vec<usize>,
    pub wall_seconds: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct UtteranceEval {
    pub id: String,
    pub ref_words: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub wer: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub system: String,
    pub split: String,
    pub per_utterance: Vec<UtteranceEval>,
    pub total_ref_words: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    /// Pooled: 100 * (S + I + D) / total reference words.
    pub wer: f64,
    pub n_oov_detected: usize,
    pub n_oov_resolved: usize,
    pub n_fallback: usize,
    /// Non-fallback resolved slots whose word exactly matches the aligned
    /// reference word.
    pub n_resolved_correct: usize,
    /// Pooled wall time over pooled audio duration.
    pub rtf: f64,
    /// Invocation parameters echoed by the caller.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "system,split,wer,n_oov_detected,n_oov_resolved,n_fallback,rtf"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.4},{},{},{},{:.6}",
            self.system,
            self.split,
            self.wer,
            self.n_oov_detected,
            self.n_oov_resolved,
            self.n_fallback,
            self.rtf
        )
    }
}

/// Score a decoded corpus against references. Utterances are matched by
/// position; ids must agree pairwise.
pub fn evaluate(
    system: &str,
    split: &str,
    utterances: &[ScoredUtterance],
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut per_utterance = Vec::with_capacity(utterances.len());
    let (mut total_ref, mut subs, mut ins, mut dels) = (0usize, 0, 0, 0);
    let (mut oov_detected, mut oov_resolved, mut fallbacks, mut resolved_correct) =
        (0usize, 0usize, 0usize, 0usize);
    let (mut wall, mut audio) = (0.0f64, 0.0f64);

    for utt in utterances {
        let stats = edit_distance(&utt.reference, &utt.hypothesis);
        let ref_words = utt.reference.len();
        per_utterance.push(UtteranceEval {
            id: utt.id.clone(),
            ref_words,
            substitutions: stats.substitutions,
            insertions: stats.insertions,
            deletions: stats.deletions,
            wer: if ref_words == 0 {
                0.0
            } else {
                100.0 * stats.distance as f64 / ref_words as f64
            },
        });
        total_ref += ref_words;
        subs += stats.substitutions;
        ins += stats.insertions;
        dels += stats.deletions;
        oov_detected += utt.oov_detected;
        oov_resolved += utt.oov_resolved;
        fallbacks += utt.fallbacks;

        // a resolved slot is correct when its hypothesis position aligns as
        // an exact match
        for &(op, _, hyp_idx) in &stats.alignment {
            if op == EditOp::Match {
                if let Some(j) = hyp_idx {
                    if utt.resolved_positions.contains(&j) {
                        resolved_correct += 1;
                    }
                }
            }
        }
        wall += utt.wall_seconds;
        audio += audio_seconds(utt.frames);
    }
    if total_ref == 0 {
        return Err(Error::data("evaluation undefined without reference words"));
    }
    Ok(EvalReport {
        system: system.to_string(),
        split: split.to_string(),
        per_utterance,
        total_ref_words: total_ref,
        substitutions: subs,
        insertions: ins,
        deletions: dels,
        wer: 100.0 * (subs + ins + dels) as f64 / total_ref as f64,
        n_oov_detected: oov_detected,
        n_oov_resolved: oov_resolved,
        n_fallback: fallbacks,
        n_resolved_correct: resolved_correct,
        rtf: if audio > 0.0 { wall / audio } else { 0.0 },
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_strings_have_zero_distance() {
        let s = toks("a b c");
        let e = edit_distance(&s, &s);
        assert_eq!(e.distance, 0);
        assert!(e.alignment.iter().all(|(op, _, _)| *op == EditOp::Match));
    }

    #[test]
    fn single_substitution() {
        let e = edit_distance(&toks("a b c"), &toks("a x c"));
        assert_eq!(e.distance, 1);
        assert_eq!(e.substitutions, 1);
        assert_eq!(e.insertions, 0);
        assert_eq!(e.deletions, 0);
    }

    /// Exponential recursion straight from the definition.
    fn brute_force<T: PartialEq>(a: &[T], b: &[T]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = brute_force(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        let ins = brute_force(a, &b[1..]) + 1;
        let del = brute_force(&a[1..], b) + 1;
        sub.min(ins).min(del)
    }

    #[test]
    fn matches_brute_force_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..300 {
            let len_a = rng.gen_range(0..=8);
            let len_b = rng.gen_range(0..=8);
            let a: Vec<u8> = (0..len_a).map(|_| rng.gen_range(0..3u8)).collect();
            let b: Vec<u8> = (0..len_b).map(|_| rng.gen_range(0..3u8)).collect();
            assert_eq!(edit_distance(&a, &b).distance, brute_force(&a, &b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn swap_exchanges_insertions_and_deletions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a: Vec<u8> = (0..rng.gen_range(0..7)).map(|_| rng.gen_range(0..3u8)).collect();
            let b: Vec<u8> = (0..rng.gen_range(0..7)).map(|_| rng.gen_range(0..3u8)).collect();
            let fwd = edit_distance(&a, &b);
            let rev = edit_distance(&b, &a);
            assert_eq!(fwd.distance, rev.distance);
            assert_eq!(fwd.substitutions, rev.substitutions);
            assert_eq!(fwd.insertions, rev.deletions);
            assert_eq!(fwd.deletions, rev.insertions);
        }
    }

    #[test]
    fn triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| -> Vec<u8> {
                (0..rng.gen_range(0..6)).map(|_| rng.gen_range(0..3u8)).collect()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let ab = edit_distance(&a, &b).distance;
            let bc = edit_distance(&b, &c).distance;
            let ac = edit_distance(&a, &c).distance;
            assert!(ac <= ab + bc);
        }
    }

    #[test]
    fn alignment_counts_are_consistent() {
        let e = edit_distance(&toks("a b c d"), &toks("x b d e"));
        assert_eq!(e.substitutions + e.insertions + e.deletions, e.distance);
        let m = e.alignment.iter().filter(|(op, _, _)| *op == EditOp::Match).count();
        assert_eq!(m + e.substitutions + e.deletions, 4); // ref coverage
        assert_eq!(m + e.substitutions + e.insertions, 4); // hyp coverage
    }

    fn scored(id: &str, reference: &str, hypothesis: &str) -> ScoredUtterance {
        ScoredUtterance {
            id: id.into(),
            reference: reference.split_whitespace().map(String::from).collect(),
            hypothesis: hypothesis.split_whitespace().map(String::from).collect(),
            oov_detected: 0,
            oov_resolved: 0,
            fallbacks: 0,
            resolved_positions: Vec::new(),
            wall_seconds: 0.0,
            frames: 100,
        }
    }

    #[test]
    fn wer_identical_corpora_is_zero() {
        let utts = vec![scored("a", "x y", "x y")];
        let rep = evaluate("sys", "test", &utts, serde_json::Value::Null).unwrap();
        assert_eq!(rep.wer, 0.0);
    }

    #[test]
    fn wer_single_error_over_three_words() {
        let utts = vec![scored("a", "x y z", "x q z")];
        let rep = evaluate("sys", "test", &utts, serde_json::Value::Null).unwrap();
        assert!((rep.wer - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn wer_pools_counts_not_rates() {
        let utts = vec![scored("a", "x", "q"), scored("b", "x y z x y z x y z", "x y z x y z x y z")];
        let rep = evaluate("sys", "test", &utts, serde_json::Value::Null).unwrap();
        // pooled: 1 error over 10 reference words
        assert!((rep.wer - 10.0).abs() < 1e-9);
        // mean of per-utterance rates would be 50.0
        let mean_rate: f64 =
            rep.per_utterance.iter().map(|u| u.wer).sum::<f64>() / rep.per_utterance.len() as f64;
        assert!((mean_rate - 50.0).abs() < 1e-9);
    }

    #[test]
    fn oov_counting() {
        assert_eq!(count_detected_oov([&[3usize, 4][..]]), 0);
        assert_eq!(count_detected_oov([&[3usize, OOV_ID, OOV_ID][..]]), 2);
    }

    #[test]
    fn rtf_basics() {
        assert_eq!(rtf(5.0, 10.0).unwrap(), 0.5);
        assert!(rtf(1.0, 0.0).is_err());
        assert!((audio_seconds(1000) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn resolved_correct_counts_exact_matches() {
        let mut utt = scored("a", "the zyx sat", "the zyx sat");
        utt.oov_detected = 1;
        utt.oov_resolved = 1;
        utt.resolved_positions = vec![1];
        let rep = evaluate("sys", "oov", &[utt], serde_json::Value::Null).unwrap();
        assert_eq!(rep.n_resolved_correct, 1);

        let mut wrong = scored("a", "the zyx sat", "the qqq sat");
        wrong.oov_detected = 1;
        wrong.oov_resolved = 1;
        wrong.resolved_positions = vec![1];
        let rep = evaluate("sys", "oov", &[wrong], serde_json::Value::Null).unwrap();
        assert_eq!(rep.n_resolved_correct, 0);
    }

    #[test]
    fn report_serializes_and_roundtrips_csv_fields() {
        let utts = vec![scored("a", "x y", "x z")];
        let rep = evaluate("mtl+resolve", "test", &utts, serde_json::json!({"beam": 5})).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"wer\""));
        let row = rep.csv_row();
        assert!(row.starts_with("mtl+resolve,test,50.0000,"));
    }
}
