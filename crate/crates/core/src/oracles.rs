//! Slow reference implementations.
//!
//! These exist to check the fast path and to reproduce baselines, so they
//! favour obviousness over speed and refuse inputs beyond their guards
//! instead of truncating.

use crate::align::emit_pseudo_labels;
use crate::boundary::{score_boundaries, select_with_cap};
use crate::error::{Error, Result};
use crate::model::{
    AlignmentResult, ClassId, Config, ProbabilitySequence, PseudoLabels, Transcript, TransitionScoreMatrix,
};
use crate::pipeline::{fallback, Diagnostics, Outcome, PipelineOutput};

/// Largest number of subsets [`brute_force_alignment`] will enumerate.
pub const MAX_SUBSETS: u128 = 1_000_000;

/// Default frame guard of [`exhaustive_segmentation_aligner`].
pub const MAX_EXHAUSTIVE_FRAMES: usize = 2000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact minimizer of the alignment cost over every strictly increasing
/// choice of `M - 1` candidates.
///
/// The cost of a choice is summed over transitions in order. Among choices of
/// equal cost the one dropping later candidates wins, i.e. the smallest index
/// list when compared from its last element backward.
pub fn brute_force_alignment(scores: &TransitionScoreMatrix) -> Result<AlignmentResult> {
    brute_force_with_ties(scores).map(|(result, _)| result)
}

/// [`brute_force_alignment`] plus the number of choices attaining the
/// minimum cost.
pub fn brute_force_with_ties(scores: &TransitionScoreMatrix) -> Result<(AlignmentResult, usize)> {
    let k = scores.rows();
    let m1 = scores.cols();
    if m1 == 0 {
        return Err(Error::NoTransition);
    }
    if k < m1 {
        return Err(Error::InfeasibleAlignment { candidates: k, transitions: m1 });
    }
    let count = binomial(k, m1);
    if count > MAX_SUBSETS {
        return Err(Error::OracleTooLarge(format!("C({k}, {m1}) = {count} subsets exceeds {MAX_SUBSETS}")));
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut ties = 0;
    let mut subset: Vec<usize> = (0..m1).collect();
    loop {
        let cost = subset.iter().enumerate().fold(0.0, |acc, (r, &row)| acc + -scores.get(row, r));
        match &best {
            Some((c, _)) if cost > *c => {}
            Some((c, s)) if cost == *c => {
                ties += 1;
                if reversed_less(&subset, s) {
                    best = Some((cost, subset.clone()));
                }
            }
            _ => {
                ties = 1;
                best = Some((cost, subset.clone()));
            }
        }
        if !next_combination(&mut subset, k) {
            break;
        }
    }
    let (cost, matched) = best.expect("at least one subset");
    let boundaries = matched.iter().map(|&row| scores.candidates().timestamps()[row]).collect();
    Ok((AlignmentResult { boundaries, cost, matched }, ties))
}

fn reversed_less(a: &[usize], b: &[usize]) -> bool {
    a.iter().rev().lt(b.iter().rev())
}

/// Advances `subset` to the next strictly increasing tuple over `0..n` in
/// lexicographic order.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Sum of natural-log probabilities of `labels` under `sequence`.
pub fn log_likelihood(sequence: &ProbabilitySequence, labels: &PseudoLabels) -> f64 {
    labels.labels().iter().enumerate().map(|(t, &c)| sequence.prob(t, c).ln()).sum()
}

/// Most likely labeling consistent with the transcript, every segment at
/// least one frame long, found by the `O(T^2 M)` segment dynamic program.
/// No length model.
pub fn exhaustive_segmentation_aligner(
    sequence: &ProbabilitySequence,
    transcript: &Transcript,
) -> Result<PseudoLabels> {
    exhaustive_segmentation_aligner_with_guard(sequence, transcript, MAX_EXHAUSTIVE_FRAMES)
}

pub fn exhaustive_segmentation_aligner_with_guard(
    sequence: &ProbabilitySequence,
    transcript: &Transcript,
    max_frames: usize,
) -> Result<PseudoLabels> {
    transcript.check_classes(sequence.classes())?;
    let frames = sequence.frames();
    let actions = transcript.actions();
    let m = actions.len();
    if m == 1 {
        return PseudoLabels::constant(actions[0], frames);
    }
    if frames > max_frames {
        return Err(Error::OracleTooLarge(format!("{frames} frames exceeds the guard of {max_frames}")));
    }
    if frames < m {
        return Err(Error::InfeasibleAlignment { candidates: frames.saturating_sub(1), transitions: m - 1 });
    }

    // best[s][t]: segments 0..=s cover frames 0..t (exclusive end)
    let width = frames + 1;
    let mut best = vec![f64::NEG_INFINITY; m * width];
    let mut start = vec![0usize; m * width];
    let mut acc = 0.0;
    for (t, slot) in best.iter_mut().enumerate().take(width).skip(1) {
        acc += sequence.prob(t - 1, actions[0]).ln();
        *slot = acc;
    }
    for s in 1..m {
        let class = actions[s];
        for end in s + 1..=frames {
            let mut seg = 0.0;
            let mut best_val = f64::NEG_INFINITY;
            let mut best_start = end - 1;
            // segment s spans [begin, end)
            for begin in (s..end).rev() {
                seg += sequence.prob(begin, class).ln();
                let val = best[(s - 1) * width + begin] + seg;
                if val > best_val {
                    best_val = val;
                    best_start = begin;
                }
            }
            best[s * width + end] = best_val;
            start[s * width + end] = best_start;
        }
    }

    let mut labels: Vec<ClassId> = vec![0; frames];
    let mut end = frames;
    for s in (1..m).rev() {
        let begin = start[s * width + end];
        labels[begin..end].iter_mut().for_each(|l| *l = actions[s]);
        end = begin;
    }
    labels[..end].iter_mut().for_each(|l| *l = actions[0]);
    PseudoLabels::new(labels)
}

/// Boundaries taken straight from class-agnostic scores: the top `M - 1`
/// frames under the same suppression rule, no transition alignment.
pub fn class_agnostic_baseline(
    sequence: &ProbabilitySequence,
    transcript: &Transcript,
    config: &Config,
) -> Result<PipelineOutput> {
    config.validate()?;
    transcript.check_classes(sequence.classes())?;
    let frames = sequence.frames();
    if transcript.len() < 2 {
        return Err(Error::NoTransition);
    }
    let scores = score_boundaries(sequence, config)?;
    let candidates = match select_with_cap(&scores, transcript, config, transcript.num_transitions()) {
        Ok(c) => c,
        Err(Error::EmptyCandidates { .. }) => return fallback(frames, transcript, Vec::new()),
        Err(e) => return Err(e),
    };
    if candidates.len() < transcript.num_transitions() {
        return fallback(frames, transcript, candidates.timestamps().to_vec());
    }
    let boundaries = candidates.timestamps().to_vec();
    let labels = emit_pseudo_labels(&boundaries, transcript, frames)?;
    Ok(PipelineOutput {
        labels,
        diagnostics: Diagnostics { outcome: Outcome::Aligned, candidates: boundaries.clone(), boundaries, cost: None },
    })
}
