//! Transition scoring and drop-allowed alignment.
//!
//! Each candidate boundary is scored against every transition of the
//! transcript with a `2 x w_a` template, the class-agnostic score of the
//! candidate is added on top, and a dynamic program picks exactly `M - 1`
//! candidates (in order) maximizing the total score. Surplus candidates are
//! matched to an empty symbol and dropped.

use crate::boundary::window_index;
use crate::error::{Error, Result};
use crate::model::{
    check_window, AlignmentResult, BoundaryScoreSeries, CandidateSet, ClassId, Config, ProbabilitySequence,
    PseudoLabels, Transcript, TransitionScoreMatrix,
};

/// Row 0 weighs the outgoing class (`+1` before the center, `-1` after),
/// row 1 the incoming class (mirrored). The center column is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTemplate {
    size: usize,
    values: Vec<f64>,
}

impl TransitionTemplate {
    pub fn new(size: usize) -> Result<Self> {
        check_window("transition_window", size)?;
        let center = size / 2;
        let outgoing: Vec<f64> = (0..size).map(|j| (center as isize - j as isize).signum() as f64).collect();
        let incoming: Vec<f64> = outgoing.iter().map(|v| -v).collect();
        Ok(Self { size, values: [outgoing, incoming].concat() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }
}

pub fn transition_template(size: usize) -> Result<TransitionTemplate> {
    TransitionTemplate::new(size)
}

/// `V^a[k, r]`: correlation of the template with the probabilities of the
/// outgoing and incoming class of transition `r` around candidate `k`.
pub fn score_transitions(
    sequence: &ProbabilitySequence,
    transcript: &Transcript,
    candidates: &CandidateSet,
    config: &Config,
) -> Result<TransitionScoreMatrix> {
    if transcript.len() < 2 {
        return Err(Error::NoTransition);
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates { frames: sequence.frames() });
    }
    transcript.check_classes(sequence.classes())?;
    let frames = sequence.frames();
    if let Some(&b) = candidates.timestamps().iter().find(|&&b| b > frames) {
        return Err(Error::FrameOutOfRange { frame: b, frames });
    }
    let template = TransitionTemplate::new(config.transition_window)?;
    let w = template.size();
    let norm = (2 * w) as f64;
    let transitions = transcript.transitions();

    let mut values = Vec::with_capacity(candidates.len() * transitions.len());
    for &b in candidates.timestamps() {
        let window: Vec<usize> = (0..w).map(|slot| window_index(b - 1, slot, w, frames)).collect();
        for &(from, to) in &transitions {
            let mut sum = 0.0;
            for (i, class) in [from, to].into_iter().enumerate() {
                for (weight, &pos) in template.row(i).iter().zip(&window) {
                    sum += weight * sequence.prob(pos, class);
                }
            }
            values.push(sum / norm);
        }
    }
    TransitionScoreMatrix::new(values, transitions.len(), candidates.clone())
}

/// `V[k, r] = V^a[k, r] + v^b[b_k]`.
pub fn combine_scores(
    transition: &TransitionScoreMatrix,
    boundary: &BoundaryScoreSeries,
    candidates: &CandidateSet,
) -> Result<TransitionScoreMatrix> {
    if transition.candidates() != candidates {
        return Err(Error::ShapeMismatch("score matrix was built for a different candidate set".into()));
    }
    if let Some(&b) = candidates.timestamps().iter().find(|&&b| b > boundary.len()) {
        return Err(Error::ShapeMismatch(format!("candidate {b} beyond the {} boundary scores", boundary.len())));
    }
    let cols = transition.cols();
    let values = transition
        .values()
        .chunks(cols.max(1))
        .zip(candidates.timestamps())
        .flat_map(|(row, &b)| {
            let vb = boundary.at(b);
            row.iter().map(move |v| v + vb)
        })
        .collect();
    TransitionScoreMatrix::new(values, cols, candidates.clone())
}

/// Expanded cost matrix over `[phi, R_1, phi, R_2, ..., R_{M-1}, phi]`.
///
/// Columns are 0-based here: even columns are the empty symbol (cost 0),
/// odd column `2r + 1` is transition `r` with cost `-V[k, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
    masked: Vec<bool>,
    candidates: CandidateSet,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transitions(&self) -> usize {
        self.cols / 2
    }

    /// Raw cost of aligning candidate `k` with symbol `c`.
    pub fn cost(&self, k: usize, c: usize) -> f64 {
        self.costs[k * self.cols + c]
    }

    /// Whether `(k, c)` is forced to `+inf` when the cumulative matrix is
    /// initialized.
    pub fn is_masked(&self, k: usize, c: usize) -> bool {
        self.masked[k * self.cols + c]
    }

    /// Initial cumulative value of a cell of the first row or first two
    /// columns.
    pub fn initial(&self, k: usize, c: usize) -> f64 {
        if self.is_masked(k, c) {
            f64::INFINITY
        } else {
            self.cost(k, c)
        }
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }
}

pub fn build_cost_matrix(scores: &TransitionScoreMatrix) -> Result<CostMatrix> {
    let rows = scores.rows();
    let transitions = scores.cols();
    if transitions == 0 {
        return Err(Error::NoTransition);
    }
    if rows < transitions {
        return Err(Error::InfeasibleAlignment { candidates: rows, transitions });
    }
    let cols = 2 * transitions + 1;
    let drops = rows - transitions;
    let mut costs = vec![0.0; rows * cols];
    let mut masked = vec![false; rows * cols];
    for k in 0..rows {
        for r in 0..transitions {
            costs[k * cols + 2 * r + 1] = -scores.get(k, r);
        }
        // first column: at most `drops` leading candidates can be dropped
        masked[k * cols] = k >= drops;
        // second column: the first transition leaves room for the others
        masked[k * cols + 1] = k > drops;
    }
    masked[2..cols].fill(true);
    Ok(CostMatrix { rows, cols, costs, masked, candidates: scores.candidates().clone() })
}

/// Minimum-cost monotone matching of all transitions to candidates.
///
/// When two predecessors tie, the path through the empty symbol wins, both
/// in the forward pass and while backtracking. Among equal-cost matchings
/// this keeps the later candidates dropped.
pub fn align_transitions(cost: &CostMatrix) -> Result<AlignmentResult> {
    let rows = cost.rows();
    let cols = cost.cols();
    let transitions = cost.transitions();
    if rows < transitions {
        return Err(Error::InfeasibleAlignment { candidates: rows, transitions });
    }

    let mut acc = vec![f64::INFINITY; rows * cols];
    for k in 0..rows {
        acc[k * cols] = cost.initial(k, 0);
        acc[k * cols + 1] = cost.initial(k, 1);
    }
    for (c, slot) in acc.iter_mut().enumerate().take(cols).skip(2) {
        *slot = cost.initial(0, c);
    }
    for k in 1..rows {
        let (prev, cur) = acc.split_at_mut(k * cols);
        let prev = &prev[(k - 1) * cols..];
        for c in 2..cols {
            let best = if c % 2 == 0 { prev[c].min(prev[c - 1]) } else { prev[c - 1].min(prev[c - 2]) };
            cur[c] = cost.cost(k, c) + best;
        }
    }

    let last = &acc[(rows - 1) * cols..];
    let total = last[cols - 1].min(last[cols - 2]);
    if !total.is_finite() {
        return Err(Error::InfeasibleAlignment { candidates: rows, transitions });
    }

    let mut matched = Vec::with_capacity(transitions);
    let mut next = cols - 1;
    for k in (0..rows).rev() {
        let row = &acc[k * cols..(k + 1) * cols];
        // `next` is the column used by row k + 1 (or the virtual end).
        let (drop_col, match_col) =
            if next.is_multiple_of(2) { (next, next.checked_sub(1)) } else { (next - 1, next.checked_sub(2)) };
        let col = match match_col {
            Some(m) if row[m] < row[drop_col] => m,
            _ => drop_col,
        };
        if col % 2 == 1 {
            matched.push(k);
        }
        next = col;
    }
    matched.reverse();
    debug_assert_eq!(matched.len(), transitions);

    let boundaries = matched.iter().map(|&k| cost.candidates().timestamps()[k]).collect();
    Ok(AlignmentResult { boundaries, cost: total, matched })
}

/// Assigns the transcript actions to the intervals between `boundaries`.
/// A boundary frame starts the incoming segment.
pub fn emit_pseudo_labels(boundaries: &[usize], transcript: &Transcript, frames: usize) -> Result<PseudoLabels> {
    if boundaries.len() != transcript.num_transitions() {
        return Err(Error::InvalidLabels(format!(
            "{} boundaries for {} transitions",
            boundaries.len(),
            transcript.num_transitions()
        )));
    }
    if let Some(&b) = boundaries.iter().find(|&&b| b < 2 || b > frames) {
        return Err(Error::FrameOutOfRange { frame: b, frames });
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidLabels("boundaries must be strictly increasing".into()));
    }
    let mut labels: Vec<ClassId> = Vec::with_capacity(frames);
    let mut start = 1;
    for (r, &action) in transcript.actions().iter().enumerate() {
        let end = boundaries.get(r).copied().unwrap_or(frames + 1);
        labels.extend(std::iter::repeat_n(action, end - start));
        start = end;
    }
    PseudoLabels::new(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scores(rows: &[&[f64]]) -> TransitionScoreMatrix {
        TransitionScoreMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn template_rows() {
        let t = transition_template(3).unwrap();
        assert_eq!(t.row(0), &[1.0, 0.0, -1.0]);
        assert_eq!(t.row(1), &[-1.0, 0.0, 1.0]);
        let t = transition_template(7).unwrap();
        assert_eq!(t.row(0), &[1.0, 1.0, 1.0, 0.0, -1.0, -1.0, -1.0]);
        assert_eq!(t.row(1), &[-1.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(t.row(0).iter().sum::<f64>(), 0.0);
        assert!(transition_template(8).is_err());
    }

    fn two_segment(frames: usize, at: usize, first: usize, second: usize, classes: usize) -> ProbabilitySequence {
        let mut values = vec![0.0; frames * classes];
        for t in 0..frames {
            let c = if t + 1 < at { first } else { second };
            values[t * classes + c - 1] = 1.0;
        }
        ProbabilitySequence::new(frames, classes, values).unwrap()
    }

    #[test]
    fn ideal_and_reversed_transition() {
        let s = two_segment(100, 50, 1, 2, 3);
        let cands = CandidateSet::new(vec![50], 0, 100).unwrap();
        let forward = Transcript::new(vec![1, 2]).unwrap();
        let v = score_transitions(&s, &forward, &cands, &Config::default()).unwrap();
        assert_abs_diff_eq!(v.get(0, 0), 30.0 / 62.0, epsilon = 1e-12);
        let backward = Transcript::new(vec![2, 1]).unwrap();
        let v = score_transitions(&s, &backward, &cands, &Config::default()).unwrap();
        assert_abs_diff_eq!(v.get(0, 0), -30.0 / 62.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_probabilities_score_zero() {
        let s = ProbabilitySequence::uniform(80, 4).unwrap();
        let cands = CandidateSet::new(vec![2, 40, 80], 0, 80).unwrap();
        let t = Transcript::new(vec![1, 3, 2]).unwrap();
        let v = score_transitions(&s, &t, &cands, &Config::default()).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fusion_adds_candidate_score_to_whole_row() {
        let cands = CandidateSet::new(vec![2, 3], 0, 3).unwrap();
        let va = TransitionScoreMatrix::new(vec![0.0, 0.0, 0.3, 0.0], 2, cands.clone()).unwrap();
        let zero = BoundaryScoreSeries::new(vec![0.0; 3]);
        assert_eq!(combine_scores(&va, &zero, &cands).unwrap(), va);
        let vb = BoundaryScoreSeries::new(vec![0.0, 0.5, 0.2]);
        let v = combine_scores(&va, &vb, &cands).unwrap();
        assert_eq!(v.values(), &[0.5, 0.5, 0.5, 0.2]);
        let other = CandidateSet::new(vec![2], 0, 3).unwrap();
        assert!(combine_scores(&va, &vb, &other).is_err());
    }

    #[test]
    fn cost_matrix_shape_and_mask() {
        let row: &[f64] = &[0.1, 0.2, 0.3];
        let v = scores(&[row; 5]);
        let cost = build_cost_matrix(&v).unwrap();
        assert_eq!((cost.rows(), cost.cols()), (5, 7));
        assert_eq!(cost.cost(0, 1), -0.1);
        assert_eq!(cost.cost(4, 5), -0.3);
        assert_eq!(cost.cost(2, 2), 0.0);
        // K - (M - 1) = 2 drops allowed
        let col0: Vec<bool> = (0..5).map(|k| cost.is_masked(k, 0)).collect();
        assert_eq!(col0, vec![false, false, true, true, true]);
        let col1: Vec<bool> = (0..5).map(|k| cost.is_masked(k, 1)).collect();
        assert_eq!(col1, vec![false, false, false, true, true]);
        assert!((2..7).all(|c| cost.is_masked(0, c)));
    }

    #[test]
    fn cost_matrix_without_drops() {
        let v = scores(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let cost = build_cost_matrix(&v).unwrap();
        assert!((0..2).all(|k| cost.is_masked(k, 0)));
        assert!(!cost.is_masked(0, 1));
        assert!(cost.is_masked(1, 1));
        for k in 0..2 {
            for c in 0..5 {
                if !cost.is_masked(k, c) {
                    assert_eq!(cost.initial(k, c), 0.0);
                }
            }
        }
        assert!(matches!(
            build_cost_matrix(&scores(&[&[0.0, 0.0]])),
            Err(Error::InfeasibleAlignment { candidates: 1, transitions: 2 })
        ));
    }

    #[test]
    fn single_transition_picks_best_candidate() {
        let v = scores(&[&[0.2], &[0.9], &[0.5]]);
        let a = align_transitions(&build_cost_matrix(&v).unwrap()).unwrap();
        assert_eq!(a.matched, vec![1]);
        assert_eq!(a.boundaries, vec![3]);
        assert_eq!(a.cost, -0.9);
    }

    #[test]
    fn no_drops_matches_in_order() {
        let v = scores(&[&[0.4, 0.1], &[0.3, 0.6]]);
        let a = align_transitions(&build_cost_matrix(&v).unwrap()).unwrap();
        assert_eq!(a.matched, vec![0, 1]);
        assert_eq!(a.cost, -(0.4 + 0.6));
    }

    #[test]
    fn four_candidates_two_transitions() {
        let v = scores(&[&[0.9, 0.1], &[0.8, 0.7], &[0.2, 0.9], &[0.1, 0.2]]);
        let a = align_transitions(&build_cost_matrix(&v).unwrap()).unwrap();
        assert_eq!(a.matched, vec![0, 2]);
        assert_abs_diff_eq!(a.cost, -1.8, epsilon = 1e-12);
    }

    #[test]
    fn ties_keep_later_candidates_dropped() {
        let v = scores(&[&[0.5], &[0.5], &[0.5]]);
        let a = align_transitions(&build_cost_matrix(&v).unwrap()).unwrap();
        assert_eq!(a.matched, vec![0]);
    }

    #[test]
    fn labels_from_boundaries() {
        let t = Transcript::new(vec![1, 2, 3]).unwrap();
        let labels = emit_pseudo_labels(&[3, 5], &t, 6).unwrap();
        assert_eq!(labels.labels(), &[1, 1, 2, 2, 3, 3]);
        let t = Transcript::new(vec![1, 2]).unwrap();
        assert_eq!(emit_pseudo_labels(&[2], &t, 4).unwrap().labels(), &[1, 2, 2, 2]);
        let t = Transcript::new(vec![4]).unwrap();
        assert_eq!(emit_pseudo_labels(&[], &t, 3).unwrap().labels(), &[4, 4, 4]);
    }

    #[test]
    fn labels_reject_bad_boundaries() {
        let t = Transcript::new(vec![1, 2, 3]).unwrap();
        assert!(emit_pseudo_labels(&[3, 3], &t, 6).is_err());
        assert!(emit_pseudo_labels(&[4, 3], &t, 6).is_err());
        assert!(emit_pseudo_labels(&[1, 3], &t, 6).is_err());
        assert!(emit_pseudo_labels(&[3], &t, 6).is_err());
        assert!(emit_pseudo_labels(&[3, 7], &t, 6).is_err());
    }
}
