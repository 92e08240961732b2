//! Class-agnostic boundary scoring and candidate selection.
//!
//! Every frame `t` gets a score from the correlation of a `w_b x w_b`
//! similarity matrix (built from Jensen-Shannon divergences between the
//! probability rows around `t`) with a fixed block template. Candidates are
//! then picked greedily with non-maximum suppression.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{check_window, BoundaryScoreSeries, CandidateSet, Config, ProbabilitySequence, Transcript};

/// Below this many frames scoring runs on the calling thread.
const PARALLEL_MIN_FRAMES: usize = 4096;

/// Jensen-Shannon divergence with base-2 logarithms, in `[0, 1]`.
///
/// `0 * log(0 / x)` terms contribute nothing. The result is bitwise
/// symmetric in its arguments.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut sum = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = (a + b) * 0.5;
        let ta = if a > 0.0 { a * (a / m).log2() } else { 0.0 };
        let tb = if b > 0.0 { b * (b / m).log2() } else { 0.0 };
        sum += ta + tb;
    }
    (0.5 * sum).clamp(0.0, 1.0)
}

/// `1 - 2 JS(p, q)`, in `[-1, 1]`.
pub fn js_similarity(p: &[f64], q: &[f64]) -> f64 {
    1.0 - 2.0 * js_divergence(p, q)
}

/// Clamped global position (0-based) of window slot `slot` (0-based) for a
/// window of `size` centered on 0-based position `center`.
#[inline]
pub(crate) fn window_index(center: usize, slot: usize, size: usize, frames: usize) -> usize {
    let pos = center as isize - (size / 2) as isize + slot as isize;
    pos.clamp(0, frames as isize - 1) as usize
}

/// Square pairwise similarity matrix of one local window.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Similarity matrix of the window of size `window` centered on 1-based
/// frame `center`. Window slots beyond either end of the sequence repeat the
/// edge frame.
pub fn pairwise_similarity(sequence: &ProbabilitySequence, center: usize, window: usize) -> Result<SimilarityMatrix> {
    let frames = sequence.frames();
    if center < 1 || center > frames {
        return Err(Error::FrameOutOfRange { frame: center, frames });
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!("window must be odd, got {window}")));
    }
    let rows: Vec<&[f64]> =
        (0..window).map(|slot| sequence.row(window_index(center - 1, slot, window, frames))).collect();
    let mut values = vec![0.0; window * window];
    for i in 0..window {
        for j in 0..window {
            values[i * window + j] = js_similarity(rows[i], rows[j]);
        }
    }
    Ok(SimilarityMatrix { size: window, values })
}

/// `+1` on the two diagonal blocks, `-1` on the off-diagonal blocks and `0`
/// on the center row and column.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTemplate {
    size: usize,
    values: Vec<f64>,
}

impl BoundaryTemplate {
    pub fn new(size: usize) -> Result<Self> {
        check_window("boundary_window", size)?;
        let center = size / 2;
        let sign = |i: usize| (i as isize - center as isize).signum() as f64;
        let mut values = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                values.push(sign(i) * sign(j));
            }
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Correlation with `gamma`, normalized by the full template area.
    pub fn correlate(&self, gamma: &SimilarityMatrix) -> f64 {
        assert_eq!(gamma.size, self.size, "template and similarity sizes differ");
        let mut sum = 0.0;
        for (w, g) in self.values.iter().zip(&gamma.values) {
            sum += w * g;
        }
        sum / (self.size * self.size) as f64
    }
}

pub fn boundary_template(size: usize) -> Result<BoundaryTemplate> {
    BoundaryTemplate::new(size)
}

/// Boundary score of every frame.
///
/// Divergences are computed once per frame pair within the window span and
/// shared between overlapping windows; the result is identical to calling
/// [`pairwise_similarity`] and [`BoundaryTemplate::correlate`] per frame.
pub fn score_boundaries(sequence: &ProbabilitySequence, config: &Config) -> Result<BoundaryScoreSeries> {
    let template = BoundaryTemplate::new(config.boundary_window)?;
    let w = template.size();
    let frames = sequence.frames();
    let span = w - 1;

    // band[u * span + d - 1] = JS(p_u, p_{u+d})
    let band_row = |u: usize| -> Vec<f64> {
        (1..=span)
            .map(|d| if u + d < frames { js_divergence(sequence.row(u), sequence.row(u + d)) } else { 0.0 })
            .collect()
    };
    let band: Vec<f64> = if frames >= PARALLEL_MIN_FRAMES {
        (0..frames).into_par_iter().flat_map_iter(band_row).collect()
    } else {
        (0..frames).flat_map(band_row).collect()
    };
    let js = |a: usize, b: usize| -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if lo == hi {
            0.0
        } else {
            band[lo * span + (hi - lo - 1)]
        }
    };

    let norm = (w * w) as f64;
    let score_at = |t: usize| -> f64 {
        let idx: Vec<usize> = (0..w).map(|slot| window_index(t, slot, w, frames)).collect();
        let mut sum = 0.0;
        for i in 0..w {
            for j in 0..w {
                let g = 1.0 - 2.0 * js(idx[i], idx[j]);
                sum += template.get(i, j) * g;
            }
        }
        sum / norm
    };

    let scores = if frames >= PARALLEL_MIN_FRAMES {
        (0..frames).into_par_iter().map(score_at).collect()
    } else {
        (0..frames).map(score_at).collect()
    };
    Ok(BoundaryScoreSeries::new(scores))
}

/// Greedy non-maximum suppression over frames `2..=T`.
///
/// Picks the highest-scoring valid frame, invalidates every frame within
/// `radius` of it (inclusive), and repeats until `cap` frames are picked or
/// nothing valid remains. Equal scores go to the later frame. Returns
/// 1-based frames in selection order.
pub fn greedy_suppression(scores: &[f64], radius: usize, cap: usize) -> Vec<usize> {
    let frames = scores.len();
    if frames < 2 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (1..frames).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));

    let mut valid = vec![true; frames];
    valid[0] = false;
    let mut picked = Vec::with_capacity(cap.min(frames));
    for idx in order {
        if picked.len() == cap {
            break;
        }
        if !valid[idx] {
            continue;
        }
        picked.push(idx + 1);
        let lo = idx.saturating_sub(radius);
        let hi = (idx + radius).min(frames - 1);
        valid[lo..=hi].iter_mut().for_each(|v| *v = false);
    }
    picked
}

/// Suppression radius `floor(mu * T / M)`.
pub fn suppression_radius(frames: usize, actions: usize, fraction: f64) -> usize {
    (fraction * frames as f64 / actions as f64).floor() as usize
}

/// Selects up to `lambda (M - 1)` candidate boundaries.
pub fn select_candidates(
    scores: &BoundaryScoreSeries,
    transcript: &Transcript,
    config: &Config,
) -> Result<CandidateSet> {
    let cap = config.candidate_multiplier * transcript.num_transitions();
    select_with_cap(scores, transcript, config, cap)
}

pub(crate) fn select_with_cap(
    scores: &BoundaryScoreSeries,
    transcript: &Transcript,
    config: &Config,
    cap: usize,
) -> Result<CandidateSet> {
    if transcript.len() < 2 {
        return Err(Error::NoTransition);
    }
    let frames = scores.len();
    if frames < 2 {
        return Err(Error::EmptyCandidates { frames });
    }
    let radius = suppression_radius(frames, transcript.len(), config.suppression_fraction);
    let mut picked = greedy_suppression(scores.scores(), radius, cap);
    picked.sort_unstable();
    CandidateSet::new(picked, radius, frames)
}
