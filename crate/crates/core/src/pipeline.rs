//! End-to-end pseudo-label generation for one video.

use serde::{Deserialize, Serialize};

use crate::align::{align_transitions, build_cost_matrix, combine_scores, emit_pseudo_labels, score_transitions};
use crate::boundary::{score_boundaries, select_candidates};
use crate::error::{Error, Result};
use crate::model::{ClassId, Config, ProbabilitySequence, PseudoLabels, Transcript};

/// Which score matrix feeds the alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// Transition scores plus the candidate's class-agnostic score.
    #[default]
    Combined,
    /// Transition scores alone.
    TransitionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// Single-action transcript, every frame gets that action.
    SingleAction,
    Aligned,
    /// Too few candidates survived suppression; labels are uniform.
    UniformFallback,
}

/// Per-video record of how the labels were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub outcome: Outcome,
    /// Candidate timestamps after suppression (1-based, ascending).
    pub candidates: Vec<usize>,
    /// Chosen transition boundaries (1-based).
    pub boundaries: Vec<usize>,
    /// Alignment cost; absent when no alignment ran.
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub labels: PseudoLabels,
    pub diagnostics: Diagnostics,
}

/// Uniform split into `M` segments of `floor(T / M)` frames, remainder to the
/// last segment.
pub fn uniform_segmentation(frames: usize, transcript: &Transcript) -> Result<PseudoLabels> {
    let m = transcript.len();
    if frames < m {
        return Err(Error::InfeasibleAlignment { candidates: frames.saturating_sub(1), transitions: m - 1 });
    }
    let size = frames / m;
    let mut labels: Vec<ClassId> = Vec::with_capacity(frames);
    for (r, &a) in transcript.actions().iter().enumerate() {
        let len = if r + 1 == m { frames - size * (m - 1) } else { size };
        labels.extend(std::iter::repeat_n(a, len));
    }
    PseudoLabels::new(labels)
}

/// Boundary scoring, candidate selection, transition scoring, fusion and
/// alignment, followed by label assignment.
pub fn atba_pipeline(
    sequence: &ProbabilitySequence,
    transcript: &Transcript,
    config: &Config,
) -> Result<PipelineOutput> {
    run_pipeline(sequence, transcript, config, Fusion::Combined)
}

pub fn run_pipeline(
    sequence: &ProbabilitySequence,
    transcript: &Transcript,
    config: &Config,
    fusion: Fusion,
) -> Result<PipelineOutput> {
    config.validate()?;
    transcript.check_classes(sequence.classes())?;
    let frames = sequence.frames();
    if transcript.len() == 1 {
        return Ok(PipelineOutput {
            labels: PseudoLabels::constant(transcript.actions()[0], frames)?,
            diagnostics: Diagnostics {
                outcome: Outcome::SingleAction,
                candidates: Vec::new(),
                boundaries: Vec::new(),
                cost: None,
            },
        });
    }

    let boundary = score_boundaries(sequence, config)?;
    let candidates = match select_candidates(&boundary, transcript, config) {
        Ok(c) => c,
        Err(Error::EmptyCandidates { .. }) => return fallback(frames, transcript, Vec::new()),
        Err(e) => return Err(e),
    };
    if candidates.len() < transcript.num_transitions() {
        log::warn!(
            "{} candidates for {} transitions, using uniform segmentation",
            candidates.len(),
            transcript.num_transitions()
        );
        return fallback(frames, transcript, candidates.timestamps().to_vec());
    }

    let transition = score_transitions(sequence, transcript, &candidates, config)?;
    let scores = match fusion {
        Fusion::Combined => combine_scores(&transition, &boundary, &candidates)?,
        Fusion::TransitionOnly => transition,
    };
    let alignment = align_transitions(&build_cost_matrix(&scores)?)?;
    let labels = emit_pseudo_labels(&alignment.boundaries, transcript, frames)?;
    Ok(PipelineOutput {
        labels,
        diagnostics: Diagnostics {
            outcome: Outcome::Aligned,
            candidates: candidates.timestamps().to_vec(),
            boundaries: alignment.boundaries,
            cost: Some(alignment.cost),
        },
    })
}

pub(crate) fn fallback(frames: usize, transcript: &Transcript, candidates: Vec<usize>) -> Result<PipelineOutput> {
    let labels = uniform_segmentation(frames, transcript)?;
    let boundaries = labels.to_segmentation().segments().iter().skip(1).map(|s| s.start).collect();
    Ok(PipelineOutput {
        labels,
        diagnostics: Diagnostics { outcome: Outcome::UniformFallback, candidates, boundaries, cost: None },
    })
}
