//! Shared domain types.
//!
//! Frames are 1-based and inclusive wherever a frame index leaves this crate
//! (candidate timestamps, segment bounds, file formats). Class indices are
//! 1-based as well; class `c` lives in column `c - 1` of a probability row.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index in `1..=C`.
pub type ClassId = u32;

/// Tolerance on per-frame row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape { expected: usize, found: usize },
    TooFewClasses { classes: usize },
    Empty,
    NonFinite { frame: usize, class: usize },
    OutOfRange { frame: usize, class: usize, value: f64 },
    RowSum { frame: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { expected, found } => {
                write!(f, "expected {expected} values, found {found}")
            }
            Violation::TooFewClasses { classes } => write!(f, "need at least 2 classes, got {classes}"),
            Violation::Empty => write!(f, "sequence has no frames"),
            Violation::NonFinite { frame, class } => {
                write!(f, "frame {frame}, class {class}: non-finite value")
            }
            Violation::OutOfRange { frame, class, value } => {
                write!(f, "frame {frame}, class {class}: {value} outside [0, 1]")
            }
            Violation::RowSum { frame, sum } => write!(f, "frame {frame}: row sums to {sum}"),
        }
    }
}

/// Every invariant violation found in a candidate probability matrix.
/// Frame and class numbers are 1-based.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn check(frames: usize, classes: usize, values: &[f64]) -> Self {
        let mut violations = Vec::new();
        if frames == 0 {
            violations.push(Violation::Empty);
        }
        if classes < 2 {
            violations.push(Violation::TooFewClasses { classes });
        }
        if values.len() != frames * classes {
            violations.push(Violation::Shape { expected: frames * classes, found: values.len() });
            return Self { violations };
        }
        if classes == 0 {
            return Self { violations };
        }
        for (t, row) in values.chunks(classes).enumerate() {
            let mut finite = true;
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    finite = false;
                    violations.push(Violation::NonFinite { frame: t + 1, class: c + 1 });
                } else if !(0.0..=1.0).contains(&v) {
                    violations.push(Violation::OutOfRange { frame: t + 1, class: c + 1, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if finite && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                violations.push(Violation::RowSum { frame: t + 1, sum });
            }
        }
        Self { violations }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// 1-based frames with at least one violation, ascending and deduplicated.
    pub fn frames(&self) -> Vec<usize> {
        let mut frames: Vec<usize> = self
            .violations
            .iter()
            .filter_map(|v| match v {
                Violation::NonFinite { frame, .. }
                | Violation::OutOfRange { frame, .. }
                | Violation::RowSum { frame, .. } => Some(*frame),
                _ => None,
            })
            .collect();
        frames.dedup();
        frames
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        const SHOWN: usize = 5;
        for (i, v) in self.violations.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        if self.violations.len() > SHOWN {
            write!(f, "; ... {} more", self.violations.len() - SHOWN)?;
        }
        Ok(())
    }
}

/// Row-stochastic `T x C` matrix of frame-wise class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilitySequence {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ProbabilitySequence {
    /// Builds a sequence from row-major values, rejecting anything that fails
    /// [`ValidationReport::check`]. Inputs are never renormalized.
    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        let report = ValidationReport::check(frames, classes, &values);
        if !report.passed() {
            return Err(Error::InvalidSequence(report));
        }
        Ok(Self { frames, classes, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if let Some(row) = rows.iter().find(|r| r.len() != classes) {
            return Err(Error::InvalidSequence(ValidationReport {
                violations: vec![Violation::Shape { expected: classes, found: row.len() }],
            }));
        }
        Self::new(rows.len(), classes, rows.concat())
    }

    /// Uniform distribution over `classes` at every frame.
    pub fn uniform(frames: usize, classes: usize) -> Result<Self> {
        Self::new(frames, classes, vec![1.0 / classes as f64; frames * classes])
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport::check(self.frames, self.classes, &self.values)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row at 0-based position `index`.
    pub fn row(&self, index: usize) -> &[f64] {
        &self.values[index * self.classes..(index + 1) * self.classes]
    }

    /// Probability of `class` (1-based) at 0-based frame position `index`.
    pub fn prob(&self, index: usize, class: ClassId) -> f64 {
        self.values[index * self.classes + class as usize - 1]
    }

    /// Frame-wise argmax, ties resolved to the lowest class index.
    pub fn argmax_labels(&self) -> PseudoLabels {
        let labels = self
            .values
            .chunks(self.classes)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as ClassId + 1
            })
            .collect();
        PseudoLabels { labels }
    }
}

/// Ordered action list of a video.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transcript {
    actions: Vec<ClassId>,
}

impl Transcript {
    pub fn new(actions: Vec<ClassId>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidTranscript("transcript is empty".into()));
        }
        if let Some(pos) = actions.iter().position(|&a| a == 0) {
            return Err(Error::InvalidTranscript(format!("action {} has class index 0", pos + 1)));
        }
        if let Some(pos) = actions.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::InvalidTranscript(format!(
                "actions {} and {} are both class {}",
                pos + 1,
                pos + 2,
                actions[pos]
            )));
        }
        Ok(Self { actions })
    }

    pub fn actions(&self) -> &[ClassId] {
        &self.actions
    }

    /// Number of actions `M`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.actions.len() - 1
    }

    pub fn transitions(&self) -> Vec<(ClassId, ClassId)> {
        self.actions.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Distinct classes, ascending.
    pub fn class_set(&self) -> Vec<ClassId> {
        let mut set = self.actions.clone();
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.actions.iter().find(|&&a| a as usize > classes) {
            Some(a) => Err(Error::InvalidTranscript(format!("class {a} exceeds class count {classes}"))),
            None => Ok(()),
        }
    }
}

/// Frame-wise class labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PseudoLabels {
    labels: Vec<ClassId>,
}

impl PseudoLabels {
    pub fn new(labels: Vec<ClassId>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidLabels("label vector is empty".into()));
        }
        if let Some(t) = labels.iter().position(|&l| l == 0) {
            return Err(Error::InvalidLabels(format!("frame {} has class index 0", t + 1)));
        }
        Ok(Self { labels })
    }

    pub fn constant(class: ClassId, frames: usize) -> Result<Self> {
        Self::new(vec![class; frames])
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize > classes) {
            Some(t) => Err(Error::InvalidLabels(format!(
                "frame {}: class {} exceeds class count {classes}",
                t + 1,
                self.labels[t]
            ))),
            None => Ok(()),
        }
    }

    /// Run-length encoding of the labels.
    pub fn to_segmentation(&self) -> Segmentation {
        segmentation_from_labels(self)
    }
}

/// Run-length encodes `labels` into 1-based inclusive segments.
pub fn segmentation_from_labels(labels: &PseudoLabels) -> Segmentation {
    let mut segments: Vec<Segment> = Vec::new();
    for (t, &class) in labels.labels().iter().enumerate() {
        match segments.last_mut() {
            Some(seg) if seg.class == class => seg.end = t + 1,
            _ => segments.push(Segment { class, start: t + 1, end: t + 1 }),
        }
    }
    Segmentation { segments, frames: labels.len() }
}

/// One labeled interval `[start, end]`, 1-based and inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub class: ClassId,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn overlap(&self, other: &Segment) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if hi >= lo {
            hi - lo + 1
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    segments: Vec<Segment>,
    frames: usize,
}

impl Segmentation {
    /// Checks that `segments` tile `[1, T]` with class changes between
    /// neighbours.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments.first().ok_or_else(|| Error::InvalidSegmentation("no segments".into()))?;
        if first.start != 1 {
            return Err(Error::InvalidSegmentation(format!("first segment starts at {}", first.start)));
        }
        for (i, seg) in segments.iter().enumerate() {
            if seg.class == 0 {
                return Err(Error::InvalidSegmentation(format!("segment {} has class 0", i + 1)));
            }
            if seg.end < seg.start {
                return Err(Error::InvalidSegmentation(format!(
                    "segment {} ends ({}) before it starts ({})",
                    i + 1,
                    seg.end,
                    seg.start
                )));
            }
        }
        for (i, pair) in segments.windows(2).enumerate() {
            if pair[1].start != pair[0].end + 1 {
                return Err(Error::InvalidSegmentation(format!(
                    "segment {} starts at {} but segment {} ends at {}",
                    i + 2,
                    pair[1].start,
                    i + 1,
                    pair[0].end
                )));
            }
            if pair[0].class == pair[1].class {
                return Err(Error::InvalidSegmentation(format!(
                    "segments {} and {} share class {}",
                    i + 1,
                    i + 2,
                    pair[0].class
                )));
            }
        }
        let frames = segments.last().map_or(0, |s| s.end);
        Ok(Self { segments, frames })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Expands back to one label per frame.
    pub fn to_labels(&self) -> PseudoLabels {
        let mut labels = Vec::with_capacity(self.frames);
        for seg in &self.segments {
            labels.extend(std::iter::repeat_n(seg.class, seg.len()));
        }
        PseudoLabels { labels }
    }

    /// Class sequence of the segments, i.e. the transcript this segmentation
    /// realizes.
    pub fn classes(&self) -> Vec<ClassId> {
        self.segments.iter().map(|s| s.class).collect()
    }
}

/// Class-agnostic boundary score of every frame, in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryScoreSeries {
    scores: Vec<f64>,
}

impl BoundaryScoreSeries {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Score at 1-based frame `frame`.
    pub fn at(&self, frame: usize) -> f64 {
        self.scores[frame - 1]
    }
}

/// Candidate boundary timestamps `1 < b_1 < ... < b_K <= T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    timestamps: Vec<usize>,
    radius: usize,
}

impl CandidateSet {
    pub fn new(timestamps: Vec<usize>, radius: usize, frames: usize) -> Result<Self> {
        if let Some(&t) = timestamps.iter().find(|&&t| t < 2 || t > frames) {
            return Err(Error::FrameOutOfRange { frame: t, frames });
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidLabels("candidate timestamps must be strictly increasing".into()));
        }
        Ok(Self { timestamps, radius })
    }

    pub fn timestamps(&self) -> &[usize] {
        &self.timestamps
    }

    /// Suppression radius the set was built with.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// `K x (M-1)` scores; row `k` belongs to candidate `k`, column `r` to
/// transition `r` (both 0-based here).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    candidates: CandidateSet,
}

impl TransitionScoreMatrix {
    pub fn new(values: Vec<f64>, cols: usize, candidates: CandidateSet) -> Result<Self> {
        let rows = candidates.len();
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} score matrix", values.len())));
        }
        Ok(Self { rows, cols, values, candidates })
    }

    /// Matrix over placeholder candidates `2..=K+1`; handy when only the
    /// scores matter (oracle comparisons, benchmarks).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged score rows".into()));
        }
        let candidates = CandidateSet::new((2..rows.len() + 2).collect(), 0, rows.len() + 1)?;
        Self::new(rows.concat(), cols, candidates)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, k: usize, r: usize) -> f64 {
        self.values[k * self.cols + r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }
}

/// Matching of every transition to one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Chosen timestamps, one per transition, strictly increasing.
    pub boundaries: Vec<usize>,
    /// Minimized alignment cost, `-sum_r V[k_r, r]`.
    pub cost: f64,
    /// 0-based candidate row matched to each transition.
    pub matched: Vec<usize>,
}

fn default_boundary_window() -> usize {
    7
}
fn default_transition_window() -> usize {
    31
}
fn default_candidate_multiplier() -> usize {
    4
}
fn default_suppression_fraction() -> f64 {
    0.3
}
fn default_temperature() -> f64 {
    0.2
}
fn default_one() -> f64 {
    1.0
}
fn default_glc_weight() -> f64 {
    0.1
}

/// Hyperparameters of the pseudo-labeling pipeline and the objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Side of the boundary template and similarity window (`w_b`).
    #[serde(default = "default_boundary_window")]
    pub boundary_window: usize,
    /// Temporal size of the transition template (`w_a`).
    #[serde(default = "default_transition_window")]
    pub transition_window: usize,
    /// Candidate cap is `candidate_multiplier * (M - 1)`.
    #[serde(default = "default_candidate_multiplier")]
    pub candidate_multiplier: usize,
    /// Suppression radius is `floor(suppression_fraction * T / M)`.
    #[serde(default = "default_suppression_fraction")]
    pub suppression_fraction: f64,
    /// Contrastive temperature.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_one")]
    pub alpha: f64,
    #[serde(default = "default_one")]
    pub beta: f64,
    #[serde(default = "default_glc_weight")]
    pub gamma: f64,
    /// Background class index, if the label space has one.
    #[serde(default)]
    pub background: Option<ClassId>,
    /// Cross-entropy weight of frames pseudo-labeled as background.
    #[serde(default = "default_one")]
    pub background_weight: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            boundary_window: default_boundary_window(),
            transition_window: default_transition_window(),
            candidate_multiplier: default_candidate_multiplier(),
            suppression_fraction: default_suppression_fraction(),
            temperature: default_temperature(),
            alpha: 1.0,
            beta: 1.0,
            gamma: default_glc_weight(),
            background: None,
            background_weight: 1.0,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        check_window("boundary_window", self.boundary_window)?;
        check_window("transition_window", self.transition_window)?;
        if self.candidate_multiplier < 1 {
            return Err(Error::Config("candidate_multiplier must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.suppression_fraction) {
            return Err(Error::Config(format!("suppression_fraction {} outside [0, 1]", self.suppression_fraction)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !w.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.background_weight >= 0.0 && self.background_weight.is_finite()) {
            return Err(Error::Config("background_weight must be finite and non-negative".into()));
        }
        if self.background == Some(0) {
            return Err(Error::Config("background class index is 1-based".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_window(name: &str, w: usize) -> Result<()> {
    if w < 3 || w.is_multiple_of(2) {
        return Err(Error::Config(format!("{name} must be odd and at least 3, got {w}")));
    }
    Ok(())
}
