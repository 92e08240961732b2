use std::path::PathBuf;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid probability sequence: {0}")]
    InvalidSequence(ValidationReport),

    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("frame {frame} is outside 1..={frames}")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("transcript has a single action, there is no transition to align")]
    NoTransition,

    #[error("no selectable candidate timestamps (T = {frames})")]
    EmptyCandidates { frames: usize },

    #[error("cannot align {transitions} transitions to {candidates} candidates")]
    InfeasibleAlignment { candidates: usize, transitions: usize },

    #[error("class {class} appears in the transcript but has no pseudo-labeled frames")]
    DegenerateCentroid { class: u32 },

    #[error("cannot normalize a zero vector: {0}")]
    ZeroNorm(String),

    #[error("oracle input too large: {0}")]
    OracleTooLarge(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("missing loss component `{component}` for stage {stage}")]
    MissingComponent { stage: &'static str, component: &'static str },

    #[error("generator: {0}")]
    Generator(String),

    #[error("{path}: format error at byte {offset}: {message}")]
    Format { path: PathBuf, offset: u64, message: String },

    #[error("{path}: {field}: {message}")]
    Schema { path: PathBuf, field: String, message: String },

    #[error("{path}: unsupported format_version {found} (expected {expected})")]
    UnsupportedVersion { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable snake-case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSequence(_) => "invalid_sequence",
            Error::InvalidTranscript(_) => "invalid_transcript",
            Error::InvalidLabels(_) => "invalid_labels",
            Error::InvalidSegmentation(_) => "invalid_segmentation",
            Error::Config(_) => "config",
            Error::FrameOutOfRange { .. } => "frame_out_of_range",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoTransition => "no_transition",
            Error::EmptyCandidates { .. } => "empty_candidates",
            Error::InfeasibleAlignment { .. } => "infeasible_alignment",
            Error::DegenerateCentroid { .. } => "degenerate_centroid",
            Error::ZeroNorm(_) => "zero_norm",
            Error::OracleTooLarge(_) => "oracle_too_large",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::MissingComponent { .. } => "missing_component",
            Error::Generator(_) => "generator",
            Error::Format { .. } => "format",
            Error::Schema { .. } => "schema",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Io { .. } => "io",
        }
    }

    /// File the error refers to, if any.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::Format { path, .. }
            | Error::Schema { path, .. }
            | Error::UnsupportedVersion { path, .. }
            | Error::Io { path, .. } => Some(path),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
