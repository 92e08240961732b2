//! Pseudo-label generation for weakly supervised action segmentation by
//! aligning detected boundaries to the transitions of a transcript.
//!
//! The crate covers the full labeling path ([`pipeline::atba_pipeline`]),
//! the training objectives with analytic gradients ([`objectives`]),
//! evaluation metrics ([`eval`]), slow reference implementations used to
//! check the fast path ([`oracles`]), a seeded synthetic corpus generator
//! ([`synth`]), file formats ([`io`]) and timing harnesses ([`bench`]).

pub mod align;
pub mod bench;
pub mod boundary;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod objectives;
pub mod oracles;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    AlignmentResult, BoundaryScoreSeries, CandidateSet, ClassId, Config, ProbabilitySequence, PseudoLabels, Segment,
    Segmentation, Transcript, TransitionScoreMatrix,
};
pub use pipeline::{atba_pipeline, Diagnostics, Fusion, PipelineOutput};
