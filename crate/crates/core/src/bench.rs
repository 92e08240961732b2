//! Timing and equivalence harnesses.
//!
//! Timings are the minimum over several batches of the mean per-call wall
//! time, measured on a single worker thread so that the numbers reflect
//! algorithmic scaling rather than how many cores happen to be free.

use std::fmt;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::align::{align_transitions, build_cost_matrix, combine_scores, score_transitions};
use crate::boundary::{score_boundaries, select_candidates};
use crate::error::{Error, Result};
use crate::model::{CandidateSet, Config, TransitionScoreMatrix};
use crate::oracles::{brute_force_with_ties, exhaustive_segmentation_aligner};
use crate::pipeline::atba_pipeline;
use crate::synth::{generate_video, GeneratorSpec, SyntheticVideo};

const BATCHES: usize = 5;
const MIN_BATCH: Duration = Duration::from_millis(20);

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build benchmark thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Seconds per call: minimum over batches of the batch mean.
pub fn time_per_call(batches: usize, min_batch: Duration, mut f: impl FnMut()) -> f64 {
    (0..batches.max(1))
        .map(|_| {
            let start = Instant::now();
            let mut calls = 0u32;
            while calls == 0 || start.elapsed() < min_batch {
                f();
                calls += 1;
            }
            start.elapsed().as_secs_f64() / f64::from(calls)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// A noisy video with exactly `actions` segments and `frames` frames.
pub fn bench_video(frames: usize, actions: usize, seed: u64) -> Result<SyntheticVideo> {
    let spec = GeneratorSpec {
        seed,
        videos: 1,
        frames: (frames, frames),
        actions: (actions, actions),
        classes: 2 * actions + 4,
        confusion: 0.2,
        smoothing: 10,
        distractor_rate: 1.0,
        ..GeneratorSpec::default()
    };
    generate_video(&spec, 0)
}

/// Pipeline config used by the scaling suite: `lambda = 4` and a narrow
/// suppression radius so `K = 4 (M - 1)` candidates fit at every `T`.
pub fn scaling_config() -> Config {
    Config { candidate_multiplier: 4, suppression_fraction: 0.1, ..Config::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub frames: usize,
    pub candidates: usize,
    pub transitions: usize,
    /// Boundary scoring alone.
    pub score_seconds: f64,
    /// Cost matrix plus dynamic program.
    pub align_seconds: f64,
    pub pipeline_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub actions: usize,
    pub rows: Vec<ScalingRow>,
    pub score_slope: f64,
    pub pipeline_slope: f64,
    /// Largest over smallest alignment time across rows.
    pub align_spread: f64,
}

fn fused_scores(video: &SyntheticVideo, config: &Config) -> Result<(CandidateSet, TransitionScoreMatrix)> {
    let boundary = score_boundaries(&video.probabilities, config)?;
    let candidates = select_candidates(&boundary, &video.transcript, config)?;
    let transition = score_transitions(&video.probabilities, &video.transcript, &candidates, config)?;
    let fused = combine_scores(&transition, &boundary, &candidates)?;
    Ok((candidates, fused))
}

pub fn alignment_step_seconds(scores: &TransitionScoreMatrix) -> Result<f64> {
    build_cost_matrix(scores)?;
    Ok(time_per_call(BATCHES, MIN_BATCH, || {
        let cost = build_cost_matrix(black_box(scores)).expect("checked above");
        black_box(align_transitions(&cost).expect("feasible"));
    }))
}

/// Times scoring, alignment and the whole pipeline for each frame count with
/// `actions` fixed.
pub fn alignment_scaling(frame_counts: &[usize], actions: usize, seed: u64) -> Result<ScalingReport> {
    single_threaded(|| {
        let config = scaling_config();
        let mut rows = Vec::with_capacity(frame_counts.len());
        for &frames in frame_counts {
            let video = bench_video(frames, actions, seed)?;
            let (candidates, fused) = fused_scores(&video, &config)?;
            let score_seconds = time_per_call(BATCHES, MIN_BATCH, || {
                black_box(score_boundaries(black_box(&video.probabilities), &config).expect("valid input"));
            });
            let align_seconds = alignment_step_seconds(&fused)?;
            let pipeline_seconds = time_per_call(BATCHES, MIN_BATCH, || {
                black_box(atba_pipeline(&video.probabilities, &video.transcript, &config).expect("valid input"));
            });
            log::info!("T = {frames}: score {score_seconds:.3e} s, align {align_seconds:.3e} s");
            rows.push(ScalingRow {
                frames,
                candidates: candidates.len(),
                transitions: actions - 1,
                score_seconds,
                align_seconds,
                pipeline_seconds,
            });
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.frames as f64).collect();
        let col = |f: fn(&ScalingRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let aligns = col(|r| r.align_seconds);
        let align_spread =
            aligns.iter().copied().fold(0.0, f64::max) / aligns.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(ScalingReport {
            actions,
            score_slope: log_log_slope(&xs, &col(|r| r.score_seconds)),
            pipeline_slope: log_log_slope(&xs, &col(|r| r.pipeline_seconds)),
            align_spread,
            rows,
        })
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleContrast {
    pub frames: usize,
    pub actions: usize,
    pub exhaustive_seconds: f64,
    pub align_seconds: f64,
    /// `exhaustive_seconds / align_seconds`.
    pub ratio: f64,
}

/// The frame-level segmentation DP against the alignment step of the
/// pipeline on the same video.
pub fn oracle_contrast(frames: usize, actions: usize, seed: u64) -> Result<OracleContrast> {
    single_threaded(|| {
        let video = bench_video(frames, actions, seed)?;
        let (_, fused) = fused_scores(&video, &Config::default())?;
        let align_seconds = alignment_step_seconds(&fused)?;
        exhaustive_segmentation_aligner(&video.probabilities, &video.transcript)?;
        let exhaustive_seconds = time_per_call(3, Duration::ZERO, || {
            black_box(exhaustive_segmentation_aligner(&video.probabilities, &video.transcript).expect("checked above"));
        });
        Ok(OracleContrast {
            frames,
            actions,
            exhaustive_seconds,
            align_seconds,
            ratio: exhaustive_seconds / align_seconds,
        })
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub instances: usize,
    pub cost_mismatches: usize,
    /// Instances whose minimum is attained by a single matching.
    pub unique_optima: usize,
    /// Matching disagreements among the unique-optimum instances.
    pub matching_mismatches: usize,
    /// Matching disagreements among tied instances; both sides document the
    /// same tie rule, so this is expected to be 0 as well.
    pub tie_mismatches: usize,
    pub seconds: f64,
}

/// Random score matrix with `K` in `[M - 1, max_candidates]`. Every other
/// instance draws from a 5-level grid so that ties occur.
pub fn random_instance(rng: &mut ChaCha20Rng, max_candidates: usize, max_actions: usize) -> TransitionScoreMatrix {
    let m = rng.random_range(2..=max_actions);
    let k = rng.random_range((m - 1).max(1)..=max_candidates);
    let coarse = rng.random_bool(0.5);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..m - 1)
                .map(
                    |_| if coarse { f64::from(rng.random_range(-2i32..=2)) * 0.5 } else { rng.random_range(-1.0..1.0) },
                )
                .collect()
        })
        .collect();
    TransitionScoreMatrix::from_rows(&rows).expect("non-empty rectangular rows")
}

pub fn oracle_equivalence(
    instances: usize,
    max_candidates: usize,
    max_actions: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut report = EquivalenceReport {
        instances,
        cost_mismatches: 0,
        unique_optima: 0,
        matching_mismatches: 0,
        tie_mismatches: 0,
        seconds: 0.0,
    };
    for _ in 0..instances {
        let scores = random_instance(&mut rng, max_candidates, max_actions);
        let fast = align_transitions(&build_cost_matrix(&scores)?)?;
        let (slow, optima) = brute_force_with_ties(&scores)?;
        report.cost_mismatches += usize::from(fast.cost != slow.cost);
        if optima == 1 {
            report.unique_optima += 1;
            report.matching_mismatches += usize::from(fast.matched != slow.matched);
        } else {
            report.tie_mismatches += usize::from(fast.matched != slow.matched);
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

impl fmt::Display for ScalingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>4} {:>4} {:>12} {:>12} {:>12}", "T", "K", "M-1", "score_s", "align_s", "pipeline_s")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>8} {:>4} {:>4} {:>12.4e} {:>12.4e} {:>12.4e}",
                r.frames, r.candidates, r.transitions, r.score_seconds, r.align_seconds, r.pipeline_seconds
            )?;
        }
        writeln!(
            f,
            "score slope {:.3}, pipeline slope {:.3}, align spread {:.2}x",
            self.score_slope, self.pipeline_slope, self.align_spread
        )
    }
}

impl fmt::Display for OracleContrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "T {} M {}: exhaustive {:.4e} s, alignment {:.4e} s, ratio {:.1}x",
            self.frames, self.actions, self.exhaustive_seconds, self.align_seconds, self.ratio
        )
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} instances in {:.3} s: {} cost mismatches, {} unique optima with {} matching mismatches, {} tie mismatches",
            self.instances,
            self.seconds,
            self.cost_mismatches,
            self.unique_optima,
            self.matching_mismatches,
            self.tie_mismatches
        )
    }
}
