//! Seeded synthetic corpus: ground-truth segmentations, transcripts, noisy
//! probability sequences and frame embeddings.
//!
//! Randomness is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(spec.seed)`; video `i` reads stream `i` and the shared class
//! means read stream `u64::MAX`. Every value therefore depends only on
//! `(seed, index)`, never on thread scheduling or platform.
//!
//! Per video the draws are, in order: action count, frame count, classes,
//! segment weights, per-segment confusion distributions, distractor events,
//! frame-embedding noise and occurrence-logit noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{ClassId, ProbabilitySequence, PseudoLabels, Transcript};
use crate::objectives::{EmbeddingSet, Matrix};

/// Segment weights are uniform in `[1, 1 + LENGTH_SPREAD]`.
const LENGTH_SPREAD: f64 = 0.25;
/// Distractor length as a fraction of its segment, and its lower bound.
const DISTRACTOR_FRACTION: usize = 10;
const DISTRACTOR_MIN_LEN: usize = 3;
/// Occurrence logits are `+/- OCCURRENCE_MARGIN` before noise.
const OCCURRENCE_MARGIN: f64 = 3.0;
const MEANS_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub videos: usize,
    /// Inclusive frame-count range.
    pub frames: (usize, usize),
    /// Inclusive range of transcript lengths.
    pub actions: (usize, usize),
    pub classes: usize,
    /// Background class; when set, transcripts alternate background and
    /// action segments starting with background.
    #[serde(default)]
    pub background: Option<ClassId>,
    /// Target fraction of background frames.
    #[serde(default)]
    pub background_rate: f64,
    /// Probability mass moved from the true class to a random off-class
    /// distribution, fixed per segment.
    #[serde(default)]
    pub confusion: f64,
    /// Half-width of the linear cross-fade at each transition.
    #[serde(default)]
    pub smoothing: usize,
    /// Probability that a segment contains one distractor excursion.
    #[serde(default)]
    pub distractor_rate: f64,
    /// Mixing weight of the distractor class during an excursion.
    #[serde(default = "default_distractor_strength")]
    pub distractor_strength: f64,
    /// Lower bound on segment length; raised to `2 * smoothing` if smaller.
    #[serde(default = "default_min_segment")]
    pub min_segment: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub embedding_noise: f64,
}

fn default_distractor_strength() -> f64 {
    0.3
}

fn default_min_segment() -> usize {
    31
}

fn default_embedding_dim() -> usize {
    8
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            videos: 10,
            frames: (600, 1200),
            actions: (3, 6),
            classes: 12,
            background: None,
            background_rate: 0.0,
            confusion: 0.0,
            smoothing: 0,
            distractor_rate: 0.0,
            distractor_strength: default_distractor_strength(),
            min_segment: default_min_segment(),
            embedding_dim: default_embedding_dim(),
            embedding_noise: 0.0,
        }
    }
}

impl GeneratorSpec {
    /// Shortest segment any video may contain.
    pub fn segment_floor(&self) -> usize {
        self.min_segment.max(2 * self.smoothing).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generator(m));
        let (t_lo, t_hi) = self.frames;
        let (m_lo, m_hi) = self.actions;
        if t_lo == 0 || t_lo > t_hi {
            return bad(format!("frame range [{t_lo}, {t_hi}] is empty or starts at 0"));
        }
        if m_lo == 0 || m_lo > m_hi {
            return bad(format!("action range [{m_lo}, {m_hi}] is empty or starts at 0"));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if let Some(bg) = self.background {
            if bg == 0 || bg as usize > self.classes {
                return bad(format!("background class {bg} outside 1..={}", self.classes));
            }
        }
        for (name, v) in [
            ("background_rate", self.background_rate),
            ("confusion", self.confusion),
            ("distractor_rate", self.distractor_rate),
            ("distractor_strength", self.distractor_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !(self.embedding_noise.is_finite() && self.embedding_noise >= 0.0) {
            return bad(format!("embedding_noise = {} must be finite and non-negative", self.embedding_noise));
        }
        let floor = self.segment_floor();
        if t_lo < m_hi * floor {
            return bad(format!("{m_hi} segments of at least {floor} frames do not fit in {t_lo} frames"));
        }
        Ok(())
    }
}

/// One generated video. Ground truth is kept next to, not inside, the
/// transcript.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    pub probabilities: ProbabilitySequence,
    pub embeddings: EmbeddingSet,
    pub transcript: Transcript,
    pub truth: PseudoLabels,
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:05}")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn class_means(spec: &GeneratorSpec) -> Vec<Vec<f64>> {
    let mut rng = rng_for(spec.seed, MEANS_STREAM);
    (0..spec.classes).map(|_| (0..spec.embedding_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

/// `floor` frames each plus a weight-proportional share of the rest;
/// leftover frames go to the largest fractional parts, lower index first.
fn allocate(total: usize, floor: usize, weights: &[f64]) -> Vec<usize> {
    let extra = total - floor * weights.len();
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| extra as f64 * w / sum).collect();
    let mut lengths: Vec<usize> = shares.iter().map(|s| floor + s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    let assigned: usize = lengths.iter().sum();
    for &i in order.iter().take(total - assigned) {
        lengths[i] += 1;
    }
    lengths
}

fn draw_actions(spec: &GeneratorSpec, m: usize, rng: &mut ChaCha20Rng) -> Vec<ClassId> {
    let c = spec.classes as ClassId;
    match spec.background {
        Some(bg) if m > 1 => (0..m)
            .map(|r| {
                if r % 2 == 0 {
                    bg
                } else {
                    let k = rng.random_range(1..c);
                    if k >= bg {
                        k + 1
                    } else {
                        k
                    }
                }
            })
            .collect(),
        Some(bg) => {
            let k = rng.random_range(1..c);
            vec![if k >= bg { k + 1 } else { k }]
        }
        None => {
            let mut actions: Vec<ClassId> = Vec::with_capacity(m);
            for r in 0..m {
                let a = match r {
                    0 => rng.random_range(1..=c),
                    _ => {
                        let prev = actions[r - 1];
                        let k = rng.random_range(1..c);
                        if k >= prev {
                            k + 1
                        } else {
                            k
                        }
                    }
                };
                actions.push(a);
            }
            actions
        }
    }
}

fn draw_lengths(spec: &GeneratorSpec, actions: &[ClassId], frames: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let floor = spec.segment_floor();
    let weights: Vec<f64> = actions.iter().map(|_| 1.0 + LENGTH_SPREAD * rng.random::<f64>()).collect();
    let bg = match spec.background {
        Some(bg) if actions.len() > 1 => bg,
        _ => return allocate(frames, floor, &weights),
    };
    let (bg_idx, act_idx): (Vec<usize>, Vec<usize>) = (0..actions.len()).partition(|&r| actions[r] == bg);
    let target = (spec.background_rate * frames as f64).round() as usize;
    let bg_total = target.clamp(bg_idx.len() * floor, frames - act_idx.len() * floor);
    let pick = |idx: &[usize]| idx.iter().map(|&r| weights[r]).collect::<Vec<_>>();
    let mut lengths = vec![0; actions.len()];
    for (r, len) in bg_idx.iter().zip(allocate(bg_total, floor, &pick(&bg_idx))) {
        lengths[*r] = len;
    }
    for (r, len) in act_idx.iter().zip(allocate(frames - bg_total, floor, &pick(&act_idx))) {
        lengths[*r] = len;
    }
    lengths
}

/// `(1 - kappa) * onehot(class) + kappa * q`, `q` uniform-Dirichlet over the
/// other classes.
fn confused_row(class: ClassId, classes: usize, kappa: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..classes).map(|_| Exp1.sample(rng)).collect();
    q[class as usize - 1] = 0.0;
    let sum: f64 = q.iter().sum();
    let mut row: Vec<f64> = q.iter().map(|v| kappa * v / sum).collect();
    row[class as usize - 1] = 1.0 - kappa;
    row
}

struct Distractor {
    class: ClassId,
    /// 0-based half-open frame range.
    start: usize,
    end: usize,
}

pub fn generate_video(spec: &GeneratorSpec, index: usize) -> Result<SyntheticVideo> {
    spec.validate()?;
    video_with_means(spec, index, &class_means(spec))
}

fn video_with_means(spec: &GeneratorSpec, index: usize, means: &[Vec<f64>]) -> Result<SyntheticVideo> {
    let mut rng = rng_for(spec.seed, index as u64);
    let m = rng.random_range(spec.actions.0..=spec.actions.1);
    let frames = rng.random_range(spec.frames.0..=spec.frames.1);
    let actions = draw_actions(spec, m, &mut rng);
    let lengths = draw_lengths(spec, &actions, frames, &mut rng);
    let starts: Vec<usize> = lengths.iter().scan(0, |acc, &len| Some(std::mem::replace(acc, *acc + len))).collect();
    let c = spec.classes;

    let seg_rows: Vec<Vec<f64>> = actions.iter().map(|&a| confused_row(a, c, spec.confusion, &mut rng)).collect();
    let outside: Vec<ClassId> = (1..=c as ClassId).filter(|k| !actions.contains(k)).collect();
    let mut distractors = Vec::new();
    for r in 0..m {
        if rng.random::<f64>() >= spec.distractor_rate || outside.is_empty() {
            continue;
        }
        let class = outside[rng.random_range(0..outside.len())];
        let len = lengths[r];
        let span = (len / DISTRACTOR_FRACTION).max(DISTRACTOR_MIN_LEN).min(len);
        let jitter = len / 20;
        let center = starts[r] + len / 2 + rng.random_range(0..=2 * jitter) - jitter;
        let start = center.saturating_sub(span / 2).clamp(starts[r], starts[r] + len - span);
        distractors.push(Distractor { class, start, end: start + span });
    }

    let mut truth = Vec::with_capacity(frames);
    let mut values = Vec::with_capacity(frames * c);
    for (r, &len) in lengths.iter().enumerate() {
        truth.extend(std::iter::repeat_n(actions[r], len));
        for _ in 0..len {
            values.extend_from_slice(&seg_rows[r]);
        }
    }
    let s = spec.smoothing;
    if s > 0 {
        for r in 1..m {
            let b = starts[r];
            for t in b - s..b + s {
                let alpha = (t as f64 - b as f64 + s as f64 + 0.5) / (2 * s) as f64;
                for (k, v) in values[t * c..(t + 1) * c].iter_mut().enumerate() {
                    *v = (1.0 - alpha) * seg_rows[r - 1][k] + alpha * seg_rows[r][k];
                }
            }
        }
    }
    let eta = spec.distractor_strength;
    for d in &distractors {
        for t in d.start..d.end {
            let row = &mut values[t * c..(t + 1) * c];
            row.iter_mut().for_each(|v| *v *= 1.0 - eta);
            row[d.class as usize - 1] += eta;
        }
    }

    let dim = spec.embedding_dim;
    let sigma = spec.embedding_noise;
    let mut centers: Vec<Vec<f64>> = truth.iter().map(|&a| means[a as usize - 1].clone()).collect();
    for d in &distractors {
        for center in &mut centers[d.start..d.end] {
            for (x, mu) in center.iter_mut().zip(&means[d.class as usize - 1]) {
                *x = (1.0 - eta) * *x + eta * mu;
            }
        }
    }
    let mut frame_embeddings = Vec::with_capacity(frames * dim);
    for center in &centers {
        for &x in center {
            let z: f64 = StandardNormal.sample(&mut rng);
            frame_embeddings.push(x + sigma * z);
        }
    }
    let occurrence_logits = (1..=c as ClassId)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let sign = if actions.contains(&k) { 1.0 } else { -1.0 };
            sign * OCCURRENCE_MARGIN + sigma * z
        })
        .collect();

    Ok(SyntheticVideo {
        id: video_id(index),
        probabilities: ProbabilitySequence::new(frames, c, values)?,
        embeddings: EmbeddingSet {
            frames: Matrix::new(frames, dim, frame_embeddings)?,
            prototypes: Matrix::new(c, dim, means.concat())?,
            occurrence_logits,
        },
        transcript: Transcript::new(actions)?,
        truth: PseudoLabels::new(truth)?,
    })
}

/// All videos of a spec, generated in parallel; order and content do not
/// depend on the thread count.
pub fn generate_videos(spec: &GeneratorSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let means = class_means(spec);
    (0..spec.videos).into_par_iter().map(|i| video_with_means(spec, i, &means)).collect()
}

/// Writes every video under `dir` and the manifest last. Ground truth goes
/// to `dir/truth/`, apart from the files a weakly supervised learner reads.
pub fn generate_corpus(spec: &GeneratorSpec, dir: &Path) -> Result<io::Manifest> {
    spec.validate()?;
    let means = class_means(spec);
    io::create_dir(dir)?;
    io::create_dir(&dir.join(io::TRUTH_DIR))?;
    let entries = (0..spec.videos)
        .into_par_iter()
        .map(|i| {
            let video = video_with_means(spec, i, &means)?;
            io::write_video(dir, &video)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = io::Manifest { format_version: io::FORMAT_VERSION, spec: spec.clone(), videos: entries };
    io::write_manifest(&dir.join(io::MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
