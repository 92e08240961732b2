//! Frame and segment metrics: MoF, MoF without background, IoU/IoD and
//! pseudo-label accuracy, per video and pooled over a corpus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassId, PseudoLabels, Segmentation};

fn check_lengths(predicted: &PseudoLabels, truth: &PseudoLabels) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted frames vs {} ground-truth frames",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn correct_frames(predicted: &PseudoLabels, truth: &PseudoLabels) -> usize {
    predicted.labels().iter().zip(truth.labels()).filter(|(p, t)| p == t).count()
}

/// Percentage of frames labeled correctly.
pub fn mof(predicted: &PseudoLabels, truth: &PseudoLabels) -> Result<f64> {
    check_lengths(predicted, truth)?;
    Ok(100.0 * correct_frames(predicted, truth) as f64 / truth.len() as f64)
}

/// MoF restricted to frames whose ground truth is not `background`.
pub fn mof_bg(predicted: &PseudoLabels, truth: &PseudoLabels, background: ClassId) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let (correct, total) = foreground_counts(predicted, truth, background);
    if total == 0 {
        return Err(Error::UndefinedMetric("no non-background ground-truth frames".into()));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

fn foreground_counts(predicted: &PseudoLabels, truth: &PseudoLabels, background: ClassId) -> (usize, usize) {
    predicted
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(_, &t)| t != background)
        .fold((0, 0), |(correct, total), (p, t)| (correct + usize::from(p == t), total + 1))
}

/// Best IoU and best IoD of every ground-truth segment against predicted
/// segments of the same class, each as a fraction. The two maxima are taken
/// independently.
pub fn segment_scores(predicted: &Segmentation, truth: &Segmentation) -> Result<Vec<(f64, f64)>> {
    if predicted.frames() != truth.frames() {
        return Err(Error::ShapeMismatch(format!(
            "predicted segmentation covers {} frames, ground truth {}",
            predicted.frames(),
            truth.frames()
        )));
    }
    Ok(truth
        .segments()
        .iter()
        .map(|gt| {
            predicted.segments().iter().filter(|p| p.class == gt.class).fold((0.0f64, 0.0f64), |(iou, iod), p| {
                let inter = p.overlap(gt) as f64;
                let union = (p.len() + gt.len()) as f64 - inter;
                (iou.max(inter / union), iod.max(inter / p.len() as f64))
            })
        })
        .collect())
}

/// Mean IoU and IoD percentages over ground-truth segments.
pub fn iou_iod(predicted: &Segmentation, truth: &Segmentation) -> Result<(f64, f64)> {
    let scores = segment_scores(predicted, truth)?;
    let n = scores.len() as f64;
    let (iou, iod) = scores.iter().fold((0.0, 0.0), |(a, b), (i, d)| (a + i, b + d));
    Ok((100.0 * iou / n, 100.0 * iod / n))
}

/// Accuracy of pseudo labels against ground truth; same as [`mof`].
pub fn pseudo_label_accuracy(pseudo: &PseudoLabels, truth: &PseudoLabels) -> Result<f64> {
    mof(pseudo, truth)
}

/// Frame-weighted accuracy over several videos.
pub fn corpus_accuracy(pairs: &[(PseudoLabels, PseudoLabels)]) -> Result<f64> {
    let mut metrics = CorpusMetrics::new(None);
    for (p, t) in pairs {
        metrics.add(p, t)?;
    }
    Ok(metrics.report()?.mof)
}

/// Running totals for corpus-level metrics.
#[derive(Clone, Debug, Default)]
pub struct CorpusMetrics {
    background: Option<ClassId>,
    frames: usize,
    correct: usize,
    foreground: usize,
    foreground_correct: usize,
    iou_sum: f64,
    iod_sum: f64,
    gt_segments: usize,
    video_accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub videos: usize,
    pub frames: usize,
    /// Frame-pooled MoF.
    pub mof: f64,
    /// Frame-pooled MoF over non-background frames; absent without a
    /// background class or without foreground frames.
    pub mof_bg: Option<f64>,
    /// Mean over all ground-truth segments of the corpus.
    pub iou: f64,
    pub iod: f64,
    /// Pseudo-label accuracy pooled over frames.
    pub pl_frame_weighted: f64,
    /// Pseudo-label accuracy averaged over videos.
    pub pl_video_averaged: f64,
}

impl CorpusMetrics {
    pub fn new(background: Option<ClassId>) -> Self {
        Self { background, ..Self::default() }
    }

    pub fn add(&mut self, predicted: &PseudoLabels, truth: &PseudoLabels) -> Result<()> {
        check_lengths(predicted, truth)?;
        let correct = correct_frames(predicted, truth);
        self.frames += truth.len();
        self.correct += correct;
        if let Some(bg) = self.background {
            let (c, n) = foreground_counts(predicted, truth, bg);
            self.foreground_correct += c;
            self.foreground += n;
        }
        for (iou, iod) in segment_scores(&predicted.to_segmentation(), &truth.to_segmentation())? {
            self.iou_sum += iou;
            self.iod_sum += iod;
            self.gt_segments += 1;
        }
        self.video_accuracies.push(100.0 * correct as f64 / truth.len() as f64);
        Ok(())
    }

    pub fn report(&self) -> Result<CorpusReport> {
        if self.frames == 0 {
            return Err(Error::UndefinedMetric("empty corpus".into()));
        }
        let mof = 100.0 * self.correct as f64 / self.frames as f64;
        let mof_bg = (self.background.is_some() && self.foreground > 0)
            .then(|| 100.0 * self.foreground_correct as f64 / self.foreground as f64);
        let videos = self.video_accuracies.len();
        Ok(CorpusReport {
            videos,
            frames: self.frames,
            mof,
            mof_bg,
            iou: 100.0 * self.iou_sum / self.gt_segments as f64,
            iod: 100.0 * self.iod_sum / self.gt_segments as f64,
            pl_frame_weighted: mof,
            pl_video_averaged: self.video_accuracies.iter().sum::<f64>() / videos as f64,
        })
    }
}
