//! Training objectives as pure value-and-gradient functions.
//!
//! All losses take pre-activation inputs and apply softmax / sigmoid /
//! normalization internally, so the returned gradients are with respect to
//! exactly the arrays passed in. Natural logarithms throughout.

use crate::error::{Error, Result};
use crate::model::{ClassId, Config, PseudoLabels, Transcript};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::ShapeMismatch(format!(
                "{what}: non-finite entry at row {}, column {}",
                i / self.cols.max(1) + 1,
                i % self.cols.max(1) + 1
            ))),
            None => Ok(()),
        }
    }
}

/// `T x C` unnormalized class scores.
pub type LogitSequence = Matrix;

/// Inputs of the contrastive loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    /// `T x d'` frame features.
    pub frames: Matrix,
    /// `C x d'` class prototypes; row `c - 1` belongs to class `c`.
    pub prototypes: Matrix,
    /// Pre-sigmoid occurrence scores, one per class.
    pub occurrence_logits: Vec<f64>,
}

impl EmbeddingSet {
    pub fn validate(&self) -> Result<()> {
        if self.frames.cols() == 0 || self.frames.cols() != self.prototypes.cols() {
            return Err(Error::ShapeMismatch(format!(
                "frame dimension {} vs prototype dimension {}",
                self.frames.cols(),
                self.prototypes.cols()
            )));
        }
        if self.occurrence_logits.len() != self.prototypes.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} occurrence logits for {} classes",
                self.occurrence_logits.len(),
                self.prototypes.rows()
            )));
        }
        self.frames.check_finite("frame embeddings")?;
        self.prototypes.check_finite("prototypes")?;
        if self.occurrence_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite occurrence logit".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport<G = Vec<f64>> {
    pub value: f64,
    pub gradient: G,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGradient {
    pub frames: Matrix,
    pub prototypes: Matrix,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Weighted frame-wise cross-entropy against pseudo labels, averaged over
/// all `T` frames. Frames labeled with the configured background class are
/// weighted by `config.background_weight`.
pub fn frame_classification_loss(logits: &LogitSequence, labels: &PseudoLabels, config: &Config) -> Result<LossReport> {
    let frames = logits.rows();
    let classes = logits.cols();
    if labels.len() != frames {
        return Err(Error::ShapeMismatch(format!("{} labels for {frames} frames", labels.len())));
    }
    labels.check_classes(classes)?;
    logits.check_finite("logits")?;

    let mut value = 0.0;
    let mut gradient = vec![0.0; frames * classes];
    let scale = 1.0 / frames as f64;
    for (t, &y) in labels.labels().iter().enumerate() {
        let weight = if Some(y) == config.background { config.background_weight } else { 1.0 };
        let row = logits.row(t);
        let lse = log_sum_exp(row);
        value -= weight * (row[y as usize - 1] - lse);
        let grad = &mut gradient[t * classes..(t + 1) * classes];
        for (g, &z) in grad.iter_mut().zip(row) {
            *g = weight * scale * (z - lse).exp();
        }
        grad[y as usize - 1] -= weight * scale;
    }
    Ok(LossReport { value: value * scale, gradient })
}

/// Mean binary cross-entropy between sigmoid occurrence scores and the set
/// of transcript classes.
pub fn video_occurrence_loss(logits: &[f64], transcript: &Transcript) -> Result<LossReport> {
    let classes = logits.len();
    transcript.check_classes(classes)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("non-finite occurrence logit".into()));
    }
    let mut present = vec![false; classes];
    for &a in transcript.actions() {
        present[a as usize - 1] = true;
    }
    let scale = 1.0 / classes as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(classes);
    for (&x, &p) in logits.iter().zip(&present) {
        let y = if p { 1.0 } else { 0.0 };
        // -[y ln s(x) + (1 - y) ln(1 - s(x))]
        value += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-x).exp());
        gradient.push((sig - y) * scale);
    }
    Ok(LossReport { value: value * scale, gradient })
}

/// Contrastive loss result with the classes that were left out.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveReport {
    pub loss: LossReport<EmbeddingGradient>,
    /// Transcript classes without pseudo-labeled frames.
    pub skipped: Vec<ClassId>,
}

fn normalize(v: &[f64]) -> Option<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some((v.iter().map(|x| x / norm).collect(), norm))
}

/// Back-propagates `grad` through `x / |x|` given the normalized vector
/// `unit` and `|x|`.
fn normalize_backward(unit: &[f64], norm: f64, grad: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(grad).map(|(u, g)| u * g).sum();
    unit.iter().zip(grad).map(|(u, g)| (g - u * dot) / norm).collect()
}

/// InfoNCE between each transcript class's normalized frame centroid and the
/// normalized prototypes of all classes. Fails on the first class without
/// pseudo-labeled frames.
pub fn global_local_contrastive_loss(
    embeddings: &EmbeddingSet,
    labels: &PseudoLabels,
    transcript: &Transcript,
    temperature: f64,
) -> Result<LossReport<EmbeddingGradient>> {
    contrastive(embeddings, labels, transcript, temperature, true).map(|r| r.loss)
}

/// Like [`global_local_contrastive_loss`] but leaves out transcript classes
/// that have no pseudo-labeled frames and reports them.
pub fn global_local_contrastive_loss_skipping(
    embeddings: &EmbeddingSet,
    labels: &PseudoLabels,
    transcript: &Transcript,
    temperature: f64,
) -> Result<ContrastiveReport> {
    let report = contrastive(embeddings, labels, transcript, temperature, false)?;
    for c in &report.skipped {
        log::warn!("class {c} has no pseudo-labeled frames, left out of the contrastive loss");
    }
    Ok(report)
}

fn contrastive(
    embeddings: &EmbeddingSet,
    labels: &PseudoLabels,
    transcript: &Transcript,
    temperature: f64,
    strict: bool,
) -> Result<ContrastiveReport> {
    embeddings.validate()?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let frames = &embeddings.frames;
    let protos = &embeddings.prototypes;
    let classes = protos.rows();
    let dim = frames.cols();
    if labels.len() != frames.rows() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} frames", labels.len(), frames.rows())));
    }
    labels.check_classes(classes)?;
    transcript.check_classes(classes)?;

    let mut units = Vec::with_capacity(classes);
    for c in 0..classes {
        let unit = normalize(protos.row(c)).ok_or_else(|| Error::ZeroNorm(format!("prototype of class {}", c + 1)))?;
        units.push(unit);
    }

    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (t, &y) in labels.labels().iter().enumerate() {
        let c = y as usize - 1;
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(frames.row(t)) {
            *s += x;
        }
    }

    let mut active = Vec::new();
    let mut skipped = Vec::new();
    for c in transcript.class_set() {
        let idx = c as usize - 1;
        if counts[idx] == 0 {
            if strict {
                return Err(Error::DegenerateCentroid { class: c });
            }
            skipped.push(c);
            continue;
        }
        let centroid: Vec<f64> = sums[idx].iter().map(|s| s / counts[idx] as f64).collect();
        match normalize(&centroid) {
            Some((unit, norm)) => active.push((idx, unit, norm)),
            None if strict => return Err(Error::ZeroNorm(format!("frame centroid of class {c}"))),
            None => skipped.push(c),
        }
    }

    let mut frame_grad = Matrix::zeros(frames.rows(), dim);
    let mut proto_grad = Matrix::zeros(classes, dim);
    if active.is_empty() {
        return Ok(ContrastiveReport {
            loss: LossReport { value: 0.0, gradient: EmbeddingGradient { frames: frame_grad, prototypes: proto_grad } },
            skipped,
        });
    }

    let scale = 1.0 / active.len() as f64;
    let mut value = 0.0;
    // gradient with respect to the unit prototypes
    let mut unit_proto_grad = vec![vec![0.0; dim]; classes];
    let mut centroid_grads = vec![vec![0.0; dim]; classes];
    for (idx, unit, norm) in &active {
        let logits: Vec<f64> =
            units.iter().map(|(v, _)| unit.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / temperature).collect();
        let lse = log_sum_exp(&logits);
        value += lse - logits[*idx];

        let mut grad_unit = vec![0.0; dim];
        for (j, ((v, _), z)) in units.iter().zip(&logits).enumerate() {
            let g = ((z - lse).exp() - if j == *idx { 1.0 } else { 0.0 }) * scale / temperature;
            for d in 0..dim {
                grad_unit[d] += g * v[d];
                unit_proto_grad[j][d] += g * unit[d];
            }
        }
        centroid_grads[*idx] = normalize_backward(unit, *norm, &grad_unit);
    }

    for (t, &y) in labels.labels().iter().enumerate() {
        let c = y as usize - 1;
        let n = counts[c] as f64;
        for (g, cg) in frame_grad.row_mut(t).iter_mut().zip(&centroid_grads[c]) {
            *g = cg / n;
        }
    }
    for (j, (unit, norm)) in units.iter().enumerate() {
        let g = normalize_backward(unit, *norm, &unit_proto_grad[j]);
        proto_grad.row_mut(j).copy_from_slice(&g);
    }

    Ok(ContrastiveReport {
        loss: LossReport {
            value: value * scale,
            gradient: EmbeddingGradient { frames: frame_grad, prototypes: proto_grad },
        },
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Video-level supervision only.
    I,
    /// Video-level, frame classification and contrastive terms.
    II,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub video: Option<f64>,
    pub classification: Option<f64>,
    pub contrastive: Option<f64>,
}

pub fn stage_loss(stage: Stage, components: &LossComponents, config: &Config) -> Result<f64> {
    let video = components.video.ok_or(Error::MissingComponent { stage: stage_name(stage), component: "video" })?;
    match stage {
        Stage::I => Ok(video),
        Stage::II => {
            let cls = components
                .classification
                .ok_or(Error::MissingComponent { stage: "II", component: "classification" })?;
            let glc =
                components.contrastive.ok_or(Error::MissingComponent { stage: "II", component: "contrastive" })?;
            Ok(config.alpha * video + config.beta * cls + config.gamma * glc)
        }
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::I => "I",
        Stage::II => "II",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn labels(v: &[u32]) -> PseudoLabels {
        PseudoLabels::new(v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Matrix::zeros(5, 4);
        let r = frame_classification_loss(&logits, &labels(&[1, 2, 3, 4, 1]), &Config::default()).unwrap();
        assert_abs_diff_eq!(r.value, 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn peaked_logits_approach_zero() {
        let logits = Matrix::new(2, 2, vec![50.0, -50.0, -50.0, 50.0]).unwrap();
        let r = frame_classification_loss(&logits, &labels(&[1, 2]), &Config::default()).unwrap();
        assert!(r.value < 1e-40);
    }

    #[test]
    fn two_class_reference_value() {
        let logits = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = frame_classification_loss(&logits, &labels(&[1, 2]), &Config::default()).unwrap();
        assert_abs_diff_eq!(r.value, (1.0 + (-1f64).exp()).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.value, 0.3133, epsilon = 1e-4);
    }

    #[test]
    fn background_frames_downweighted() {
        let logits = Matrix::zeros(2, 3);
        let config = Config { background: Some(3), background_weight: 0.8, ..Config::default() };
        let r = frame_classification_loss(&logits, &labels(&[3, 1]), &config).unwrap();
        assert_abs_diff_eq!(r.value, 0.9 * 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn classification_rejects_bad_labels() {
        let logits = Matrix::zeros(2, 3);
        assert!(frame_classification_loss(&logits, &labels(&[1, 4]), &Config::default()).is_err());
        assert!(frame_classification_loss(&logits, &labels(&[1]), &Config::default()).is_err());
    }

    #[test]
    fn occurrence_at_zero_logits() {
        let t = Transcript::new(vec![1]).unwrap();
        let r = video_occurrence_loss(&[0.0, 0.0], &t).unwrap();
        assert_abs_diff_eq!(r.value, 2f64.ln(), epsilon = 1e-15);
        assert_eq!(r.gradient, vec![-0.25, 0.25]);
    }

    #[test]
    fn occurrence_saturates() {
        let t = Transcript::new(vec![2, 3]).unwrap();
        let r = video_occurrence_loss(&[-40.0, 40.0, 40.0], &t).unwrap();
        assert!(r.value < 1e-15);
    }

    fn embedding(frames: Vec<Vec<f64>>, protos: Vec<Vec<f64>>) -> EmbeddingSet {
        let d = frames[0].len();
        EmbeddingSet {
            frames: Matrix::new(frames.len(), d, frames.concat()).unwrap(),
            occurrence_logits: vec![0.0; protos.len()],
            prototypes: Matrix::new(protos.len(), d, protos.concat()).unwrap(),
        }
    }

    #[test]
    fn contrastive_orthogonal_prototypes() {
        // centroid of class 1 is e_1, the prototype of class 1 is e_1, others orthogonal
        let e = embedding(
            vec![vec![1.0, 0.5, 0.0], vec![1.0, -0.5, 0.0]],
            vec![vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 3.0]],
        );
        let t = Transcript::new(vec![1]).unwrap();
        let r = global_local_contrastive_loss(&e, &labels(&[1, 1]), &t, 0.2).unwrap();
        let expected = -(5f64.exp() / (5f64.exp() + 2.0)).ln();
        assert_abs_diff_eq!(r.value, expected, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_single_class_is_zero() {
        let e = embedding(vec![vec![0.3, -1.0]], vec![vec![1.0, 1.0]]);
        let t = Transcript::new(vec![1]).unwrap();
        let r = global_local_contrastive_loss(&e, &labels(&[1]), &t, 0.2).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn contrastive_scale_invariant() {
        let frames = vec![vec![0.3, -1.0, 0.2], vec![0.1, 0.4, 0.9], vec![-0.7, 0.2, 0.5]];
        let protos = vec![vec![1.0, 0.2, -0.3], vec![0.1, 1.0, 0.4], vec![0.5, -0.5, 1.0]];
        let t = Transcript::new(vec![2, 1]).unwrap();
        let y = labels(&[2, 2, 1]);
        let a = global_local_contrastive_loss(&embedding(frames.clone(), protos.clone()), &y, &t, 0.2).unwrap();
        let scaled: Vec<Vec<f64>> = frames.iter().map(|r| r.iter().map(|x| 10.0 * x).collect()).collect();
        let b = global_local_contrastive_loss(&embedding(scaled, protos), &y, &t, 0.2).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_degenerate_class() {
        let e = embedding(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let t = Transcript::new(vec![1, 3]).unwrap();
        let y = labels(&[1, 1]);
        assert!(matches!(global_local_contrastive_loss(&e, &y, &t, 0.2), Err(Error::DegenerateCentroid { class: 3 })));
        let r = global_local_contrastive_loss_skipping(&e, &y, &t, 0.2).unwrap();
        assert_eq!(r.skipped, vec![3]);
        assert!(r.loss.value.is_finite());
    }

    #[test]
    fn stage_composition() {
        let config = Config::default();
        let one = LossComponents { video: Some(0.7), ..Default::default() };
        assert_eq!(stage_loss(Stage::I, &one, &config).unwrap(), 0.7);
        let all = LossComponents { video: Some(0.7), classification: Some(0.5), contrastive: Some(0.3) };
        assert_abs_diff_eq!(stage_loss(Stage::II, &all, &config).unwrap(), 1.23, epsilon = 1e-12);
        let no_glc = Config { gamma: 0.0, ..Config::default() };
        assert_abs_diff_eq!(stage_loss(Stage::II, &all, &no_glc).unwrap(), 1.2, epsilon = 1e-12);
        assert!(matches!(
            stage_loss(Stage::II, &one, &config),
            Err(Error::MissingComponent { component: "classification", .. })
        ));
        assert!(stage_loss(Stage::I, &LossComponents::default(), &config).is_err());
    }
}
