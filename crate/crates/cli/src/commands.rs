use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atba::eval::{iou_iod, mof, mof_bg, CorpusMetrics, CorpusReport};
use atba::io::{self, FORMAT_VERSION};
use atba::oracles::{class_agnostic_baseline, exhaustive_segmentation_aligner};
use atba::pipeline::run_pipeline;
use atba::{bench, boundary, synth, Config, Diagnostics, Fusion, ProbabilitySequence, PseudoLabels, Transcript};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Baseline, Cli, Command, Format, FusionArg, Suite};

const REPORT_FILE: &str = "report.json";
const DIAGNOSTICS_SUFFIX: &str = ".diagnostics.json";
const CONTRAST_FRAMES: usize = 2000;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { spec, out } => generate(cli, spec, out),
        Command::Score { probs, config, out } => score(cli, probs, config.as_deref(), out.as_deref()),
        Command::Align { corpus: Some(manifest), config, baseline, fusion, out, .. } => {
            let out = out.as_deref().expect("clap requires --out with --corpus");
            align_corpus(cli, manifest, config.as_deref(), Method::new(*baseline, *fusion), out)
        }
        Command::Align { probs: Some(probs), transcript: Some(transcript), config, baseline, fusion, out, .. } => {
            align_one(cli, probs, transcript, config.as_deref(), Method::new(*baseline, *fusion), out.as_deref())
        }
        Command::Align { .. } => bail!("align needs --probs with --transcript, or --corpus"),
        Command::Evaluate { pred, truth, background } => evaluate(cli, pred, truth, *background),
        Command::Bench { suite, out, frames, actions, instances } => {
            run_bench(cli, *suite, out.as_deref(), frames, *actions, *instances)
        }
    }
}

fn render<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(value).expect("reports serialize to JSON");
            s.push('\n');
            s
        }
        Format::Text => text(),
    }
}

fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) {
    print!("{}", render(cli.format, value, text));
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(io::read_config(p)?),
        None => Ok(Config::default()),
    }
}

fn generate(cli: &Cli, spec_path: &Path, out: &Path) -> Result<()> {
    let mut spec = io::read_spec(spec_path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let manifest = synth::generate_corpus(&spec, out)?;
    let frames: usize = manifest.videos.iter().map(|v| v.frames).sum();
    let path = out.join(io::MANIFEST_FILE);
    let summary = serde_json::json!({ "videos": manifest.videos.len(), "frames": frames, "manifest": path });
    emit(cli, &summary, || format!("wrote {} videos ({frames} frames) to {}\n", manifest.videos.len(), out.display()));
    Ok(())
}

#[derive(Serialize)]
struct ScoreDoc {
    format_version: u32,
    frames: usize,
    boundary_window: usize,
    /// Score of frame `t` at index `t - 1`.
    scores: Vec<f64>,
}

fn score(cli: &Cli, probs: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let seq = io::read_probabilities(probs)?;
    let scores = boundary::score_boundaries(&seq, &config).with_context(|| format!("scoring {}", probs.display()))?;
    let doc = ScoreDoc {
        format_version: FORMAT_VERSION,
        frames: scores.len(),
        boundary_window: config.boundary_window,
        scores: scores.scores().to_vec(),
    };
    let body =
        render(cli.format, &doc, || doc.scores.iter().enumerate().map(|(t, s)| format!("{} {s}\n", t + 1)).collect());
    match out {
        Some(path) => write_file(path, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Method {
    Pipeline(Fusion),
    ClassAgnostic,
    ViterbiOracle,
}

impl Method {
    fn new(baseline: Option<Baseline>, fusion: FusionArg) -> Self {
        match (baseline, fusion) {
            (Some(Baseline::ClassAgnostic), _) => Method::ClassAgnostic,
            (Some(Baseline::ViterbiOracle), _) => Method::ViterbiOracle,
            (None, FusionArg::Combined) => Method::Pipeline(Fusion::Combined),
            (None, FusionArg::TransitionOnly) => Method::Pipeline(Fusion::TransitionOnly),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Pipeline(Fusion::Combined) => "pipeline",
            Method::Pipeline(Fusion::TransitionOnly) => "pipeline-transition-only",
            Method::ClassAgnostic => "class-agnostic",
            Method::ViterbiOracle => "viterbi-oracle",
        }
    }

    fn label(
        self,
        seq: &ProbabilitySequence,
        transcript: &Transcript,
        config: &Config,
    ) -> atba::Result<(PseudoLabels, Option<Diagnostics>)> {
        match self {
            Method::Pipeline(fusion) => {
                run_pipeline(seq, transcript, config, fusion).map(|o| (o.labels, Some(o.diagnostics)))
            }
            Method::ClassAgnostic => {
                class_agnostic_baseline(seq, transcript, config).map(|o| (o.labels, Some(o.diagnostics)))
            }
            Method::ViterbiOracle => exhaustive_segmentation_aligner(seq, transcript).map(|l| (l, None)),
        }
    }
}

#[derive(Serialize)]
struct AlignDoc<'a> {
    format_version: u32,
    video_id: &'a str,
    method: &'static str,
    labels: &'a [u32],
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<&'a Diagnostics>,
}

fn segments_text(labels: &PseudoLabels) -> String {
    labels.to_segmentation().segments().iter().map(|s| format!("{} {} {}\n", s.class, s.start, s.end)).collect()
}

fn align_one(
    cli: &Cli,
    probs: &Path,
    transcript: &Path,
    config: Option<&Path>,
    method: Method,
    out: Option<&Path>,
) -> Result<()> {
    let config = load_config(config)?;
    let seq = io::read_probabilities(probs)?;
    let vt = io::read_transcript(transcript)?;
    let (labels, diagnostics) =
        method.label(&seq, &vt.transcript, &config).with_context(|| format!("aligning {}", probs.display()))?;
    if let Some(path) = out {
        io::write_labels(path, &vt.video_id, &labels)?;
    }
    let doc = AlignDoc {
        format_version: FORMAT_VERSION,
        video_id: &vt.video_id,
        method: method.name(),
        labels: labels.labels(),
        diagnostics: diagnostics.as_ref(),
    };
    emit(cli, &doc, || {
        let mut s = segments_text(&labels);
        if let Some(d) = &diagnostics {
            s.push_str(&format!(
                "# outcome {:?}, boundaries {:?}, candidates {}\n",
                d.outcome,
                d.boundaries,
                d.candidates.len()
            ));
        }
        s
    });
    Ok(())
}

#[derive(Serialize)]
struct DiagnosticsDoc<'a> {
    format_version: u32,
    video_id: &'a str,
    #[serde(flatten)]
    diagnostics: &'a Diagnostics,
}

#[derive(Serialize)]
struct VideoFailure {
    id: String,
    kind: &'static str,
    error: String,
}

#[derive(Serialize)]
struct VideoAccuracy {
    id: String,
    pl: f64,
}

#[derive(Serialize)]
struct AlignReport {
    format_version: u32,
    method: &'static str,
    videos: usize,
    failed: Vec<VideoFailure>,
    per_video: Vec<VideoAccuracy>,
    /// Absent when every video failed.
    metrics: Option<CorpusReport>,
}

fn failure(id: &str, err: &anyhow::Error) -> VideoFailure {
    let kind = err.chain().find_map(|e| e.downcast_ref::<atba::Error>()).map_or("cli", atba::Error::kind);
    VideoFailure { id: id.to_string(), kind, error: format!("{err:#}") }
}

fn align_corpus(cli: &Cli, manifest_path: &Path, config: Option<&Path>, method: Method, out: &Path) -> Result<()> {
    let config = load_config(config)?;
    let manifest = io::read_manifest(manifest_path)?;
    let root = manifest_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    io::create_dir(out)?;

    let results: Vec<(String, Result<(PseudoLabels, PseudoLabels)>)> = manifest
        .videos
        .par_iter()
        .map(|entry| {
            let result = (|| -> Result<(PseudoLabels, PseudoLabels)> {
                let seq = io::read_probabilities(&root.join(&entry.files.probabilities))?;
                let vt = io::read_transcript(&root.join(&entry.files.transcript))?;
                if vt.video_id != entry.id {
                    bail!("transcript belongs to {:?}, manifest entry is {:?}", vt.video_id, entry.id);
                }
                let (labels, diagnostics) = method.label(&seq, &vt.transcript, &config)?;
                io::write_labels(&out.join(format!("{}{}", entry.id, io::LABELS_SUFFIX)), &entry.id, &labels)?;
                if let Some(d) = &diagnostics {
                    let doc = DiagnosticsDoc { format_version: FORMAT_VERSION, video_id: &entry.id, diagnostics: d };
                    io::write_document(&out.join(format!("{}{DIAGNOSTICS_SUFFIX}", entry.id)), &doc)?;
                }
                let truth = io::read_labels(&root.join(&entry.files.truth))?.labels;
                Ok((labels, truth))
            })();
            (entry.id.clone(), result.with_context(|| format!("video {}", entry.id)))
        })
        .collect();

    let mut metrics = CorpusMetrics::new(manifest.spec.background);
    let mut failed = Vec::new();
    let mut per_video = Vec::new();
    for (id, result) in results.iter() {
        let scored = result.as_ref().map_err(|e| failure(id, e)).and_then(|(labels, truth)| {
            metrics.add(labels, truth).and_then(|()| mof(labels, truth)).map_err(|e| failure(id, &e.into()))
        });
        match scored {
            Ok(pl) => per_video.push(VideoAccuracy { id: id.clone(), pl }),
            Err(f) => failed.push(f),
        }
    }
    let report = AlignReport {
        format_version: FORMAT_VERSION,
        method: method.name(),
        videos: results.len(),
        metrics: (!per_video.is_empty()).then(|| metrics.report()).transpose()?,
        failed,
        per_video,
    };
    io::write_document(&out.join(REPORT_FILE), &report)?;
    emit(cli, &report, || {
        let mut s = format!("method {}, {} videos, {} failed\n", report.method, report.videos, report.failed.len());
        if let Some(m) = &report.metrics {
            s.push_str(&format!(
                "P.L. {:.2} (frame-weighted), {:.2} (video mean); MoF {:.2}, IoU {:.2}, IoD {:.2}\n",
                m.pl_frame_weighted, m.pl_video_averaged, m.mof, m.iou, m.iod
            ));
        }
        for f in &report.failed {
            s.push_str(&format!("failed {}: {}\n", f.id, f.error));
        }
        s
    });
    if !report.failed.is_empty() {
        bail!("{} of {} videos failed", report.failed.len(), report.videos);
    }
    Ok(())
}

#[derive(Serialize)]
struct VideoMetrics {
    id: String,
    mof: f64,
    mof_bg: Option<f64>,
    iou: f64,
    iod: f64,
}

#[derive(Serialize)]
struct EvaluationReport {
    format_version: u32,
    background: Option<u32>,
    videos: Vec<VideoMetrics>,
    corpus: CorpusReport,
}

fn evaluate(cli: &Cli, pred_dir: &Path, truth_dir: &Path, background: Option<u32>) -> Result<()> {
    let pred = io::read_labels_dir(pred_dir)?;
    let truth = io::read_labels_dir(truth_dir)?;
    let pred_ids: BTreeSet<&String> = pred.keys().collect();
    let truth_ids: BTreeSet<&String> = truth.keys().collect();
    let missing: Vec<&&String> = truth_ids.difference(&pred_ids).collect();
    let extra: Vec<&&String> = pred_ids.difference(&truth_ids).collect();
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "video sets differ: missing from {}: {missing:?}; not in {}: {extra:?}",
            pred_dir.display(),
            truth_dir.display()
        );
    }
    if truth.is_empty() {
        bail!("no *{} files in {}", io::LABELS_SUFFIX, truth_dir.display());
    }

    let mut corpus = CorpusMetrics::new(background);
    let mut videos = Vec::with_capacity(truth.len());
    for (id, t) in &truth {
        let p = &pred[id];
        corpus.add(p, t).with_context(|| format!("video {id}"))?;
        let (iou, iod) = iou_iod(&p.to_segmentation(), &t.to_segmentation())?;
        videos.push(VideoMetrics {
            id: id.clone(),
            mof: mof(p, t)?,
            mof_bg: background.and_then(|bg| mof_bg(p, t, bg).ok()),
            iou,
            iod,
        });
    }
    let report = EvaluationReport { format_version: FORMAT_VERSION, background, videos, corpus: corpus.report()? };
    emit(cli, &report, || {
        let c = &report.corpus;
        let bg = c.mof_bg.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        format!(
            "videos {}  frames {}\nMoF {:.2}  MoF-Bg {bg}  IoU {:.2}  IoD {:.2}\nP.L. {:.2} (frame-weighted)  {:.2} (video mean)\n",
            c.videos, c.frames, c.mof, c.iou, c.iod, c.pl_frame_weighted, c.pl_video_averaged
        )
    });
    Ok(())
}

fn run_bench(
    cli: &Cli,
    suite: Suite,
    out: Option<&Path>,
    frames: &[usize],
    actions: Option<usize>,
    instances: usize,
) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let body = match suite {
        Suite::AlignmentScaling => {
            let r = bench::alignment_scaling(frames, actions.unwrap_or(11), seed)?;
            render(cli.format, &r, || r.to_string())
        }
        Suite::OracleEquivalence => {
            let r = bench::oracle_equivalence(instances, 12, 6, seed)?;
            render(cli.format, &r, || r.to_string())
        }
        Suite::OracleContrast => {
            let r = bench::oracle_contrast(CONTRAST_FRAMES, actions.unwrap_or(8), seed)?;
            render(cli.format, &r, || r.to_string())
        }
    };
    if let Some(path) = out {
        write_file(path, &body)?;
    }
    print!("{body}");
    Ok(())
}
