//! File formats.
//!
//! Probability matrices are binary: the 8-byte magic `ATBAPSEQ`, `T` and `C`
//! as little-endian `u32`, then `T * C` little-endian `f64` in row-major order
//! (frame 1 first). Files ending in `.txt` are read as text instead, one frame
//! per line with space-separated decimals.
//!
//! Every other document is JSON carrying `format_version`. Frames and class
//! indices inside documents are 1-based. Writers emit pretty JSON with a
//! trailing newline and a fixed key order, so equal inputs give equal bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{ClassId, Config, ProbabilitySequence, PseudoLabels, Segment, Segmentation, Transcript};
use crate::objectives::{EmbeddingSet, Matrix};
use crate::synth::{GeneratorSpec, SyntheticVideo};

pub const MAGIC: &[u8; 8] = b"ATBAPSEQ";
pub const HEADER_LEN: usize = 16;
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_DIR: &str = "truth";
pub const LABELS_SUFFIX: &str = ".labels.json";

fn format_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), offset: offset as u64, message: message.into() }
}

fn schema_error(path: &Path, field: impl Into<String>, message: impl ToString) -> Error {
    Error::Schema { path: path.to_path_buf(), field: field.into(), message: message.to_string() }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_probabilities(sequence: &ProbabilitySequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * sequence.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(sequence.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(sequence.classes() as u32).to_le_bytes());
    for v in sequence.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `path` only labels errors.
pub fn decode_probabilities(bytes: &[u8], path: &Path) -> Result<ProbabilitySequence> {
    if bytes.len() < HEADER_LEN {
        return Err(format_error(
            path,
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(format_error(path, 0, "bad magic, expected ATBAPSEQ"));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let classes = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expected = u64::from(frames)
        .checked_mul(u64::from(classes))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| format_error(path, 8, format!("dimension overflow: {frames} x {classes}")))?;
    if bytes.len() < expected {
        return Err(format_error(
            path,
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_error(
            path,
            expected,
            format!("trailing data: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ProbabilitySequence::new(frames as usize, classes as usize, values)
}

/// Text form; `Display` for `f64` is the shortest exact representation, so
/// the text round-trips bit for bit.
pub fn encode_probabilities_text(sequence: &ProbabilitySequence) -> String {
    let mut out = String::new();
    for t in 0..sequence.frames() {
        let row: Vec<String> = sequence.row(t).iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_probabilities_text(bytes: &[u8], path: &Path) -> Result<ProbabilitySequence> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| format_error(path, e.valid_up_to(), "text probability file is not valid UTF-8"))?;
    let mut values = Vec::new();
    let mut classes = None;
    let mut frames = 0;
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let offset = line_start;
        line_start += line.len();
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for token in line.split_ascii_whitespace() {
            let at = offset + (token.as_ptr() as usize - line.as_ptr() as usize);
            let v: f64 = token.parse().map_err(|_| format_error(path, at, format!("not a number: {token:?}")))?;
            values.push(v);
            count += 1;
        }
        match classes {
            None => classes = Some(count),
            Some(c) if c != count => {
                return Err(format_error(
                    path,
                    offset,
                    format!("frame {} has {count} values, earlier frames have {c}", frames + 1),
                ));
            }
            Some(_) => {}
        }
        frames += 1;
    }
    ProbabilitySequence::new(frames, classes.unwrap_or(0), values)
}

pub fn is_text_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt"))
}

pub fn read_probabilities(path: &Path) -> Result<ProbabilitySequence> {
    let bytes = read_bytes(path)?;
    if is_text_path(path) {
        decode_probabilities_text(&bytes, path)
    } else {
        decode_probabilities(&bytes, path)
    }
}

/// Binary, or text when `path` ends in `.txt`.
pub fn write_probabilities(path: &Path, sequence: &ProbabilitySequence) -> Result<()> {
    if is_text_path(path) {
        write_bytes(path, encode_probabilities_text(sequence).as_bytes())
    } else {
        write_bytes(path, &encode_probabilities(sequence))
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = bytes.split_inclusive(|&b| b == b'\n').take(line - 1).map(<[u8]>::len).sum();
    (start + column.saturating_sub(1)).min(bytes.len())
}

fn parse_json(bytes: &[u8], path: &Path) -> Result<Value> {
    serde_json::from_slice(bytes)
        .map_err(|e| format_error(path, byte_offset(bytes, e.line(), e.column()), format!("invalid JSON: {e}")))
}

fn check_version(value: &Value, path: &Path) -> Result<()> {
    let Some(object) = value.as_object() else {
        return Err(schema_error(path, ".", "expected a JSON object"));
    };
    let found = object
        .get("format_version")
        .ok_or_else(|| schema_error(path, "format_version", "missing"))?
        .as_u64()
        .ok_or_else(|| schema_error(path, "format_version", "expected a non-negative integer"))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn from_value<T: DeserializeOwned>(value: Value, path: &Path) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        schema_error(path, field, e.into_inner())
    })
}

/// Parses a versioned document; unknown versions fail before the schema.
pub fn parse_document<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T> {
    let value = parse_json(bytes, path)?;
    check_version(&value, path)?;
    from_value(value, path)
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_document(&read_bytes(path)?, path)
}

pub fn encode_document<T: Serialize>(doc: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(doc).expect("documents serialize to JSON");
    bytes.push(b'\n');
    bytes
}

pub fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    write_bytes(path, &encode_document(doc))
}

/// A struct stored with `format_version` beside its own fields.
fn parse_flat<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T> {
    let mut value = parse_json(bytes, path)?;
    check_version(&value, path)?;
    value.as_object_mut().expect("checked above").remove("format_version");
    from_value(value, path)
}

fn encode_flat<T: Serialize>(inner: &T) -> Vec<u8> {
    let mut value = serde_json::to_value(inner).expect("documents serialize to JSON");
    value
        .as_object_mut()
        .expect("struct serializes to an object")
        .insert("format_version".into(), FORMAT_VERSION.into());
    encode_document(&value)
}

pub fn parse_config(bytes: &[u8], path: &Path) -> Result<Config> {
    let config: Config = parse_flat(bytes, path)?;
    config.validate().map_err(|e| schema_error(path, ".", e))?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<Config> {
    parse_config(&read_bytes(path)?, path)
}

pub fn write_config(path: &Path, config: &Config) -> Result<()> {
    write_bytes(path, &encode_flat(config))
}

pub fn read_spec(path: &Path) -> Result<GeneratorSpec> {
    let spec: GeneratorSpec = parse_flat(&read_bytes(path)?, path)?;
    spec.validate().map_err(|e| schema_error(path, ".", e))?;
    Ok(spec)
}

pub fn write_spec(path: &Path, spec: &GeneratorSpec) -> Result<()> {
    write_bytes(path, &encode_flat(spec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscriptDoc {
    format_version: u32,
    video_id: String,
    actions: Vec<ClassId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoTranscript {
    pub video_id: String,
    pub transcript: Transcript,
}

pub fn parse_transcript(bytes: &[u8], path: &Path) -> Result<VideoTranscript> {
    let doc: TranscriptDoc = parse_document(bytes, path)?;
    let transcript = Transcript::new(doc.actions).map_err(|e| schema_error(path, "actions", e))?;
    Ok(VideoTranscript { video_id: doc.video_id, transcript })
}

pub fn read_transcript(path: &Path) -> Result<VideoTranscript> {
    parse_transcript(&read_bytes(path)?, path)
}

pub fn encode_transcript(video_id: &str, transcript: &Transcript) -> Vec<u8> {
    encode_document(&TranscriptDoc {
        format_version: FORMAT_VERSION,
        video_id: video_id.into(),
        actions: transcript.actions().to_vec(),
    })
}

pub fn write_transcript(path: &Path, video_id: &str, transcript: &Transcript) -> Result<()> {
    write_bytes(path, &encode_transcript(video_id, transcript))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsDoc {
    format_version: u32,
    video_id: String,
    labels: Vec<ClassId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoLabels {
    pub video_id: String,
    pub labels: PseudoLabels,
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<VideoLabels> {
    let doc: LabelsDoc = parse_document(bytes, path)?;
    let labels = PseudoLabels::new(doc.labels).map_err(|e| schema_error(path, "labels", e))?;
    Ok(VideoLabels { video_id: doc.video_id, labels })
}

pub fn read_labels(path: &Path) -> Result<VideoLabels> {
    parse_labels(&read_bytes(path)?, path)
}

pub fn encode_labels(video_id: &str, labels: &PseudoLabels) -> Vec<u8> {
    encode_document(&LabelsDoc {
        format_version: FORMAT_VERSION,
        video_id: video_id.into(),
        labels: labels.labels().to_vec(),
    })
}

pub fn write_labels(path: &Path, video_id: &str, labels: &PseudoLabels) -> Result<()> {
    write_bytes(path, &encode_labels(video_id, labels))
}

/// Every `*.labels.json` directly under `dir`, keyed by the `video_id`
/// inside the file.
pub fn read_labels_dir(dir: &Path) -> Result<BTreeMap<String, PseudoLabels>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(LABELS_SUFFIX)));
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let doc = read_labels(&path)?;
        if out.insert(doc.video_id.clone(), doc.labels).is_some() {
            return Err(schema_error(
                &path,
                "video_id",
                format!("duplicate video id {:?} in {}", doc.video_id, dir.display()),
            ));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentationDoc {
    format_version: u32,
    video_id: String,
    segments: Vec<Segment>,
}

pub fn read_segmentation(path: &Path) -> Result<(String, Segmentation)> {
    let doc: SegmentationDoc = read_document(path)?;
    let segmentation = Segmentation::new(doc.segments).map_err(|e| schema_error(path, "segments", e))?;
    Ok((doc.video_id, segmentation))
}

pub fn write_segmentation(path: &Path, video_id: &str, segmentation: &Segmentation) -> Result<()> {
    write_document(
        path,
        &SegmentationDoc {
            format_version: FORMAT_VERSION,
            video_id: video_id.into(),
            segments: segmentation.segments().to_vec(),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingsDoc {
    format_version: u32,
    video_id: String,
    frames: Vec<Vec<f64>>,
    prototypes: Vec<Vec<f64>>,
    occurrence_logits: Vec<f64>,
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str, path: &Path) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(schema_error(
            path,
            format!("{field}[{i}]"),
            format!("expected {cols} values, found {}", rows[i].len()),
        ));
    }
    Matrix::new(rows.len(), cols, rows.concat())
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn read_embeddings(path: &Path) -> Result<(String, EmbeddingSet)> {
    let doc: EmbeddingsDoc = read_document(path)?;
    let set = EmbeddingSet {
        frames: rows_to_matrix(&doc.frames, "frames", path)?,
        prototypes: rows_to_matrix(&doc.prototypes, "prototypes", path)?,
        occurrence_logits: doc.occurrence_logits,
    };
    set.validate().map_err(|e| schema_error(path, ".", e))?;
    Ok((doc.video_id, set))
}

pub fn write_embeddings(path: &Path, video_id: &str, set: &EmbeddingSet) -> Result<()> {
    write_document(
        path,
        &EmbeddingsDoc {
            format_version: FORMAT_VERSION,
            video_id: video_id.into(),
            frames: matrix_rows(&set.frames),
            prototypes: matrix_rows(&set.prototypes),
            occurrence_logits: set.occurrence_logits.clone(),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyEntry {
    pub index: ClassId,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub format_version: u32,
    pub classes: Vec<VocabularyEntry>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Self {
        let classes =
            names.into_iter().enumerate().map(|(i, name)| VocabularyEntry { index: i as ClassId + 1, name }).collect();
        Self { format_version: FORMAT_VERSION, classes }
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        self.classes.iter().find(|e| e.index == class).map(|e| e.name.as_str())
    }
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let vocab: Vocabulary = read_document(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for (i, entry) in vocab.classes.iter().enumerate() {
        if entry.index == 0 {
            return Err(schema_error(path, format!("classes[{i}].index"), "class indices start at 1"));
        }
        if !seen.insert(entry.index) {
            return Err(schema_error(path, format!("classes[{i}].index"), format!("duplicate index {}", entry.index)));
        }
    }
    Ok(vocab)
}

pub fn write_vocabulary(path: &Path, vocabulary: &Vocabulary) -> Result<()> {
    write_document(path, vocabulary)
}

/// Paths relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoFiles {
    pub probabilities: String,
    pub transcript: String,
    pub embeddings: String,
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub files: VideoFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: GeneratorSpec,
    pub videos: Vec<VideoEntry>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    read_document(path)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_document(path, manifest)
}

/// Writes one generated video under `dir` and returns its manifest entry.
pub fn write_video(dir: &Path, video: &SyntheticVideo) -> Result<VideoEntry> {
    let id = &video.id;
    let files = VideoFiles {
        probabilities: format!("{id}.probs"),
        transcript: format!("{id}.transcript.json"),
        embeddings: format!("{id}.embeddings.json"),
        truth: format!("{TRUTH_DIR}/{id}{LABELS_SUFFIX}"),
    };
    write_probabilities(&dir.join(&files.probabilities), &video.probabilities)?;
    write_transcript(&dir.join(&files.transcript), id, &video.transcript)?;
    write_embeddings(&dir.join(&files.embeddings), id, &video.embeddings)?;
    write_labels(&dir.join(&files.truth), id, &video.truth)?;
    Ok(VideoEntry { id: id.clone(), frames: video.truth.len(), files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.probs")
    }

    #[test]
    fn binary_size_and_round_trip() {
        let seq = ProbabilitySequence::new(1, 2, vec![0.5, 0.5]).unwrap();
        let bytes = encode_probabilities(&seq);
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[..8], b"ATBAPSEQ");
        assert_eq!(decode_probabilities(&bytes, p()).unwrap(), seq);
    }

    #[test]
    fn binary_errors_carry_offsets() {
        let seq = ProbabilitySequence::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let bytes = encode_probabilities(&seq);
        match decode_probabilities(&bytes[..40], p()) {
            Err(Error::Format { offset: 40, message, .. }) => {
                assert!(message.contains("expected 48") && message.contains("found 40"), "{message}")
            }
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_probabilities(&bad, p()), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_probabilities(&bytes[..10], p()), Err(Error::Format { offset: 10, .. })));
        let mut huge = bytes[..16].to_vec();
        huge[8..16].copy_from_slice(&[0xff; 8]);
        assert!(decode_probabilities(&huge, p()).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_probabilities(&long, p()), Err(Error::Format { offset: 48, .. })));
    }

    #[test]
    fn text_round_trip_and_errors() {
        let seq = ProbabilitySequence::new(2, 3, vec![0.1, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let text = encode_probabilities_text(&seq);
        assert_eq!(decode_probabilities_text(text.as_bytes(), p()).unwrap(), seq);
        let err = decode_probabilities_text(b"0.5 0.5\n0.5 x\n", p()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 12, .. }), "{err:?}");
        let err = decode_probabilities_text(b"0.5 0.5\n1.0\n", p()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 8, .. }), "{err:?}");
    }

    #[test]
    fn transcript_round_trip_and_rejections() {
        let t = Transcript::new(vec![3, 1, 3]).unwrap();
        let bytes = encode_transcript("v1", &t);
        let back = parse_transcript(&bytes, p()).unwrap();
        assert_eq!((back.video_id.as_str(), back.transcript), ("v1", t));

        let dup = br#"{"format_version": 1, "video_id": "v", "actions": [2, 2]}"#;
        assert!(matches!(parse_transcript(dup, p()), Err(Error::Schema { field, .. }) if field == "actions"));
        let v2 = br#"{"format_version": 2, "video_id": "v", "actions": [1]}"#;
        assert!(matches!(parse_transcript(v2, p()), Err(Error::UnsupportedVersion { found: 2, expected: 1, .. })));
        let none = br#"{"video_id": "v", "actions": [1]}"#;
        assert!(matches!(parse_transcript(none, p()), Err(Error::Schema { field, .. }) if field == "format_version"));
        let wrong = br#"{"format_version": 1, "video_id": "v", "actions": [1, "a"]}"#;
        assert!(matches!(parse_transcript(wrong, p()), Err(Error::Schema { field, .. }) if field == "actions[1]"));
    }

    #[test]
    fn json_syntax_error_offset() {
        let bytes = b"{\n  \"format_version\": 1,\n  oops\n}";
        match parse_transcript(bytes, p()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 27),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_flat_document() {
        let config = Config { background: Some(4), ..Config::default() };
        let bytes = encode_flat(&config);
        assert!(std::str::from_utf8(&bytes).unwrap().contains("\"format_version\": 1"));
        assert_eq!(parse_config(&bytes, p()).unwrap(), config);
        let unknown = br#"{"format_version": 1, "windw": 3}"#;
        assert!(matches!(parse_config(unknown, p()), Err(Error::Schema { .. })));
        let even = br#"{"format_version": 1, "boundary_window": 4}"#;
        assert!(matches!(parse_config(even, p()), Err(Error::Schema { .. })));
    }
}
