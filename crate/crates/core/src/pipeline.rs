//! File-based pipeline plumbing: artifact formats, reproducibility
//! manifests, and stage dependency checks.
//!
//! Stages communicate only via files so any stage can be re-run or swapped.
//! Every artifact gets a sibling `<name>.manifest.json` recording input
//! digests, the effective config and the tool version; manifests contain
//! no timestamps, so reruns with identical inputs are byte-identical.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::AnnotatedDocument;
use crate::eval::{GoldSample, PredictionRecord};
use crate::instructions::{InstructedSample, InstructionCategory, InstructionSpec, TemplateOrigin};
use crate::jsonl::{self, JsonlError};
use crate::linearize::{parse_and_validate, ParseMode};
use crate::split::PartitionLabel;
use crate::wikitext::Paragraph;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum StageError {
    #[error("missing input {path}; run `forge {stage}` first")]
    MissingInput { path: String, stage: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {message}")]
    BadArtifact { path: String, message: String },
}

/// Fail fast when a dependent stage's artifact is absent.
pub fn require_input(path: &Path, produced_by: &str) -> Result<(), StageError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(StageError::MissingInput {
            path: path.display().to_string(),
            stage: produced_by.to_string(),
        })
    }
}

// --- manifests ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, JsonlError> {
    let mut reader = jsonl::open_input(path)?;
    let mut hasher = Sha256::new();
    loop {
        let chunk = reader.fill_buf().map_err(|source| JsonlError::Io {
            source,
            path: path.display().to_string(),
        })?;
        if chunk.is_empty() {
            break;
        }
        hasher.update(chunk);
        let len = chunk.len();
        reader.consume(len);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn digest(path: &Path) -> Result<FileDigest, JsonlError> {
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? })
}

/// Write `<artifact>.manifest.json` for a finished stage.
pub fn write_manifest(
    stage: &str,
    config: BTreeMap<String, serde_json::Value>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), StageError> {
    let manifest = Manifest {
        stage: stage.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        outputs: outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
    };
    let primary = outputs.first().expect("stage has at least one output");
    let path = manifest_path(primary);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    jsonl::write_atomic(&path, &bytes)?;
    Ok(())
}

pub fn manifest_path(artifact: &Path) -> std::path::PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

// --- paragraph artifact -------------------------------------------------------

/// Header line declaring the offset convention of a paragraphs file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParagraphHeader {
    pub format: String,
    pub offsets: String,
}

impl Default for ParagraphHeader {
    fn default() -> Self {
        ParagraphHeader { format: "paragraphs".into(), offsets: "unicode-scalar".into() }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ParagraphLine {
    Header(ParagraphHeader),
    Row(Paragraph),
}

pub fn write_paragraphs(path: &Path, paragraphs: &[Paragraph]) -> Result<(), StageError> {
    let mut rows: Vec<ParagraphLine> = vec![ParagraphLine::Header(ParagraphHeader::default())];
    rows.extend(paragraphs.iter().cloned().map(ParagraphLine::Row));
    jsonl::write_jsonl(path, &rows)?;
    Ok(())
}

pub fn read_paragraphs(path: &Path) -> Result<Vec<Paragraph>, StageError> {
    let rows: Vec<serde_json::Value> = jsonl::read_jsonl(path)?;
    let mut out = Vec::with_capacity(rows.len().saturating_sub(1));
    for (i, row) in rows.into_iter().enumerate() {
        if i == 0 && row.get("format").is_some() {
            let header: ParagraphHeader =
                serde_json::from_value(row).map_err(|e| StageError::BadArtifact {
                    path: path.display().to_string(),
                    message: format!("bad header: {e}"),
                })?;
            if header.offsets != "unicode-scalar" {
                return Err(StageError::BadArtifact {
                    path: path.display().to_string(),
                    message: format!("unsupported offset convention {:?}", header.offsets),
                });
            }
            continue;
        }
        let paragraph: Paragraph = serde_json::from_value(row).map_err(|e| StageError::BadArtifact {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?;
        out.push(paragraph);
    }
    Ok(out)
}

// --- annotated documents -----------------------------------------------------

pub fn write_annotated(path: &Path, docs: &[AnnotatedDocument]) -> Result<(), StageError> {
    Ok(jsonl::write_jsonl(path, docs)?)
}

pub fn read_annotated(path: &Path) -> Result<Vec<AnnotatedDocument>, StageError> {
    Ok(jsonl::read_jsonl(path)?)
}

// --- instruction samples ------------------------------------------------------

/// On-disk sample row: the four training-facing keys plus bookkeeping
/// needed to score and partition evaluation sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub instruction: String,
    pub input: String,
    /// Linearized target JSON text.
    pub output: String,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub doc_id: String,
    pub category: InstructionCategory,
    pub origin: TemplateOrigin,
    pub run: u32,
    pub k_overflow: bool,
    pub spec: InstructionSpec,
    /// Qids of the target mentions, in mention order; what entity-partition
    /// labeling joins on.
    #[serde(default)]
    pub mention_qids: Vec<String>,
}

impl SampleRow {
    pub fn from_sample(sample: &InstructedSample) -> SampleRow {
        SampleRow {
            sample_id: sample.sample_id.clone(),
            instruction: sample.instruction_text.clone(),
            input: sample.input_text.clone(),
            output: crate::linearize::serialize(&sample.target),
            meta: SampleMeta {
                doc_id: sample.target.doc_id.clone(),
                category: sample.spec.category,
                origin: sample.template_origin,
                run: sample.run,
                k_overflow: sample.k_overflow,
                spec: sample.spec.clone(),
                mention_qids: sample.target.mentions.iter().map(|m| m.profile.qid.clone()).collect(),
            },
        }
    }
}

pub fn write_samples(path: &Path, samples: &[SampleRow]) -> Result<(), StageError> {
    Ok(jsonl::write_jsonl(path, samples)?)
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRow>, StageError> {
    Ok(jsonl::read_jsonl(path)?)
}

/// Turn stored sample rows plus an optional partition sidecar into
/// scoreable gold samples. Gold `output` text must re-parse strictly.
pub fn gold_samples(
    samples: &[SampleRow],
    labels: Option<&[PartitionLabel]>,
    path: &Path,
) -> Result<Vec<GoldSample>, StageError> {
    let by_id: std::collections::HashMap<&str, &PartitionLabel> = labels
        .unwrap_or(&[])
        .iter()
        .map(|l| (l.sample_id.as_str(), l))
        .collect();
    samples
        .iter()
        .map(|row| {
            let target = parse_and_validate(&row.output, ParseMode::Strict).ok().ok_or_else(|| {
                StageError::BadArtifact {
                    path: path.display().to_string(),
                    message: format!("sample {} has invalid gold output", row.sample_id),
                }
            })?;
            let label = by_id.get(row.sample_id.as_str());
            Ok(GoldSample {
                sample_id: row.sample_id.clone(),
                category: row.meta.category,
                spec: row.meta.spec.clone(),
                run: row.meta.run,
                target,
                instruction_partition: label.map(|l| l.instruction_partition),
                mention_partitions: label.map(|l| l.mention_partitions.clone()).unwrap_or_default(),
            })
        })
        .collect()
}

// --- predictions ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRow {
    sample_id: String,
    output_text: String,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, StageError> {
    let rows: Vec<PredictionRow> = jsonl::read_jsonl(path)?;
    Ok(rows
        .into_iter()
        .map(|r| PredictionRecord { sample_id: r.sample_id, raw_text: r.output_text })
        .collect())
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<(), StageError> {
    let rows: Vec<PredictionRow> = preds
        .iter()
        .map(|p| PredictionRow { sample_id: p.sample_id.clone(), output_text: p.raw_text.clone() })
        .collect();
    Ok(jsonl::write_jsonl(path, &rows)?)
}

pub fn write_partitions(path: &Path, labels: &[PartitionLabel]) -> Result<(), StageError> {
    Ok(jsonl::write_jsonl(path, labels)?)
}

pub fn read_partitions(path: &Path) -> Result<Vec<PartitionLabel>, StageError> {
    Ok(jsonl::read_jsonl(path)?)
}
