//! Dataset manifest and YOLO-style label parsing.
//!
//! A manifest is a UTF-8 comma-delimited file with a required header
//! `record_id,payload_ref,label,split`, one record per line. Teachers never
//! read pixels in this framework, so the payload path need not exist on
//! disk; the manifest's binary label is authoritative.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DatasetRecord, Split};

pub const DEFAULT_FEATURE_DIM: usize = 1536;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("duplicate record_id {0:?}")]
    DuplicateRecordId(String),
    #[error("unknown split {split:?} for record {record_id:?}")]
    UnknownSplit { record_id: String, split: String },
    #[error("non-binary label {label:?} for record {record_id:?}")]
    NonBinaryLabel { record_id: String, label: String },
    #[error("malformed label line {line:?}: {reason}")]
    MalformedLabelLine { line: String, reason: String },
    #[error("label line {line:?} has geometry value {value} outside [0, 1]")]
    GeometryOutOfRange { line: String, value: f64 },
}

/// Settings applied while loading a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Declared hidden-feature dimension for small-teacher outputs.
    pub feature_dim: usize,
    /// Dataset name recorded on the manifest.
    pub name: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            feature_dim: DEFAULT_FEATURE_DIM,
            name: "dataset".to_string(),
        }
    }
}

/// An immutable, loaded dataset with per-split counts fixed at load time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    name: String,
    feature_dim: usize,
    records: Vec<DatasetRecord>,
    split_counts: [usize; 3],
}

impl DatasetManifest {
    /// Assemble a manifest from records, enforcing id uniqueness and binary
    /// labels. Used by the loader and by tests that build datasets in memory.
    pub fn from_records(
        name: impl Into<String>,
        feature_dim: usize,
        records: Vec<DatasetRecord>,
    ) -> Result<Self, IngestError> {
        assert!(feature_dim > 0, "feature_dim must be positive");
        let mut seen = HashSet::new();
        let mut split_counts = [0usize; 3];
        for record in &records {
            if !seen.insert(record.record_id.clone()) {
                return Err(IngestError::DuplicateRecordId(record.record_id.clone()));
            }
            if record.label > 1 {
                return Err(IngestError::NonBinaryLabel {
                    record_id: record.record_id.clone(),
                    label: record.label.to_string(),
                });
            }
            split_counts[split_index(record.split)] += 1;
        }
        Ok(DatasetManifest {
            name: name.into(),
            feature_dim,
            records,
            split_counts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split_counts[split_index(split)]
    }

    /// Records of one split, in manifest order.
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn split_index(split: Split) -> usize {
    match split {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }
}

/// Load a manifest file (see module docs for the format).
pub fn load_manifest(path: &Path, config: &IngestConfig) -> Result<DatasetManifest, IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(source),
            other => IngestError::MalformedManifest(format!("{other:?}")),
        })?;

    {
        let headers = reader
            .headers()
            .map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
        let expected = ["record_id", "payload_ref", "label", "split"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(IngestError::MalformedManifest(format!(
                "expected header {expected:?}, got {got:?}"
            )));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
        if row.len() != 4 {
            return Err(IngestError::MalformedManifest(format!(
                "expected 4 fields, got {} in row {:?}",
                row.len(),
                row
            )));
        }
        let record_id = row[0].to_string();
        let payload_ref = row[1].to_string();
        let label = match &row[2] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(IngestError::NonBinaryLabel {
                    record_id,
                    label: other.to_string(),
                })
            }
        };
        let split = Split::parse(&row[3]).ok_or_else(|| IngestError::UnknownSplit {
            record_id: record_id.clone(),
            split: row[3].to_string(),
        })?;
        records.push(DatasetRecord {
            record_id,
            payload_ref,
            label,
            split,
        });
    }

    DatasetManifest::from_records(config.name.clone(), config.feature_dim, records)
}

/// Write a manifest back out in the canonical loadable format.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: path.display().to_string(),
            source,
        },
        other => IngestError::MalformedManifest(format!("{other:?}")),
    })?;
    writer
        .write_record(["record_id", "payload_ref", "label", "split"])
        .map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
    for record in manifest.records() {
        writer
            .write_record([
                record.record_id.as_str(),
                record.payload_ref.as_str(),
                &record.label.to_string(),
                record.split.as_str(),
            ])
            .map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        })
}

/// One line of a YOLO-style label file: class then normalized box geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct YoloLabelLine {
    pub class_index: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Parse one space-delimited label line: `class cx cy w h`.
///
/// The class token is truncated to an integer; geometry must lie in [0, 1].
pub fn parse_yolo_label(text_line: &str) -> Result<YoloLabelLine, IngestError> {
    let malformed = |reason: String| IngestError::MalformedLabelLine {
        line: text_line.to_string(),
        reason,
    };
    let tokens: Vec<&str> = text_line.split_whitespace().collect();
    if tokens.len() != 5 {
        return Err(malformed(format!(
            "expected 5 whitespace-separated tokens, got {}",
            tokens.len()
        )));
    }
    let mut values = [0.0f64; 5];
    for (slot, token) in values.iter_mut().zip(&tokens) {
        *slot = token
            .parse::<f64>()
            .map_err(|e| malformed(format!("non-numeric token {token:?}: {e}")))?;
    }
    if values[0] < 0.0 {
        return Err(malformed(format!("negative class index {}", values[0])));
    }
    for &value in &values[1..] {
        if !(0.0..=1.0).contains(&value) {
            return Err(IngestError::GeometryOutOfRange {
                line: text_line.to_string(),
                value,
            });
        }
    }
    Ok(YoloLabelLine {
        class_index: values[0].trunc() as u32,
        cx: values[1],
        cy: values[2],
        w: values[3],
        h: values[4],
    })
}

/// Format a label line so that [`parse_yolo_label`] round-trips it.
pub fn format_yolo_label(line: &YoloLabelLine) -> String {
    format!(
        "{} {} {} {} {}",
        line.class_index, line.cx, line.cy, line.w, line.h
    )
}

/// 1 when the line's class equals the positive class, else 0.
pub fn derive_binary_label(label_line: &YoloLabelLine, positive_class: u32) -> u8 {
    u8::from(label_line.class_index == positive_class)
}
