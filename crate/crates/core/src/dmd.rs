//! Dual-model distillation: run both teachers over a dataset split and turn
//! their (dis)agreements into switcher training data.
//!
//! The on-disk format is a JSON array whose elements carry exactly three
//! keys, in this order:
//!
//! ```json
//! [
//!     {
//!         "image_path": "path_to_image/img.jpg",
//!         "last_hidden_layer": [1.369998574256897, ...],
//!         "label": 1
//!     }
//! ]
//! ```
//!
//! `label` is the agreement indicator: 1 when the two teachers' predictions
//! match, 0 when they differ. Feature values are written at full precision
//! (shortest exact decimal), so reading a file back reproduces every float
//! bit-for-bit. The writer emits four-space indentation; rewriting a file it
//! produced yields identical bytes.

use std::fs;
use std::path::Path;

use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DatasetManifest;
use crate::teachers::{Teacher, TeacherError};
use crate::types::Split;

#[derive(Debug, Error)]
pub enum DmdError {
    #[error("teacher failed on record {record_id:?}: {source}")]
    Teacher {
        record_id: String,
        source: TeacherError,
    },
    #[error("record {record_id:?}: expected hidden vector of length {expected}, got {got}")]
    DimensionMismatch {
        record_id: String,
        expected: usize,
        got: usize,
    },
    #[error("small teacher returned no hidden features for record {0:?}")]
    MissingHidden(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema violation at {path}: {reason}")]
    Schema { path: String, reason: String },
}

/// One training example: the small model's hidden features plus the
/// agreement indicator. Field order here defines the file's key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdRecord {
    pub image_path: String,
    pub last_hidden_layer: Vec<f64>,
    pub label: u8,
}

/// Where a DMD dataset came from: the teacher descriptions (including their
/// seeds) that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmdProvenance {
    pub small_teacher: String,
    pub large_teacher: String,
}

/// A generated dataset for one split, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdDataset {
    pub records: Vec<DmdRecord>,
    pub split: Split,
    pub provenance: DmdProvenance,
}

/// 1 when the predictions agree, 0 when they differ. Symmetric.
pub fn agreement_label(small_pred: u8, large_pred: u8) -> u8 {
    u8::from(small_pred == large_pred)
}

/// Assemble a dataset from teacher outputs already computed for one split
/// (in split order). Lets callers that need the raw outputs for other
/// artifacts avoid a second teacher pass.
pub fn assemble_dmd(
    manifest: &DatasetManifest,
    split: Split,
    small_outputs: &[crate::types::TeacherOutput],
    large_outputs: &[crate::types::TeacherOutput],
    provenance: DmdProvenance,
) -> Result<DmdDataset, DmdError> {
    let feature_dim = manifest.feature_dim();
    let split_size = manifest.split_count(split);
    assert_eq!(small_outputs.len(), split_size, "one small output per record");
    assert_eq!(large_outputs.len(), split_size, "one large output per record");
    let mut records = Vec::with_capacity(split_size);
    for ((record, small), large) in manifest
        .split_records(split)
        .zip(small_outputs)
        .zip(large_outputs)
    {
        let hidden = small
            .hidden
            .clone()
            .ok_or_else(|| DmdError::MissingHidden(record.record_id.clone()))?;
        if hidden.len() != feature_dim {
            return Err(DmdError::DimensionMismatch {
                record_id: record.record_id.clone(),
                expected: feature_dim,
                got: hidden.len(),
            });
        }
        records.push(DmdRecord {
            image_path: record.payload_ref.clone(),
            last_hidden_layer: hidden,
            label: agreement_label(small.prediction, large.prediction),
        });
    }
    Ok(DmdDataset {
        records,
        split,
        provenance,
    })
}

/// Run both teachers over one split of the manifest and assemble the
/// agreement-labeled dataset. Output order matches manifest order.
pub fn generate_dmd(
    manifest: &DatasetManifest,
    split: Split,
    small_teacher: &dyn Teacher,
    large_teacher: &dyn Teacher,
) -> Result<DmdDataset, DmdError> {
    let mut small_outputs = Vec::with_capacity(manifest.split_count(split));
    let mut large_outputs = Vec::with_capacity(manifest.split_count(split));
    for record in manifest.split_records(split) {
        let wrap = |source| DmdError::Teacher {
            record_id: record.record_id.clone(),
            source,
        };
        small_outputs.push(small_teacher.predict(record).map_err(wrap)?);
        large_outputs.push(large_teacher.predict(record).map_err(wrap)?);
    }
    assemble_dmd(
        manifest,
        split,
        &small_outputs,
        &large_outputs,
        DmdProvenance {
            small_teacher: small_teacher.describe(),
            large_teacher: large_teacher.describe(),
        },
    )
}

/// Serialize records to the canonical file format (see module docs).
pub fn write_dmd(records: &[DmdRecord], path: &Path) -> Result<(), DmdError> {
    let mut buffer = Vec::new();
    let formatter = serde_json::ser::PrettyFormatter::with_indent(b"    ");
    let mut serializer = serde_json::Serializer::with_formatter(&mut buffer, formatter);
    serializer
        .collect_seq(records)
        .expect("dmd records serialize");
    buffer.push(b'\n');
    fs::write(path, buffer).map_err(|source| DmdError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read and validate a DMD file: every element must carry the three schema
/// fields with a binary label and a uniform feature dimension.
pub fn read_dmd(path: &Path) -> Result<Vec<DmdRecord>, DmdError> {
    let schema_err = |reason: String| DmdError::Schema {
        path: path.display().to_string(),
        reason,
    };
    let body = fs::read_to_string(path).map_err(|source| DmdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<DmdRecord> =
        serde_json::from_str(&body).map_err(|e| schema_err(e.to_string()))?;
    let mut dim = None;
    for (index, record) in records.iter().enumerate() {
        if record.label > 1 {
            return Err(schema_err(format!(
                "element {index} has label {} outside {{0, 1}}",
                record.label
            )));
        }
        if !record.last_hidden_layer.iter().all(|v| v.is_finite()) {
            return Err(schema_err(format!(
                "element {index} contains a non-finite feature value"
            )));
        }
        match dim {
            None => dim = Some(record.last_hidden_layer.len()),
            Some(expected) if expected != record.last_hidden_layer.len() => {
                return Err(schema_err(format!(
                    "element {index} has {} features, expected {expected}",
                    record.last_hidden_layer.len()
                )));
            }
            _ => {}
        }
    }
    Ok(records)
}

/// Sanity statistics over a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmdSummary {
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agree_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_norm: Option<f64>,
}

pub fn dmd_summary(records: &[DmdRecord]) -> DmdSummary {
    if records.is_empty() {
        return DmdSummary {
            count: 0,
            agree_rate: None,
            mean_norm: None,
        };
    }
    let count = records.len();
    let agreements = records.iter().filter(|r| r.label == 1).count();
    let norm_sum: f64 = records
        .iter()
        .map(|r| {
            r.last_hidden_layer
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    DmdSummary {
        count,
        agree_rate: Some(agreements as f64 / count as f64),
        mean_norm: Some(norm_sum / count as f64),
    }
}
