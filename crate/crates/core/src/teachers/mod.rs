//! Teacher oracles: a uniform interface over the small (edge) and large
//! (cloud) models, with three interchangeable implementations.
//!
//! - [`SyntheticTeacher`] simulates a model of configurable accuracy and
//!   emits hidden features drawn around class- or correctness-conditioned
//!   centers. All randomness is derived per record from `hash(seed,
//!   record_id)`, so outputs are independent of batch order.
//! - [`ReplayTeacher`] serves recorded outputs from a fixture file.
//! - [`RemoteTeacher`] calls an HTTP prediction endpoint.

mod remote;
mod replay;
mod synthetic;

pub use remote::{RemoteAttempt, RemoteTeacher, RemoteTeacherParams};
pub use replay::{read_fixture, write_fixture, ReplayFixture, ReplayTeacher};
pub use synthetic::{FeatureModel, SyntheticTeacher, SyntheticTeacherParams};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

use crate::types::{DatasetRecord, TeacherOutput};

/// Which side of the cascade a teacher plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherRole {
    Small,
    Large,
}

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("record {0:?} not present in replay fixture")]
    ReplayMiss(String),
    #[error("remote request for {record_id:?} timed out after {timeout_ms} ms")]
    RemoteTimeout { record_id: String, timeout_ms: u64 },
    #[error("remote request for {record_id:?} returned status {status}")]
    RemoteStatus { record_id: String, status: u16 },
    #[error("remote response for {record_id:?} is malformed: {reason}")]
    RemoteMalformed { record_id: String, reason: String },
    #[error("remote transport error for {record_id:?}: {reason}")]
    RemoteTransport { record_id: String, reason: String },
    #[error("fixture i/o error at {path}: {source}")]
    FixtureIo {
        path: String,
        source: std::io::Error,
    },
    #[error("fixture schema violation at {path}: {reason}")]
    FixtureSchema { path: String, reason: String },
}

/// Per-record failures from a batch call, tagged with the offending ids.
#[derive(Debug, Error)]
#[error("{} of {total} records failed: {}", failures.len(), summarize(failures))]
pub struct BatchError {
    pub total: usize,
    pub failures: Vec<(String, TeacherError)>,
}

fn summarize(failures: &[(String, TeacherError)]) -> String {
    let mut ids: Vec<&str> = failures.iter().take(5).map(|(id, _)| id.as_str()).collect();
    if failures.len() > 5 {
        ids.push("...");
    }
    ids.join(", ")
}

/// A prediction oracle. Implementations are immutable after construction and
/// callable from any thread.
pub trait Teacher: Send + Sync {
    fn role(&self) -> TeacherRole;

    /// A stable, human-readable description (kind, role, seeds) recorded as
    /// provenance by downstream data generators.
    fn describe(&self) -> String;

    fn predict(&self, record: &DatasetRecord) -> Result<TeacherOutput, TeacherError>;

    /// Predict every record, preserving input order. Aggregates per-record
    /// failures instead of stopping at the first.
    fn predict_batch(&self, records: &[DatasetRecord]) -> Result<Vec<TeacherOutput>, BatchError> {
        let mut outputs = Vec::with_capacity(records.len());
        let mut failures = Vec::new();
        for record in records {
            match self.predict(record) {
                Ok(output) => outputs.push(output),
                Err(err) => failures.push((record.record_id.clone(), err)),
            }
        }
        if failures.is_empty() {
            Ok(outputs)
        } else {
            Err(BatchError {
                total: records.len(),
                failures,
            })
        }
    }
}

/// Fan a batch out over `workers` threads; output order and values are
/// identical to the sequential path.
pub fn predict_batch_parallel(
    teacher: &dyn Teacher,
    records: &[DatasetRecord],
    workers: usize,
) -> Result<Vec<TeacherOutput>, BatchError> {
    let workers = workers.max(1);
    if records.is_empty() || workers == 1 {
        return teacher.predict_batch(records);
    }
    let chunk_size = records.len().div_ceil(workers);
    let mut slots: Vec<Option<Result<TeacherOutput, TeacherError>>> = Vec::new();
    slots.resize_with(records.len(), || None);

    std::thread::scope(|scope| {
        let mut rest = slots.as_mut_slice();
        for chunk in records.chunks(chunk_size) {
            let (head, tail) = rest.split_at_mut(chunk.len());
            rest = tail;
            scope.spawn(move || {
                for (slot, record) in head.iter_mut().zip(chunk) {
                    *slot = Some(teacher.predict(record));
                }
            });
        }
    });

    let mut outputs = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for (slot, record) in slots.into_iter().zip(records) {
        match slot.expect("worker filled every slot") {
            Ok(output) => outputs.push(output),
            Err(err) => failures.push((record.record_id.clone(), err)),
        }
    }
    if failures.is_empty() {
        Ok(outputs)
    } else {
        Err(BatchError {
            total: records.len(),
            failures,
        })
    }
}

/// Declarative teacher configuration; builds a boxed oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TeacherSpec {
    Synthetic {
        role: TeacherRole,
        #[serde(flatten)]
        params: SyntheticTeacherParams,
    },
    Replay {
        role: TeacherRole,
        fixture_path: PathBuf,
    },
    Remote {
        role: TeacherRole,
        #[serde(flatten)]
        params: RemoteTeacherParams,
    },
}

impl TeacherSpec {
    pub fn role(&self) -> TeacherRole {
        match self {
            TeacherSpec::Synthetic { role, .. } => *role,
            TeacherSpec::Replay { role, .. } => *role,
            TeacherSpec::Remote { role, .. } => *role,
        }
    }

    /// Instantiate the configured teacher.
    pub fn build(&self) -> Result<Arc<dyn Teacher>, TeacherError> {
        match self {
            TeacherSpec::Synthetic { role, params } => {
                Ok(Arc::new(SyntheticTeacher::new(*role, params.clone())))
            }
            TeacherSpec::Replay { role, fixture_path } => {
                let fixture = read_fixture(fixture_path)?;
                Ok(Arc::new(ReplayTeacher::new(*role, fixture)))
            }
            TeacherSpec::Remote { role, params } => {
                Ok(Arc::new(RemoteTeacher::new(*role, params.clone())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use crate::types::Split;

    pub(crate) fn record(id: &str, label: u8) -> DatasetRecord {
        DatasetRecord {
            record_id: id.to_string(),
            payload_ref: format!("images/{id}.jpg"),
            label,
            split: Split::Train,
        }
    }

    fn synthetic_small(seed: u64) -> SyntheticTeacher {
        SyntheticTeacher::new(
            TeacherRole::Small,
            SyntheticTeacherParams {
                accuracy_positive: 0.6,
                accuracy_negative: 0.6,
                feature_dim: 8,
                feature_model: FeatureModel::CorrectnessConditionedGaussian,
                noise_scale: 0.1,
                seed: RngSeed(seed),
            },
        )
    }

    #[test]
    fn batch_empty_is_empty() {
        let teacher = synthetic_small(1);
        assert!(teacher.predict_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn batch_preserves_order() {
        let teacher = synthetic_small(1);
        let records = vec![record("a", 1), record("b", 0)];
        let outputs = teacher.predict_batch(&records).unwrap();
        assert_eq!(outputs.len(), 2);
        assert_eq!(outputs[0], teacher.predict(&records[0]).unwrap());
        assert_eq!(outputs[1], teacher.predict(&records[1]).unwrap());
    }

    #[test]
    fn parallel_batch_equals_sequential() {
        let teacher = synthetic_small(17);
        let records: Vec<DatasetRecord> =
            (0..100).map(|i| record(&format!("r{i}"), (i % 2) as u8)).collect();
        let sequential = teacher.predict_batch(&records).unwrap();
        let parallel = predict_batch_parallel(&teacher, &records, 8).unwrap();
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn batch_error_names_offending_records() {
        let fixture = ReplayFixture::from_outputs(
            [("a".to_string(), TeacherOutput::from_probability(0.9, None))]
                .into_iter()
                .collect(),
        );
        let teacher = ReplayTeacher::new(TeacherRole::Large, fixture);
        let records = vec![record("a", 1), record("missing", 0)];
        let err = teacher.predict_batch(&records).unwrap_err();
        assert_eq!(err.total, 2);
        assert_eq!(err.failures.len(), 1);
        assert_eq!(err.failures[0].0, "missing");
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = TeacherSpec::Synthetic {
            role: TeacherRole::Small,
            params: SyntheticTeacherParams {
                accuracy_positive: 0.9,
                accuracy_negative: 0.8,
                feature_dim: 16,
                feature_model: FeatureModel::ClassConditionedGaussian,
                noise_scale: 0.25,
                seed: RngSeed(5),
            },
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: TeacherSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.role(), TeacherRole::Small);
        let teacher = back.build().unwrap();
        let expected = spec.build().unwrap();
        let rec = record("x", 1);
        assert_eq!(teacher.predict(&rec).unwrap(), expected.predict(&rec).unwrap());
    }
}
