//! Replay teacher: serves recorded outputs from a fixture file.
//!
//! Fixture format: a JSON array of
//! `{ "record_id": string, "prediction": 0|1, "probability": number,
//!    "hidden": [number] (optional) }`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Teacher, TeacherError, TeacherRole};
use crate::types::{DatasetRecord, TeacherOutput};

#[derive(Debug, Serialize, Deserialize)]
struct FixtureEntry {
    record_id: String,
    prediction: u8,
    probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<f64>>,
}

/// Recorded teacher outputs keyed by record id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayFixture {
    outputs: BTreeMap<String, TeacherOutput>,
}

impl ReplayFixture {
    pub fn from_outputs(outputs: BTreeMap<String, TeacherOutput>) -> Self {
        ReplayFixture { outputs }
    }

    pub fn get(&self, record_id: &str) -> Option<&TeacherOutput> {
        self.outputs.get(record_id)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Ids of manifest records missing from this fixture. A fixture is total
    /// over a manifest when this returns no ids.
    pub fn missing_from<'a>(
        &self,
        records: impl IntoIterator<Item = &'a DatasetRecord>,
    ) -> Vec<String> {
        records
            .into_iter()
            .filter(|r| !self.outputs.contains_key(&r.record_id))
            .map(|r| r.record_id.clone())
            .collect()
    }
}

/// Write outputs as a fixture file. Keys are emitted in sorted id order so
/// identical maps produce identical bytes.
pub fn write_fixture(
    outputs: &BTreeMap<String, TeacherOutput>,
    path: &Path,
) -> Result<(), TeacherError> {
    let entries: Vec<FixtureEntry> = outputs
        .iter()
        .map(|(record_id, out)| FixtureEntry {
            record_id: record_id.clone(),
            prediction: out.prediction,
            probability: out.probability,
            hidden: out.hidden.clone(),
        })
        .collect();
    let body = serde_json::to_string_pretty(&entries).expect("fixture entries serialize");
    fs::write(path, body).map_err(|source| TeacherError::FixtureIo {
        path: path.display().to_string(),
        source,
    })
}

/// Read a fixture file, validating the schema and the
/// prediction/probability consistency invariant.
pub fn read_fixture(path: &Path) -> Result<ReplayFixture, TeacherError> {
    let schema_err = |reason: String| TeacherError::FixtureSchema {
        path: path.display().to_string(),
        reason,
    };
    let body = fs::read_to_string(path).map_err(|source| TeacherError::FixtureIo {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<FixtureEntry> =
        serde_json::from_str(&body).map_err(|e| schema_err(e.to_string()))?;
    let mut outputs = BTreeMap::new();
    for entry in entries {
        if entry.prediction > 1 {
            return Err(schema_err(format!(
                "record {:?} has non-binary prediction {}",
                entry.record_id, entry.prediction
            )));
        }
        if !(0.0..=1.0).contains(&entry.probability) {
            return Err(schema_err(format!(
                "record {:?} has probability {} outside [0, 1]",
                entry.record_id, entry.probability
            )));
        }
        let out = TeacherOutput {
            prediction: entry.prediction,
            probability: entry.probability,
            hidden: entry.hidden,
        };
        if !out.is_consistent() {
            return Err(schema_err(format!(
                "record {:?} violates prediction == (probability >= 0.5)",
                entry.record_id
            )));
        }
        if outputs.insert(entry.record_id.clone(), out).is_some() {
            return Err(schema_err(format!(
                "duplicate record_id {:?}",
                entry.record_id
            )));
        }
    }
    Ok(ReplayFixture { outputs })
}

/// Serves fixture entries verbatim; misses are errors.
pub struct ReplayTeacher {
    role: TeacherRole,
    fixture: ReplayFixture,
}

impl ReplayTeacher {
    pub fn new(role: TeacherRole, fixture: ReplayFixture) -> Self {
        ReplayTeacher { role, fixture }
    }
}

impl Teacher for ReplayTeacher {
    fn role(&self) -> TeacherRole {
        self.role
    }

    fn describe(&self) -> String {
        format!(
            "replay({:?}, {} recorded outputs)",
            self.role,
            self.fixture.len()
        )
    }

    fn predict(&self, record: &DatasetRecord) -> Result<TeacherOutput, TeacherError> {
        self.fixture
            .get(&record.record_id)
            .cloned()
            .ok_or_else(|| TeacherError::ReplayMiss(record.record_id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Split;
    use std::time::Instant;

    fn record(id: &str) -> DatasetRecord {
        DatasetRecord {
            record_id: id.to_string(),
            payload_ref: String::new(),
            label: 0,
            split: Split::Test,
        }
    }

    #[test]
    fn lookup_hit_and_miss() {
        let mut outputs = BTreeMap::new();
        outputs.insert("r1".to_string(), TeacherOutput::from_probability(0.2, None));
        let teacher = ReplayTeacher::new(TeacherRole::Large, ReplayFixture::from_outputs(outputs));

        let out = teacher.predict(&record("r1")).unwrap();
        assert_eq!(out.prediction, 0);
        assert_eq!(out.probability, 0.2);

        assert!(matches!(
            teacher.predict(&record("r2")),
            Err(TeacherError::ReplayMiss(id)) if id == "r2"
        ));
    }

    #[test]
    fn empty_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        write_fixture(&BTreeMap::new(), &path).unwrap();
        let fixture = read_fixture(&path).unwrap();
        assert!(fixture.is_empty());
    }

    #[test]
    fn single_record_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        let mut outputs = BTreeMap::new();
        outputs.insert(
            "r1".to_string(),
            TeacherOutput::from_probability(0.875, Some(vec![1.25, -0.5, 0.333333333, 7.0])),
        );
        write_fixture(&outputs, &path).unwrap();
        let fixture = read_fixture(&path).unwrap();
        assert_eq!(fixture.get("r1"), outputs.get("r1"));
    }

    #[test]
    fn large_fixture_round_trips_quickly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        let mut rng = crate::rng::SplitMix64::new(crate::rng::RngSeed(4));
        let outputs: BTreeMap<String, TeacherOutput> = (0..1000)
            .map(|i| {
                let hidden: Vec<f64> = (0..1536).map(|_| rng.normal()).collect();
                (
                    format!("r{i:04}"),
                    TeacherOutput::from_probability(rng.next_f64(), Some(hidden)),
                )
            })
            .collect();
        write_fixture(&outputs, &path).unwrap();
        let start = Instant::now();
        let fixture = read_fixture(&path).unwrap();
        assert!(start.elapsed().as_secs_f64() < 5.0);
        assert_eq!(fixture.len(), 1000);
        for (id, out) in &outputs {
            assert_eq!(fixture.get(id), Some(out));
        }
    }

    #[test]
    fn read_rejects_inconsistent_and_out_of_range_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");

        fs::write(
            &path,
            r#"[{"record_id":"r1","prediction":0,"probability":0.9}]"#,
        )
        .unwrap();
        assert!(matches!(
            read_fixture(&path),
            Err(TeacherError::FixtureSchema { .. })
        ));

        fs::write(
            &path,
            r#"[{"record_id":"r1","prediction":1,"probability":1.5}]"#,
        )
        .unwrap();
        assert!(matches!(
            read_fixture(&path),
            Err(TeacherError::FixtureSchema { .. })
        ));

        fs::write(&path, r#"[{"record_id":"r1"}]"#).unwrap();
        assert!(matches!(
            read_fixture(&path),
            Err(TeacherError::FixtureSchema { .. })
        ));
    }

    #[test]
    fn missing_from_reports_gaps() {
        let mut outputs = BTreeMap::new();
        outputs.insert("a".to_string(), TeacherOutput::from_probability(0.6, None));
        let fixture = ReplayFixture::from_outputs(outputs);
        let records = [record("a"), record("b")];
        assert_eq!(fixture.missing_from(records.iter()), vec!["b".to_string()]);
    }
}
