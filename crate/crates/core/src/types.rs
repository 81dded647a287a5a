//! Domain types shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Dataset partition a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(text: &str) -> Option<Split> {
        match text {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled input item. `label` is binary: 0 = no-fall, 1 = fall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    pub payload_ref: String,
    pub label: u8,
    pub split: Split,
}

/// A teacher's answer for one record.
///
/// `prediction == 1` iff `probability >= 0.5` (ties classify as 1).
/// `hidden` is present only for small-role teachers and must match the
/// configured feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherOutput {
    pub prediction: u8,
    pub probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<f64>>,
}

impl TeacherOutput {
    /// Build an output from a class-1 probability, deriving the prediction.
    pub fn from_probability(probability: f64, hidden: Option<Vec<f64>>) -> Self {
        TeacherOutput {
            prediction: u8::from(probability >= 0.5),
            probability,
            hidden,
        }
    }

    /// Check the prediction/probability consistency invariant.
    pub fn is_consistent(&self) -> bool {
        self.prediction == u8::from(self.probability >= 0.5)
            && (0.0..=1.0).contains(&self.probability)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_round_trips_through_text() {
        for split in Split::ALL {
            assert_eq!(Split::parse(split.as_str()), Some(split));
        }
        assert_eq!(Split::parse("dev"), None);
    }

    #[test]
    fn prediction_derived_from_probability() {
        assert_eq!(TeacherOutput::from_probability(0.7, None).prediction, 1);
        assert_eq!(TeacherOutput::from_probability(0.2, None).prediction, 0);
        // Tie at exactly 0.5 classifies as 1.
        assert_eq!(TeacherOutput::from_probability(0.5, None).prediction, 1);
    }

    #[test]
    fn consistency_check_catches_mismatch() {
        let out = TeacherOutput {
            prediction: 0,
            probability: 0.9,
            hidden: None,
        };
        assert!(!out.is_consistent());
        assert!(TeacherOutput::from_probability(0.9, None).is_consistent());
    }
}
