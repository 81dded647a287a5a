//! Stochastic stand-in for a real model, with controllable accuracy and
//! hidden-feature geometry.

use serde::{Deserialize, Serialize};

use super::{Teacher, TeacherError, TeacherRole};
use crate::rng::{RngSeed, SplitMix64};
use crate::types::{DatasetRecord, TeacherOutput};

/// How hidden features relate to the simulated world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureModel {
    /// Features cluster around a center determined by the record's label.
    ClassConditionedGaussian,
    /// Features cluster around a center determined by whether this teacher's
    /// prediction is correct — the signal an alignment switcher needs.
    CorrectnessConditionedGaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTeacherParams {
    /// Probability of predicting correctly on label-1 records.
    pub accuracy_positive: f64,
    /// Probability of predicting correctly on label-0 records.
    pub accuracy_negative: f64,
    pub feature_dim: usize,
    pub feature_model: FeatureModel,
    /// Standard deviation of the per-dimension feature noise.
    pub noise_scale: f64,
    pub seed: RngSeed,
}

/// Deterministic simulated model. Per-record randomness comes from
/// `hash(seed, record_id)`, so any (re)ordering of calls yields identical
/// outputs.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    role: TeacherRole,
    params: SyntheticTeacherParams,
}

impl SyntheticTeacher {
    pub fn new(role: TeacherRole, params: SyntheticTeacherParams) -> Self {
        assert!((0.0..=1.0).contains(&params.accuracy_positive));
        assert!((0.0..=1.0).contains(&params.accuracy_negative));
        assert!(params.feature_dim > 0, "feature_dim must be positive");
        assert!(params.noise_scale > 0.0, "noise_scale must be positive");
        SyntheticTeacher { role, params }
    }

    pub fn params(&self) -> &SyntheticTeacherParams {
        &self.params
    }
}

impl Teacher for SyntheticTeacher {
    fn role(&self) -> TeacherRole {
        self.role
    }

    fn describe(&self) -> String {
        format!(
            "synthetic({role:?}, acc_pos={}, acc_neg={}, dim={}, model={:?}, noise={}, seed={})",
            self.params.accuracy_positive,
            self.params.accuracy_negative,
            self.params.feature_dim,
            self.params.feature_model,
            self.params.noise_scale,
            self.params.seed.0,
            role = self.role,
        )
    }

    fn predict(&self, record: &DatasetRecord) -> Result<TeacherOutput, TeacherError> {
        let mut rng = SplitMix64::for_key(self.params.seed, &record.record_id);

        let accuracy = if record.label == 1 {
            self.params.accuracy_positive
        } else {
            self.params.accuracy_negative
        };
        let correct = rng.next_f64() < accuracy;
        let prediction = if correct { record.label } else { 1 - record.label };

        // Confidence margin in (0, 1). Correct predictions skew confident
        // (sqrt shaping), wrong ones skew hesitant (square shaping), which
        // gives the uncertainty baseline a usable but imperfect signal.
        let u = rng.next_f64().max(f64::EPSILON);
        let margin = if correct { u.sqrt() } else { u * u };
        let margin = margin.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        let probability = if prediction == 1 {
            0.5 + 0.5 * margin
        } else {
            0.5 - 0.5 * margin
        };

        let hidden = if self.role == TeacherRole::Small {
            let center = match self.params.feature_model {
                FeatureModel::ClassConditionedGaussian => {
                    if record.label == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                FeatureModel::CorrectnessConditionedGaussian => {
                    if correct {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            Some(
                (0..self.params.feature_dim)
                    .map(|_| center + self.params.noise_scale * rng.normal())
                    .collect(),
            )
        } else {
            None
        };

        Ok(TeacherOutput {
            prediction,
            probability,
            hidden,
        })
    }
}
