//! Binary-classification counting and scoring primitives.
//!
//! The positive class is 1 ("fall"); F1 is the positive-class score, the
//! single number reported per approach throughout the evaluation surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot compute accuracy over zero evaluated items")]
    EmptyCounts,
}

/// Confusion-matrix cell counts for the positive class 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn new(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        ConfusionCounts {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Positive-class F1: `2·tp / (2·tp + fp + fn)`, defined as 0 when the
/// denominator is 0.
pub fn f1_score(counts: ConfusionCounts) -> f64 {
    let denom = 2 * counts.true_pos + counts.false_pos + counts.false_neg;
    if denom == 0 {
        0.0
    } else {
        2.0 * counts.true_pos as f64 / denom as f64
    }
}

/// Fraction of items classified correctly. Errors on zero items.
pub fn accuracy(counts: ConfusionCounts) -> Result<f64, MetricsError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    Ok((counts.true_pos + counts.true_neg) as f64 / total as f64)
}

/// Tally `(predicted, actual)` pairs into confusion counts.
pub fn confusion_from_pairs<I>(pairs: I) -> ConfusionCounts
where
    I: IntoIterator<Item = (u8, u8)>,
{
    let mut counts = ConfusionCounts::default();
    for (predicted, actual) in pairs {
        match (predicted, actual) {
            (1, 1) => counts.true_pos += 1,
            (1, _) => counts.false_pos += 1,
            (_, 1) => counts.false_neg += 1,
            _ => counts.true_neg += 1,
        }
    }
    counts
}
