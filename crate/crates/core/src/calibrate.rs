//! Deferral threshold calibration: the "buckets" sweep.
//!
//! Scored items are sorted ascending by alignment probability (ties broken
//! by record id), deferral fractions are swept in bucket steps, the
//! combined-system F1 is computed at each step, and the peak fraction is
//! converted into a probability cutoff via the lower quantile of the
//! scoring set. An item then defers at inference time iff its alignment
//! probability falls at or below the cutoff (with the record-id tie rule).
//!
//! The deferred count at fraction `f` over `n` items is `⌈f·n⌉` everywhere
//! in this crate.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{confusion_from_pairs, f1_score};
use crate::switcher::{SwitcherError, SwitcherModel};

/// Global tie rule: items with equal alignment probability defer in
/// ascending record-id order.
pub const TIE_RULE: &str = "prob-then-record-id-ascending";

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("cannot calibrate over an empty item set")]
    EmptyItems,
    #[error(transparent)]
    Switcher(#[from] SwitcherError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed policy file at {path}: {reason}")]
    MalformedPolicy { path: String, reason: String },
}

/// Input to scoring: features plus both teachers' predictions and the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationExample {
    pub record_id: String,
    pub features: Vec<f64>,
    pub small_pred: u8,
    pub large_pred: u8,
    pub true_label: u8,
}

/// One scored item, ready for the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub record_id: String,
    pub alignment_prob: f64,
    pub small_pred: u8,
    pub large_pred: u8,
    pub true_label: u8,
}

/// Score every example with the switcher, in input order.
pub fn score_items(
    model: &SwitcherModel,
    examples: &[CalibrationExample],
) -> Result<Vec<ScoredItem>, CalibrateError> {
    examples
        .iter()
        .map(|ex| {
            Ok(ScoredItem {
                record_id: ex.record_id.clone(),
                alignment_prob: model.predict_alignment(&ex.features)?,
                small_pred: ex.small_pred,
                large_pred: ex.large_pred,
                true_label: ex.true_label,
            })
        })
        .collect()
}

/// `⌈fraction·n⌉`, clamped to `[0, n]`. A femto-tolerance keeps exact
/// bucket fractions (`k/b·n` integral) from spilling into the next bucket
/// through float rounding.
pub fn deferred_count(n: usize, fraction: f64) -> usize {
    assert!((0.0..=1.0).contains(&fraction), "fraction must be in [0, 1]");
    let raw = fraction * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices of `items` sorted ascending by `(alignment_prob, record_id)`.
fn sorted_order(items: &[ScoredItem]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .alignment_prob
            .partial_cmp(&items[b].alignment_prob)
            .expect("alignment probabilities are not NaN")
            .then_with(|| items[a].record_id.cmp(&items[b].record_id))
    });
    order
}

/// Record ids deferred at the given fraction (the first `⌈f·n⌉` in sort
/// order). Deferred sets are nested across increasing fractions.
pub fn deferred_set(items: &[ScoredItem], fraction: f64) -> BTreeSet<String> {
    let order = sorted_order(items);
    order
        .iter()
        .take(deferred_count(items.len(), fraction))
        .map(|&i| items[i].record_id.clone())
        .collect()
}

fn combined_f1_with_count(items: &[ScoredItem], deferred: usize) -> f64 {
    let order = sorted_order(items);
    let pairs = order.iter().enumerate().map(|(rank, &i)| {
        let item = &items[i];
        let final_pred = if rank < deferred {
            item.large_pred
        } else {
            item.small_pred
        };
        (final_pred, item.true_label)
    });
    f1_score(confusion_from_pairs(pairs))
}

/// Combined-system F1 when the lowest-probability `⌈fraction·n⌉` items take
/// the large model's prediction and the rest keep the small model's.
pub fn combined_f1_at_fraction(
    items: &[ScoredItem],
    fraction: f64,
) -> Result<f64, CalibrateError> {
    if items.is_empty() {
        return Err(CalibrateError::EmptyItems);
    }
    Ok(combined_f1_with_count(
        items,
        deferred_count(items.len(), fraction),
    ))
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub combined_f1: f64,
    pub deferred_count: usize,
}

/// F1-vs-deferral-fraction curve at fractions `k/bucket_count`,
/// `k = 1..=bucket_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferralCurve {
    pub points: Vec<CurvePoint>,
    pub bucket_count: usize,
}

pub fn build_curve(
    items: &[ScoredItem],
    bucket_count: usize,
) -> Result<DeferralCurve, CalibrateError> {
    if items.is_empty() {
        return Err(CalibrateError::EmptyItems);
    }
    assert!(bucket_count >= 1, "bucket_count must be at least 1");
    let n = items.len();
    let points = (1..=bucket_count)
        .map(|k| {
            // ⌈k·n / bucket_count⌉ in exact integer arithmetic.
            let count = (k * n).div_ceil(bucket_count);
            CurvePoint {
                fraction: k as f64 / bucket_count as f64,
                combined_f1: combined_f1_with_count(items, count),
                deferred_count: count,
            }
        })
        .collect();
    Ok(DeferralCurve {
        points,
        bucket_count,
    })
}

/// Calibrated deferral policy. At inference an item defers iff its
/// alignment probability is below the cutoff, or equal to it and its record
/// id does not exceed `cutoff_record_id` (the [`TIE_RULE`] boundary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeferralPolicy {
    pub deferred_fraction: f64,
    pub probability_cutoff: f64,
    pub tie_rule: String,
    /// Record id of the last deferred item in calibration sort order; `None`
    /// when the policy defers nothing.
    pub cutoff_record_id: Option<String>,
}

impl DeferralPolicy {
    /// A policy that never defers.
    pub fn never_defer() -> Self {
        DeferralPolicy {
            deferred_fraction: 0.0,
            probability_cutoff: -1.0,
            tie_rule: TIE_RULE.to_string(),
            cutoff_record_id: None,
        }
    }

    /// The per-item deferral decision.
    pub fn should_defer(&self, alignment_prob: f64, record_id: &str) -> bool {
        if alignment_prob < self.probability_cutoff {
            return true;
        }
        if alignment_prob == self.probability_cutoff {
            return match &self.cutoff_record_id {
                Some(boundary) => record_id <= boundary.as_str(),
                None => false,
            };
        }
        false
    }
}

/// Pick the curve's peak (ties toward the smallest fraction) and convert it
/// into a probability cutoff: the `⌈f·n⌉`-th lowest alignment probability
/// of `train_items`, with the boundary record id captured for exact ties.
pub fn select_policy(
    curve: &DeferralCurve,
    train_items: &[ScoredItem],
) -> Result<DeferralPolicy, CalibrateError> {
    if train_items.is_empty() || curve.points.is_empty() {
        return Err(CalibrateError::EmptyItems);
    }
    let best = curve
        .points
        .iter()
        .max_by(|a, b| {
            a.combined_f1
                .partial_cmp(&b.combined_f1)
                .expect("f1 is not NaN")
                // On equal F1 prefer the smaller fraction; max_by keeps the
                // later of equal elements, so order descending by fraction.
                .then_with(|| b.fraction.partial_cmp(&a.fraction).unwrap())
        })
        .expect("curve has points");

    let count = deferred_count(train_items.len(), best.fraction);
    let order = sorted_order(train_items);
    let (probability_cutoff, cutoff_record_id) = if count == 0 {
        (-1.0, None)
    } else {
        let boundary = &train_items[order[count - 1]];
        (
            boundary.alignment_prob,
            Some(boundary.record_id.clone()),
        )
    };
    Ok(DeferralPolicy {
        deferred_fraction: best.fraction,
        probability_cutoff,
        tie_rule: TIE_RULE.to_string(),
        cutoff_record_id,
    })
}

/// An item's small-model confidence score, for the uncertainty baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceItem {
    pub record_id: String,
    /// Small model's class-1 probability.
    pub probability: f64,
}

/// Baseline ranking: defer the `⌈fraction·n⌉` items whose small-model
/// confidence is closest to the decision boundary. Uncertainty is
/// `1 − max(p, 1−p)`; ties break by record id.
pub fn uncertainty_rank(items: &[ConfidenceItem], fraction: f64) -> BTreeSet<String> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let uncertainty = |i: usize| 1.0 - items[i].probability.max(1.0 - items[i].probability);
    order.sort_by(|&a, &b| {
        uncertainty(b)
            .partial_cmp(&uncertainty(a))
            .expect("probabilities are not NaN")
            .then_with(|| items[a].record_id.cmp(&items[b].record_id))
    });
    order
        .iter()
        .take(deferred_count(items.len(), fraction))
        .map(|&i| items[i].record_id.clone())
        .collect()
}

/// Write the curve as `fraction,combined_f1,deferred_count` CSV.
pub fn write_curve_report(curve: &DeferralCurve, path: &Path) -> Result<(), CalibrateError> {
    let mut body = String::from("fraction,combined_f1,deferred_count\n");
    for point in &curve.points {
        body.push_str(&format!(
            "{},{},{}\n",
            point.fraction, point.combined_f1, point.deferred_count
        ));
    }
    fs::write(path, body).map_err(|source| CalibrateError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_policy(policy: &DeferralPolicy, path: &Path) -> Result<(), CalibrateError> {
    let body = serde_json::to_string_pretty(policy).expect("policy serializes");
    fs::write(path, body).map_err(|source| CalibrateError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_policy(path: &Path) -> Result<DeferralPolicy, CalibrateError> {
    let body = fs::read_to_string(path).map_err(|source| CalibrateError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|e| CalibrateError::MalformedPolicy {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
