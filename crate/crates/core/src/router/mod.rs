//! Inference-time dispatch: run the small teacher, consult the switcher and
//! the calibrated policy, optionally invoke the large teacher, and account
//! for every decision in a trace.
//!
//! The small teacher runs unconditionally — its hidden features feed the
//! switcher — so the marginal cost of a request is the large call, and the
//! deferral budget bounds how many of those a request window may admit.
//! Budget admissions are counted when a deferral is *attempted*: a large
//! call that subsequently fails (and falls back to the small answer) still
//! consumed its admission.

pub mod service;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::DeferralPolicy;
use crate::metrics::{accuracy, confusion_from_pairs, f1_score, ConfusionCounts};
use crate::switcher::{SwitcherError, SwitcherModel};
use crate::teachers::{Teacher, TeacherError};
use crate::types::DatasetRecord;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("teacher failed on record {record_id:?}: {source}")]
    Teacher {
        record_id: String,
        source: TeacherError,
    },
    #[error("small teacher produced no hidden features for record {0:?}")]
    MissingHidden(String),
    #[error(transparent)]
    Switcher(#[from] SwitcherError),
    #[error("deferral budget exhausted for record {0:?}")]
    BudgetRejected(String),
}

/// Wall-clock seconds spent per stage of one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    pub small_s: f64,
    pub switcher_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub large_s: Option<f64>,
}

impl StageLatencies {
    pub fn total_seconds(&self) -> f64 {
        self.small_s + self.switcher_s + self.large_s.unwrap_or(0.0)
    }
}

/// Why a wanted deferral ended up answered by the small model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason", content = "detail")]
pub enum FallbackReason {
    BudgetExhausted,
    LargeTeacherFailure(String),
}

/// Full record of one routing decision.
///
/// Invariants: `final_prediction == large_prediction` when `deferred`, else
/// `small_prediction`; `large_prediction` is present iff `deferred`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTrace {
    pub record_id: String,
    pub small_prediction: u8,
    pub alignment_prob: f64,
    pub deferred: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub large_prediction: Option<u8>,
    pub final_prediction: u8,
    pub latency: StageLatencies,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<FallbackReason>,
    /// Deferral admissions left in the current budget window, when a budget
    /// is configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_remaining: Option<usize>,
}

/// Bound on deferrals per sliding window: a fraction of the window or an
/// absolute count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetLimit {
    MaxDeferralFraction(f64),
    MaxDeferrals(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExhaustionBehavior {
    FallbackToSmall,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub limit: BudgetLimit,
    pub window_size: usize,
    pub exhaustion_behavior: ExhaustionBehavior,
}

impl BudgetConfig {
    pub fn max_deferrals(&self) -> usize {
        match self.limit {
            // Tolerance keeps f·W from losing an admission to float rounding.
            BudgetLimit::MaxDeferralFraction(f) => {
                (f * self.window_size as f64 + 1e-9).floor() as usize
            }
            BudgetLimit::MaxDeferrals(count) => count,
        }
        .min(self.window_size)
    }
}

/// Sliding-window admission state: the deferral flags of the last
/// `window_size` requests.
#[derive(Debug)]
struct BudgetWindow {
    flags: VecDeque<bool>,
    deferred_in_window: usize,
    window_size: usize,
    max_deferrals: usize,
}

impl BudgetWindow {
    fn new(config: &BudgetConfig) -> Self {
        assert!(config.window_size > 0, "window_size must be positive");
        BudgetWindow {
            flags: VecDeque::with_capacity(config.window_size),
            deferred_in_window: 0,
            window_size: config.window_size,
            max_deferrals: config.max_deferrals(),
        }
    }

    /// Record one request; returns whether a wanted deferral was admitted.
    fn admit(&mut self, want_defer: bool) -> bool {
        if self.flags.len() == self.window_size && self.flags.pop_front() == Some(true) {
            self.deferred_in_window -= 1;
        }
        let admitted = want_defer && self.deferred_in_window < self.max_deferrals;
        self.flags.push_back(admitted);
        if admitted {
            self.deferred_in_window += 1;
        }
        admitted
    }

    fn remaining(&self) -> usize {
        self.max_deferrals - self.deferred_in_window
    }
}

/// Aggregate view of a batch run. Quality fields are present when ground
/// truth was provided.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteSummary {
    pub total: usize,
    pub deferred: usize,
    pub deferred_fraction: f64,
    pub fallbacks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// The dispatch engine: immutable model, policy, and teachers, plus one
/// synchronized budget accounting object.
pub struct Router {
    small: Arc<dyn Teacher>,
    large: Arc<dyn Teacher>,
    model: SwitcherModel,
    policy: DeferralPolicy,
    budget: Option<(BudgetConfig, Mutex<BudgetWindow>)>,
}

impl Router {
    pub fn new(
        small: Arc<dyn Teacher>,
        large: Arc<dyn Teacher>,
        model: SwitcherModel,
        policy: DeferralPolicy,
        budget: Option<BudgetConfig>,
    ) -> Self {
        let budget = budget.map(|config| {
            let window = Mutex::new(BudgetWindow::new(&config));
            (config, window)
        });
        Router {
            small,
            large,
            model,
            policy,
            budget,
        }
    }

    pub fn policy(&self) -> &DeferralPolicy {
        &self.policy
    }

    pub fn model(&self) -> &SwitcherModel {
        &self.model
    }

    /// Admissions left in the current budget window, when budgeted.
    pub fn budget_remaining(&self) -> Option<usize> {
        self.budget
            .as_ref()
            .map(|(_, window)| window.lock().expect("budget lock").remaining())
    }

    fn exhaustion_behavior(&self) -> ExhaustionBehavior {
        self.budget
            .as_ref()
            .map(|(config, _)| config.exhaustion_behavior)
            .unwrap_or(ExhaustionBehavior::FallbackToSmall)
    }

    /// Route one record. The small teacher always runs; the large teacher
    /// runs iff the policy wants a deferral and the budget admits it.
    pub fn route_one(&self, record: &DatasetRecord) -> Result<RouteTrace, RouterError> {
        let teacher_err = |source| RouterError::Teacher {
            record_id: record.record_id.clone(),
            source,
        };

        let started = Instant::now();
        let small_out = self.small.predict(record).map_err(teacher_err)?;
        let small_s = started.elapsed().as_secs_f64();
        let hidden = small_out
            .hidden
            .as_ref()
            .ok_or_else(|| RouterError::MissingHidden(record.record_id.clone()))?;

        let started = Instant::now();
        let alignment_prob = self.model.predict_alignment(hidden)?;
        let switcher_s = started.elapsed().as_secs_f64();

        let want_defer = self.policy.should_defer(alignment_prob, &record.record_id);

        let (admitted, budget_remaining) = match &self.budget {
            Some((_, window)) => {
                let mut window = window.lock().expect("budget lock");
                let admitted = window.admit(want_defer);
                (admitted, Some(window.remaining()))
            }
            None => (want_defer, None),
        };

        let mut trace = RouteTrace {
            record_id: record.record_id.clone(),
            small_prediction: small_out.prediction,
            alignment_prob,
            deferred: false,
            large_prediction: None,
            final_prediction: small_out.prediction,
            latency: StageLatencies {
                small_s,
                switcher_s,
                large_s: None,
            },
            fallback: None,
            budget_remaining,
        };

        if !want_defer {
            return Ok(trace);
        }
        if !admitted {
            return match self.exhaustion_behavior() {
                ExhaustionBehavior::FallbackToSmall => {
                    trace.fallback = Some(FallbackReason::BudgetExhausted);
                    Ok(trace)
                }
                ExhaustionBehavior::Reject => {
                    Err(RouterError::BudgetRejected(record.record_id.clone()))
                }
            };
        }

        let started = Instant::now();
        match self.large.predict(record) {
            Ok(large_out) => {
                trace.latency.large_s = Some(started.elapsed().as_secs_f64());
                trace.deferred = true;
                trace.large_prediction = Some(large_out.prediction);
                trace.final_prediction = large_out.prediction;
                Ok(trace)
            }
            Err(err) => {
                trace.latency.large_s = Some(started.elapsed().as_secs_f64());
                match self.exhaustion_behavior() {
                    ExhaustionBehavior::FallbackToSmall => {
                        trace.fallback = Some(FallbackReason::LargeTeacherFailure(err.to_string()));
                        Ok(trace)
                    }
                    ExhaustionBehavior::Reject => Err(teacher_err(err)),
                }
            }
        }
    }

    /// Route records in order (budget accounting is order-sensitive).
    /// `labels`, when given, adds quality metrics to the summary.
    pub fn route_batch(
        &self,
        records: &[DatasetRecord],
        labels: Option<&[u8]>,
    ) -> Result<(Vec<u8>, Vec<RouteTrace>, RouteSummary), RouterError> {
        let mut finals = Vec::with_capacity(records.len());
        let mut traces = Vec::with_capacity(records.len());
        for record in records {
            let trace = self.route_one(record)?;
            finals.push(trace.final_prediction);
            traces.push(trace);
        }
        let deferred = traces.iter().filter(|t| t.deferred).count();
        let fallbacks = traces.iter().filter(|t| t.fallback.is_some()).count();
        let (confusion, f1, acc) = match labels {
            Some(labels) => {
                assert_eq!(labels.len(), records.len(), "one label per record");
                let counts: ConfusionCounts =
                    confusion_from_pairs(finals.iter().copied().zip(labels.iter().copied()));
                (Some(counts), Some(f1_score(counts)), accuracy(counts).ok())
            }
            None => (None, None, None),
        };
        let summary = RouteSummary {
            total: records.len(),
            deferred,
            deferred_fraction: if records.is_empty() {
                0.0
            } else {
                deferred as f64 / records.len() as f64
            },
            fallbacks,
            confusion,
            f1,
            accuracy: acc,
        };
        Ok((finals, traces, summary))
    }
}
