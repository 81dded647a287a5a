//! Subcommand implementations. Each command reads the run configuration,
//! produces its artifacts under the output directory, and writes a
//! provenance record (config digest + seed) so reruns are attributable.
//!
//! Artifact layout under `out_dir`:
//!
//! ```text
//! dmd_<split>.json          distillation data (generate)
//! predictions_<split>.csv   per-record teacher predictions (generate)
//! dmd_summary.csv           per-split statistics (generate)
//! switcher.model            trained parameters (train)
//! train_report.csv          per-epoch metrics (train)
//! policy.json               calibrated deferral policy (calibrate)
//! curve.csv                 F1-vs-fraction sweep (calibrate)
//! evaluation.csv            four-approach comparison (evaluate)
//! cost_curve.csv            modeled cost sweep (cost)
//! traces.jsonl              routing traces (serve)
//! provenance_<command>.json run record
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use edgeswitch::calibrate::{
    build_curve, score_items, select_policy, uncertainty_rank, write_curve_report, write_policy,
    CalibrateError, CalibrationExample, ConfidenceItem, ScoredItem,
};
use edgeswitch::costsim::{estimate_cost, cost_curve, write_cost_report, CostError, CostParams};
use edgeswitch::dmd::{assemble_dmd, dmd_summary, read_dmd, write_dmd, DmdError, DmdProvenance, DmdRecord};
use edgeswitch::ingest::{load_manifest, IngestConfig, IngestError};
use edgeswitch::metrics::{accuracy, confusion_from_pairs, f1_score};
use edgeswitch::router::service::{serve, ServeConfig, ServeError};
use edgeswitch::switcher::{
    load_model, save_model, train, ModelIoError, SwitcherError,
};
use edgeswitch::teachers::{BatchError, TeacherError};
use edgeswitch::types::Split;

use crate::config::RunConfig;

/// Process exit codes: 1 usage, 2 data/schema, 3 runtime/teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Data,
    Runtime,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 1,
            ExitKind::Data => 2,
            ExitKind::Runtime => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Dmd(#[from] DmdError),
    #[error(transparent)]
    Switcher(#[from] SwitcherError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("data mismatch: {0}")]
    DataMismatch(String),
}

impl CliError {
    pub fn exit_kind(&self) -> ExitKind {
        match self {
            CliError::Config(_) => ExitKind::Usage,
            CliError::Io { .. } => ExitKind::Data,
            CliError::Ingest(_) => ExitKind::Data,
            CliError::Teacher(_) | CliError::Batch(_) => ExitKind::Runtime,
            CliError::Dmd(err) => match err {
                DmdError::Teacher { .. } => ExitKind::Runtime,
                _ => ExitKind::Data,
            },
            CliError::Switcher(err) => match err {
                SwitcherError::NonFiniteLoss { .. } => ExitKind::Runtime,
                _ => ExitKind::Data,
            },
            CliError::ModelIo(_) => ExitKind::Data,
            CliError::Calibrate(err) => match err {
                CalibrateError::Switcher(_) | CalibrateError::EmptyItems => ExitKind::Data,
                _ => ExitKind::Data,
            },
            CliError::Cost(err) => match err {
                CostError::UnknownPreset(_) => ExitKind::Usage,
                _ => ExitKind::Data,
            },
            CliError::Serve(err) => match err {
                ServeError::Config(_) => ExitKind::Usage,
                ServeError::Model(_) | ServeError::Policy(_) => ExitKind::Data,
                _ => ExitKind::Runtime,
            },
            CliError::DataMismatch(_) => ExitKind::Data,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn dmd_path(out_dir: &Path, split: Split) -> PathBuf {
    out_dir.join(format!("dmd_{split}.json"))
}

pub fn predictions_path(out_dir: &Path, split: Split) -> PathBuf {
    out_dir.join(format!("predictions_{split}.csv"))
}

pub fn model_path(out_dir: &Path) -> PathBuf {
    out_dir.join("switcher.model")
}

pub fn policy_path(out_dir: &Path) -> PathBuf {
    out_dir.join("policy.json")
}

pub fn curve_path(out_dir: &Path) -> PathBuf {
    out_dir.join("curve.csv")
}

pub fn evaluation_path(out_dir: &Path) -> PathBuf {
    out_dir.join("evaluation.csv")
}

pub fn trace_log_path(out_dir: &Path) -> PathBuf {
    out_dir.join("traces.jsonl")
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    config_sha256: String,
    seed: u64,
}

fn write_provenance(config: &RunConfig, command: &str) -> Result<(), CliError> {
    let path = config.out_dir.join(format!("provenance_{command}.json"));
    let record = Provenance {
        command,
        config_sha256: config.digest(),
        seed: config.seed,
    };
    let body = serde_json::to_string_pretty(&record).expect("provenance serializes");
    fs::write(&path, body).map_err(io_err(&path))
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))
}

/// One row of the predictions sidecar, positionally aligned with the DMD
/// file of the same split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub record_id: String,
    pub small_pred: u8,
    pub small_prob: f64,
    pub large_pred: u8,
    pub true_label: u8,
}

fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::DataMismatch(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<PredictionRow>, _>>()
        .map_err(|e| CliError::DataMismatch(format!("{}: {e}", path.display())))
}

/// Generate DMD files plus prediction sidecars for every split.
pub fn cmd_generate(config: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let manifest = load_manifest(
        &config.manifest.path,
        &IngestConfig {
            feature_dim: config.manifest.feature_dim,
            name: config.name.clone(),
        },
    )?;
    let small = config.small_spec().build()?;
    let large = config.large_spec().build()?;

    let mut summary_body = String::from("split,count,agree_rate,mean_norm\n");
    for split in Split::ALL {
        let records: Vec<_> = manifest.split_records(split).cloned().collect();
        let small_outputs = small.predict_batch(&records)?;
        let large_outputs = large.predict_batch(&records)?;
        let dataset = assemble_dmd(
            &manifest,
            split,
            &small_outputs,
            &large_outputs,
            DmdProvenance {
                small_teacher: small.describe(),
                large_teacher: large.describe(),
            },
        )?;
        write_dmd(&dataset.records, &dmd_path(&config.out_dir, split))?;

        let rows: Vec<PredictionRow> = records
            .iter()
            .zip(small_outputs.iter().zip(&large_outputs))
            .map(|(record, (s, l))| PredictionRow {
                record_id: record.record_id.clone(),
                small_pred: s.prediction,
                small_prob: s.probability,
                large_pred: l.prediction,
                true_label: record.label,
            })
            .collect();
        write_predictions(&rows, &predictions_path(&config.out_dir, split))?;

        let stats = dmd_summary(&dataset.records);
        summary_body.push_str(&format!(
            "{split},{},{},{}\n",
            stats.count,
            stats.agree_rate.map(|v| v.to_string()).unwrap_or_default(),
            stats.mean_norm.map(|v| v.to_string()).unwrap_or_default(),
        ));
        println!(
            "generate: {split}: {} records -> {}",
            stats.count,
            dmd_path(&config.out_dir, split).display()
        );
    }
    let summary_path = config.out_dir.join("dmd_summary.csv");
    fs::write(&summary_path, summary_body).map_err(io_err(&summary_path))?;
    write_provenance(config, "generate")
}

/// Train the switcher on the generated train/validation DMD files.
pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let train_records = read_dmd(&dmd_path(&config.out_dir, Split::Train))?;
    let val_records = read_dmd(&dmd_path(&config.out_dir, Split::Validation))?;
    let arch = config.architecture();
    let train_config = config.train_config();
    let (model, report) = train(&train_records, &val_records, &arch, &train_config)?;

    let model_file = model_path(&config.out_dir);
    save_model(&model, train_config.seed, &model_file)?;

    let mut body = String::from("epoch,train_loss,val_f1,val_accuracy,best\n");
    for epoch in 1..=report.epochs_run {
        body.push_str(&format!(
            "{epoch},{},{},{},{}\n",
            report.train_loss[epoch - 1],
            report.val_f1[epoch - 1],
            report.val_accuracy[epoch - 1],
            u8::from(epoch == report.best_epoch),
        ));
    }
    let report_path = config.out_dir.join("train_report.csv");
    fs::write(&report_path, body).map_err(io_err(&report_path))?;

    println!(
        "train: {} epochs, best epoch {} (val F1 {:.4}, accuracy {:.4}) -> {}",
        report.epochs_run,
        report.best_epoch,
        report.val_f1[report.best_epoch - 1],
        report.val_accuracy[report.best_epoch - 1],
        model_file.display()
    );
    write_provenance(config, "train")
}

/// Positionally join a DMD file with its predictions sidecar.
fn join_examples(
    dmd_records: &[DmdRecord],
    predictions: &[PredictionRow],
) -> Result<Vec<CalibrationExample>, CliError> {
    if dmd_records.len() != predictions.len() {
        return Err(CliError::DataMismatch(format!(
            "dmd file has {} records but predictions sidecar has {}",
            dmd_records.len(),
            predictions.len()
        )));
    }
    Ok(dmd_records
        .iter()
        .zip(predictions)
        .map(|(dmd, row)| CalibrationExample {
            record_id: row.record_id.clone(),
            features: dmd.last_hidden_layer.clone(),
            small_pred: row.small_pred,
            large_pred: row.large_pred,
            true_label: row.true_label,
        })
        .collect())
}

/// Score the train split, sweep the buckets, and write the policy + curve.
pub fn cmd_calibrate(config: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let saved = load_model(&model_path(&config.out_dir))?;
    let dmd_records = read_dmd(&dmd_path(&config.out_dir, Split::Train))?;
    let predictions = read_predictions(&predictions_path(&config.out_dir, Split::Train))?;
    let examples = join_examples(&dmd_records, &predictions)?;
    let scored = score_items(&saved.model, &examples)?;
    let curve = build_curve(&scored, config.calibration.bucket_count)?;
    let policy = select_policy(&curve, &scored)?;
    write_curve_report(&curve, &curve_path(&config.out_dir))?;
    write_policy(&policy, &policy_path(&config.out_dir))?;
    println!(
        "calibrate: peak at fraction {} (cutoff {:.6}) -> {}",
        policy.deferred_fraction,
        policy.probability_cutoff,
        policy_path(&config.out_dir).display()
    );
    write_provenance(config, "calibrate")
}

/// One row of the four-approach comparison.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationRow {
    pub approach: String,
    pub f1: f64,
    pub accuracy: f64,
    pub deferred_fraction: f64,
    pub modeled_time_s: f64,
    pub modeled_energy_kj: f64,
}

fn quality(finals: impl Iterator<Item = (u8, u8)>) -> (f64, f64) {
    let counts = confusion_from_pairs(finals);
    (f1_score(counts), accuracy(counts).unwrap_or(0.0))
}

/// Evaluate small-only, large-only, the uncertainty baseline at the
/// calibrated fraction, and switcher routing on the test split.
pub fn cmd_evaluate(config: &RunConfig) -> Result<Vec<EvaluationRow>, CliError> {
    ensure_out_dir(config)?;
    let saved = load_model(&model_path(&config.out_dir))?;
    let policy = edgeswitch::calibrate::read_policy(&policy_path(&config.out_dir))?;
    let dmd_records = read_dmd(&dmd_path(&config.out_dir, Split::Test))?;
    let predictions = read_predictions(&predictions_path(&config.out_dir, Split::Test))?;
    let examples = join_examples(&dmd_records, &predictions)?;
    if examples.is_empty() {
        return Err(CliError::DataMismatch("test split is empty".to_string()));
    }
    let scored: Vec<ScoredItem> = score_items(&saved.model, &examples)?;
    let n = scored.len();

    // Per-item modeled costs come from the configured preset; the item
    // count is this test split.
    let mut params: CostParams = config.cost_params()?;
    params.item_count = n;
    let cost_at = |fraction: f64| estimate_cost(&params, fraction);

    let small_only = quality(scored.iter().map(|i| (i.small_pred, i.true_label)));
    let large_only = quality(scored.iter().map(|i| (i.large_pred, i.true_label)));

    let confidence: Vec<ConfidenceItem> = predictions
        .iter()
        .map(|row| ConfidenceItem {
            record_id: row.record_id.clone(),
            probability: row.small_prob,
        })
        .collect();
    let uncertain_ids = uncertainty_rank(&confidence, policy.deferred_fraction);
    let uncertainty = quality(scored.iter().map(|i| {
        let pred = if uncertain_ids.contains(&i.record_id) {
            i.large_pred
        } else {
            i.small_pred
        };
        (pred, i.true_label)
    }));
    let uncertainty_fraction = uncertain_ids.len() as f64 / n as f64;

    let deferred_flags: Vec<bool> = scored
        .iter()
        .map(|i| policy.should_defer(i.alignment_prob, &i.record_id))
        .collect();
    let routed = quality(scored.iter().zip(&deferred_flags).map(|(i, &defer)| {
        let pred = if defer { i.large_pred } else { i.small_pred };
        (pred, i.true_label)
    }));
    let routed_fraction =
        deferred_flags.iter().filter(|&&d| d).count() as f64 / n as f64;

    let rows = vec![
        EvaluationRow {
            approach: "small-only".into(),
            f1: small_only.0,
            accuracy: small_only.1,
            deferred_fraction: 0.0,
            modeled_time_s: cost_at(0.0).total_time,
            modeled_energy_kj: cost_at(0.0).total_energy,
        },
        EvaluationRow {
            approach: "large-only".into(),
            f1: large_only.0,
            accuracy: large_only.1,
            deferred_fraction: 1.0,
            modeled_time_s: cost_at(1.0).total_time,
            modeled_energy_kj: cost_at(1.0).total_energy,
        },
        EvaluationRow {
            approach: "uncertainty-based".into(),
            f1: uncertainty.0,
            accuracy: uncertainty.1,
            deferred_fraction: uncertainty_fraction,
            modeled_time_s: cost_at(uncertainty_fraction).total_time,
            modeled_energy_kj: cost_at(uncertainty_fraction).total_energy,
        },
        EvaluationRow {
            approach: "switcher-routed".into(),
            f1: routed.0,
            accuracy: routed.1,
            deferred_fraction: routed_fraction,
            modeled_time_s: cost_at(routed_fraction).total_time,
            modeled_energy_kj: cost_at(routed_fraction).total_energy,
        },
    ];

    let mut body =
        String::from("approach,f1,accuracy,deferred_fraction,modeled_time_s,modeled_energy_kj\n");
    for row in &rows {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.approach,
            row.f1,
            row.accuracy,
            row.deferred_fraction,
            row.modeled_time_s,
            row.modeled_energy_kj
        ));
    }
    let eval_path = evaluation_path(&config.out_dir);
    fs::write(&eval_path, body).map_err(io_err(&eval_path))?;

    println!("evaluate: test split, {n} items");
    println!(
        "{:<18} {:>8} {:>9} {:>10} {:>12} {:>14}",
        "approach", "f1", "accuracy", "deferred%", "time_s", "energy_kj"
    );
    for row in &rows {
        println!(
            "{:<18} {:>8.4} {:>9.4} {:>10.1} {:>12.2} {:>14.2}",
            row.approach,
            row.f1,
            row.accuracy,
            row.deferred_fraction * 100.0,
            row.modeled_time_s,
            row.modeled_energy_kj
        );
    }
    let used_reference_preset = config.cost.params.is_none()
        && config
            .cost
            .preset
            .as_deref()
            .is_none_or(|name| name == edgeswitch::costsim::PAPER_TABLE1_PRESET);
    if used_reference_preset {
        println!(
            "note: the paper-table1 reference deployment (real teacher models, 106-item batch) \
             reports F1 58.2 / 87.5 / 76.1 / 92.1 for these four approaches at 0/100/60/60% \
             deferral; those absolute numbers need the real models and are not reproducible \
             with stand-in teachers."
        );
    }
    write_provenance(config, "evaluate")?;
    Ok(rows)
}

/// Emit the modeled cost sweep.
pub fn cmd_cost(config: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    let params = config.cost_params()?;
    let reports = cost_curve(&params, config.calibration.bucket_count);
    let path = config.out_dir.join("cost_curve.csv");
    write_cost_report(&reports, &path)?;
    println!("cost: {} points -> {}", reports.len(), path.display());
    write_provenance(config, "cost")
}

pub fn serve_config(config: &RunConfig) -> ServeConfig {
    ServeConfig {
        listen_addr: config.serve.listen_addr.clone(),
        model_path: model_path(&config.out_dir),
        policy_path: policy_path(&config.out_dir),
        small_teacher: config.small_spec(),
        large_teacher: config.large_spec(),
        budget: config.budget.clone(),
        trace_log_path: trace_log_path(&config.out_dir),
    }
}

/// Run the routing service until interrupted.
pub fn cmd_serve(config: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(config)?;
    write_provenance(config, "serve")?;
    let serve_cfg = serve_config(config);
    println!("serve: listening on {}", serve_cfg.listen_addr);
    serve(serve_cfg)?;
    Ok(())
}
