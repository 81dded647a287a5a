//! Mini-batch training loop with seeded shuffling, inverted dropout,
//! validation-F1 early stopping, and a choice of plain SGD or adaptive
//! moment estimation.

use serde::{Deserialize, Serialize};

use super::{
    init_model, BatchDropout, Gradients, MlpArchitecture, SwitcherError, SwitcherModel,
};
use crate::dmd::DmdRecord;
use crate::metrics::{accuracy, confusion_from_pairs, f1_score};
use crate::rng::{RngSeed, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoments,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub early_stop_patience: usize,
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0001,
            dropout_rate: 0.3,
            max_epochs: 100,
            batch_size: 32,
            optimizer: OptimizerKind::AdaptiveMoments,
            early_stop_patience: 10,
            seed: RngSeed(0),
        }
    }
}

/// Per-epoch history plus which epoch's parameters were kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    pub val_f1: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// 1-based epoch whose parameters the returned model carries.
    pub best_epoch: usize,
}

struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
}

enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    fn new(kind: OptimizerKind, model: &SwitcherModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::AdaptiveMoments => Optimizer::Adam(AdamState {
                m: Gradients::zeros_like(model),
                v: Gradients::zeros_like(model),
                step: 0,
            }),
        }
    }

    fn apply(&mut self, model: &mut SwitcherModel, grads: &Gradients, lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (w, g) in model.weights_mut().iter_mut().zip(&grads.weights) {
                    for (v, gi) in w.data.iter_mut().zip(&g.data) {
                        *v -= lr * gi;
                    }
                }
                for (b, g) in model.biases_mut().iter_mut().zip(&grads.biases) {
                    for (v, gi) in b.iter_mut().zip(g) {
                        *v -= lr * gi;
                    }
                }
            }
            Optimizer::Adam(state) => {
                const BETA1: f64 = 0.9;
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                state.step += 1;
                let correction1 = 1.0 - BETA1.powi(state.step as i32);
                let correction2 = 1.0 - BETA2.powi(state.step as i32);
                let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *param -= lr * m_hat / (v_hat.sqrt() + EPS);
                };
                for ((w, g), (ms, vs)) in model
                    .weights_mut()
                    .iter_mut()
                    .zip(&grads.weights)
                    .zip(state.m.weights.iter_mut().zip(state.v.weights.iter_mut()))
                {
                    for ((p, gi), (m, v)) in w
                        .data
                        .iter_mut()
                        .zip(&g.data)
                        .zip(ms.data.iter_mut().zip(vs.data.iter_mut()))
                    {
                        update(p, *gi, m, v);
                    }
                }
                for ((b, g), (ms, vs)) in model
                    .biases_mut()
                    .iter_mut()
                    .zip(&grads.biases)
                    .zip(state.m.biases.iter_mut().zip(state.v.biases.iter_mut()))
                {
                    for ((p, gi), (m, v)) in
                        b.iter_mut().zip(g).zip(ms.iter_mut().zip(vs.iter_mut()))
                    {
                        update(p, *gi, m, v);
                    }
                }
            }
        }
    }
}

/// Validation metrics at the 0.5 probability threshold (logit >= 0).
fn validate(model: &SwitcherModel, records: &[DmdRecord]) -> Result<(f64, f64), SwitcherError> {
    let mut pairs = Vec::with_capacity(records.len());
    for record in records {
        let logit = model.forward_eval(&record.last_hidden_layer)?;
        pairs.push((u8::from(logit >= 0.0), record.label));
    }
    let counts = confusion_from_pairs(pairs);
    Ok((f1_score(counts), accuracy(counts).unwrap_or(0.0)))
}

/// Train a fresh model on agreement-labeled data.
///
/// Stops at `max_epochs` or after `early_stop_patience` epochs without a
/// strict validation-F1 improvement, and returns the parameters from the
/// best validation epoch. Bit-identical results for identical inputs.
pub fn train(
    train_records: &[DmdRecord],
    val_records: &[DmdRecord],
    arch: &MlpArchitecture,
    config: &TrainConfig,
) -> Result<(SwitcherModel, TrainReport), SwitcherError> {
    if train_records.is_empty() {
        return Err(SwitcherError::EmptyDataset { role: "train" });
    }
    if val_records.is_empty() {
        return Err(SwitcherError::EmptyDataset { role: "validation" });
    }
    for record in train_records.iter().chain(val_records) {
        if record.last_hidden_layer.len() != arch.input_dim {
            return Err(SwitcherError::DimensionMismatch {
                expected: arch.input_dim,
                got: record.last_hidden_layer.len(),
            });
        }
        if record.label > 1 {
            return Err(SwitcherError::NonBinaryLabel(record.label));
        }
    }
    assert!(config.batch_size > 0, "batch_size must be positive");
    assert!(config.max_epochs > 0, "max_epochs must be positive");
    assert!(
        (0.0..1.0).contains(&config.dropout_rate),
        "dropout_rate must be in [0, 1)"
    );

    let init_seed = RngSeed(SplitMix64::for_key(config.seed, "init").next_u64());
    let mut shuffle_rng = SplitMix64::for_key(config.seed, "shuffle");
    let mut dropout_rng = SplitMix64::for_key(config.seed, "dropout");

    let mut model = init_model(arch, init_seed);
    let mut optimizer = Optimizer::new(config.optimizer, &model);

    let mut report = TrainReport {
        epochs_run: 0,
        train_loss: Vec::new(),
        val_f1: Vec::new(),
        val_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, SwitcherModel, usize)> = None;
    let mut stale_epochs = 0;
    let mut indices: Vec<usize> = (0..train_records.len()).collect();

    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut indices);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in indices.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&[f64]> = batch
                .iter()
                .map(|&i| train_records[i].last_hidden_layer.as_slice())
                .collect();
            let labels: Vec<u8> = batch.iter().map(|&i| train_records[i].label).collect();
            let dropout = if config.dropout_rate > 0.0 {
                Some(BatchDropout::sample(
                    arch,
                    config.dropout_rate,
                    batch.len(),
                    &mut dropout_rng,
                ))
            } else {
                None
            };
            let (loss, grads) = model.batch_gradients(&inputs, &labels, dropout.as_ref())?;
            if !loss.is_finite() {
                return Err(SwitcherError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * batch.len() as f64;
            optimizer.apply(&mut model, &grads, config.learning_rate);
        }

        let (val_f1, val_acc) = validate(&model, val_records)?;
        report.train_loss.push(loss_sum / train_records.len() as f64);
        report.val_f1.push(val_f1);
        report.val_accuracy.push(val_acc);
        report.epochs_run = epoch;

        // Ties keep the most recent parameters (training continues to
        // reduce loss after the F1 monitor saturates); patience counts only
        // strict improvements.
        let strictly_better = best.as_ref().is_none_or(|(f1, _, _)| val_f1 > *f1);
        if best.as_ref().is_none_or(|(f1, _, _)| val_f1 >= *f1) {
            best = Some((val_f1, model.clone(), epoch));
        }
        if strictly_better {
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.early_stop_patience {
                break;
            }
        }
    }

    let (_, best_model, best_epoch) = best.expect("at least one epoch ran");
    report.best_epoch = best_epoch;
    Ok((best_model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DatasetManifest;
    use crate::teachers::{
        FeatureModel, SyntheticTeacher, SyntheticTeacherParams, Teacher, TeacherRole,
    };
    use crate::types::{DatasetRecord, Split};

    fn constant_label_records(n: usize, dim: usize, label: u8, seed: u64) -> Vec<DmdRecord> {
        let mut rng = SplitMix64::new(RngSeed(seed));
        (0..n)
            .map(|i| DmdRecord {
                image_path: format!("img{i}"),
                last_hidden_layer: (0..dim).map(|_| rng.normal()).collect(),
                label,
            })
            .collect()
    }

    /// Agreement-labeled data where features encode small-model correctness
    /// and the large teacher is perfect, so labels are linearly separable.
    pub(crate) fn separable_dmd(
        n: usize,
        dim: usize,
        small_accuracy: f64,
        seed: u64,
    ) -> Vec<DmdRecord> {
        let small = SyntheticTeacher::new(
            TeacherRole::Small,
            SyntheticTeacherParams {
                accuracy_positive: small_accuracy,
                accuracy_negative: small_accuracy,
                feature_dim: dim,
                feature_model: FeatureModel::CorrectnessConditionedGaussian,
                noise_scale: 0.1,
                seed: RngSeed(seed),
            },
        );
        (0..n)
            .map(|i| {
                let record = DatasetRecord {
                    record_id: format!("sep{seed}-{i}"),
                    payload_ref: format!("img{i}"),
                    label: (i % 2) as u8,
                    split: Split::Train,
                };
                let out = small.predict(&record).unwrap();
                // Perfect large teacher: agreement == small-model correctness.
                DmdRecord {
                    image_path: record.payload_ref,
                    last_hidden_layer: out.hidden.unwrap(),
                    label: u8::from(out.prediction == record.label),
                }
            })
            .collect()
    }

    #[test]
    fn rejects_empty_datasets_and_bad_dims() {
        let arch = MlpArchitecture::new(4, vec![3]);
        let config = TrainConfig::default();
        let data = constant_label_records(4, 4, 1, 1);
        assert!(matches!(
            train(&[], &data, &arch, &config),
            Err(SwitcherError::EmptyDataset { role: "train" })
        ));
        assert!(matches!(
            train(&data, &[], &arch, &config),
            Err(SwitcherError::EmptyDataset { role: "validation" })
        ));
        let wrong = constant_label_records(4, 3, 1, 2);
        assert!(matches!(
            train(&wrong, &data, &arch, &config),
            Err(SwitcherError::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn constant_labels_converge_to_confident_positive() {
        let arch = MlpArchitecture::new(4, vec![8]);
        let config = TrainConfig {
            learning_rate: 0.05,
            dropout_rate: 0.0,
            max_epochs: 100,
            early_stop_patience: 100,
            seed: RngSeed(3),
            ..TrainConfig::default()
        };
        let train_data = constant_label_records(64, 4, 1, 10);
        let val_data = constant_label_records(16, 4, 1, 11);
        let (model, report) = train(&train_data, &val_data, &arch, &config).unwrap();
        assert_eq!(*report.val_accuracy.last().unwrap(), 1.0);
        for record in &val_data {
            let p = model.predict_alignment(&record.last_hidden_layer).unwrap();
            assert!(p > 0.9, "probability {p}");
        }
    }

    #[test]
    fn separable_data_reaches_high_validation_f1() {
        let arch = MlpArchitecture::new(16, vec![32, 8]);
        let config = TrainConfig {
            seed: RngSeed(7),
            learning_rate: 0.001,
            ..TrainConfig::default()
        };
        let train_data = separable_dmd(400, 16, 0.6, 50);
        let val_data = separable_dmd(100, 16, 0.6, 51);
        let (_, report) = train(&train_data, &val_data, &arch, &config).unwrap();
        let best_f1 = report.val_f1[report.best_epoch - 1];
        assert!(best_f1 >= 0.95, "best validation F1 {best_f1}");
    }

    #[test]
    fn training_is_bit_deterministic() {
        let arch = MlpArchitecture::new(8, vec![6]);
        let config = TrainConfig {
            max_epochs: 5,
            seed: RngSeed(21),
            ..TrainConfig::default()
        };
        let train_data = separable_dmd(60, 8, 0.7, 60);
        let val_data = separable_dmd(20, 8, 0.7, 61);
        let (model_a, report_a) = train(&train_data, &val_data, &arch, &config).unwrap();
        let (model_b, report_b) = train(&train_data, &val_data, &arch, &config).unwrap();
        assert_eq!(model_a, model_b);
        assert_eq!(report_a.train_loss, report_b.train_loss);
        assert_eq!(report_a.val_f1, report_b.val_f1);
    }

    #[test]
    fn sgd_loss_is_monotone_on_a_single_repeated_example() {
        let arch = MlpArchitecture::new(2, vec![3]);
        let config = TrainConfig {
            learning_rate: 0.05,
            dropout_rate: 0.0,
            max_epochs: 40,
            batch_size: 1,
            optimizer: OptimizerKind::Sgd,
            early_stop_patience: 40,
            seed: RngSeed(13),
        };
        let record = DmdRecord {
            image_path: "x".into(),
            last_hidden_layer: vec![0.5, -1.0],
            label: 1,
        };
        let train_data = vec![record.clone()];
        let val_data = vec![record];
        let (_, report) = train(&train_data, &val_data, &arch, &config).unwrap();
        for window in report.train_loss.windows(2) {
            assert!(
                window[1] <= window[0] + 1e-9,
                "loss increased: {} -> {}",
                window[0],
                window[1]
            );
        }
    }

    #[test]
    fn epoch_cap_and_early_stop_bound_epochs_run() {
        let arch = MlpArchitecture::new(4, vec![4]);
        let train_data = separable_dmd(40, 4, 0.6, 70);
        let val_data = separable_dmd(10, 4, 0.6, 71);

        let one_epoch = TrainConfig {
            max_epochs: 1,
            seed: RngSeed(1),
            ..TrainConfig::default()
        };
        let (_, report) = train(&train_data, &val_data, &arch, &one_epoch).unwrap();
        assert_eq!(report.epochs_run, 1);

        let patient = TrainConfig {
            max_epochs: 100,
            early_stop_patience: 3,
            // Frozen learning: nothing improves, so early stop fires fast.
            learning_rate: 0.0,
            seed: RngSeed(1),
            ..TrainConfig::default()
        };
        let (_, report) = train(&train_data, &val_data, &arch, &patient).unwrap();
        assert_eq!(report.epochs_run, 4); // epoch 1 sets the baseline, then 3 stale
        assert_eq!(report.best_epoch, 4); // ties keep the latest parameters
    }

    #[test]
    fn generated_dmd_data_pipes_into_training() {
        // End-to-end at module level: synthetic teachers -> dmd -> train.
        let records: Vec<DatasetRecord> = (0..120)
            .map(|i| DatasetRecord {
                record_id: format!("r{i}"),
                payload_ref: format!("img{i}"),
                label: (i % 2) as u8,
                split: if i < 100 { Split::Train } else { Split::Validation },
            })
            .collect();
        let manifest = DatasetManifest::from_records("mini", 8, records).unwrap();
        let small = SyntheticTeacher::new(
            TeacherRole::Small,
            SyntheticTeacherParams {
                accuracy_positive: 0.7,
                accuracy_negative: 0.7,
                feature_dim: 8,
                feature_model: FeatureModel::CorrectnessConditionedGaussian,
                noise_scale: 0.1,
                seed: RngSeed(1),
            },
        );
        let large = SyntheticTeacher::new(
            TeacherRole::Large,
            SyntheticTeacherParams {
                accuracy_positive: 1.0,
                accuracy_negative: 1.0,
                feature_dim: 8,
                feature_model: FeatureModel::ClassConditionedGaussian,
                noise_scale: 0.1,
                seed: RngSeed(2),
            },
        );
        let train_set = crate::dmd::generate_dmd(&manifest, Split::Train, &small, &large).unwrap();
        let val_set =
            crate::dmd::generate_dmd(&manifest, Split::Validation, &small, &large).unwrap();
        let arch = MlpArchitecture::new(8, vec![16]);
        let config = TrainConfig {
            learning_rate: 0.002,
            seed: RngSeed(5),
            ..TrainConfig::default()
        };
        let (_, report) = train(&train_set.records, &val_set.records, &arch, &config).unwrap();
        assert!(report.epochs_run <= 100);
        let best_f1 = report.val_f1[report.best_epoch - 1];
        assert!(best_f1 > 0.8, "best F1 {best_f1}");
    }
}
