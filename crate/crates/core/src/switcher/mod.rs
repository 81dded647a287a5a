//! The switcher: a from-scratch multilayer perceptron mapping the small
//! model's hidden features to an alignment probability.
//!
//! Hidden layers are affine maps followed by a rectifier; the output layer
//! is affine only, so [`SwitcherModel::forward_eval`] returns a logit and
//! the sigmoid lives in the loss and in [`SwitcherModel::predict_alignment`].
//! Training applies inverted dropout to hidden activations, so eval-mode
//! forward passes need no rescaling.

mod model_io;
mod train;

pub use model_io::{load_model, save_model, ModelIoError, SavedModel};
pub use train::{train, OptimizerKind, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{RngSeed, SplitMix64};

#[derive(Debug, Error)]
pub enum SwitcherError {
    #[error("feature vector has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("logits and labels have different lengths ({logits} vs {labels})")]
    LengthMismatch { logits: usize, labels: usize },
    #[error("operation requires a non-empty input")]
    EmptyInput,
    #[error("training dataset for {role} is empty")]
    EmptyDataset { role: &'static str },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
}

/// Layer widths of the perceptron. The output is a single logit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
}

impl MlpArchitecture {
    pub const OUTPUT_DIM: usize = 1;

    pub fn new(input_dim: usize, hidden_dims: Vec<usize>) -> Self {
        assert!(input_dim > 0, "input_dim must be positive");
        assert!(
            hidden_dims.iter().all(|&d| d > 0),
            "hidden dims must be positive"
        );
        MlpArchitecture {
            input_dim,
            hidden_dims,
        }
    }

    /// The stock configuration: 1536 → 512 → 128 → 1.
    pub fn stock() -> Self {
        MlpArchitecture::new(1536, vec![512, 128])
    }

    /// Same hidden stack, different input width.
    pub fn stock_with_input(input_dim: usize) -> Self {
        MlpArchitecture::new(input_dim, vec![512, 128])
    }

    /// Widths including input and output: `[input, hidden..., 1]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(Self::OUTPUT_DIM);
        widths
    }

    /// Number of affine layers.
    pub fn layer_count(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn parameter_count(&self) -> usize {
        let widths = self.layer_widths();
        widths
            .windows(2)
            .map(|pair| pair[0] * pair[1] + pair[1])
            .sum()
    }
}

/// Hidden-layer nonlinearity. Only the rectifier is defined today; the
/// model file format reserves a tag byte for alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Dense matrix, row-major; `rows` is the layer's output width.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// MLP parameters plus architecture. Immutable during inference; training
/// owns a mutable copy.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitcherModel {
    architecture: MlpArchitecture,
    activation: Activation,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &SwitcherModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Largest absolute entry, handy for saturation checks.
    pub fn max_abs(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|m| m.data.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let b = self
            .biases
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        w.max(b)
    }
}

/// Per-example inverted-dropout masks for one batch: entry is `0` for a
/// dropped unit or `1/(1-rate)` for a kept one, per hidden layer.
#[derive(Debug, Clone)]
pub struct BatchDropout {
    masks: Vec<Vec<Vec<f64>>>,
}

impl BatchDropout {
    pub fn sample(
        arch: &MlpArchitecture,
        rate: f64,
        batch_size: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        let keep_scale = 1.0 / (1.0 - rate);
        let masks = (0..batch_size)
            .map(|_| {
                arch.hidden_dims
                    .iter()
                    .map(|&width| {
                        (0..width)
                            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        BatchDropout { masks }
    }

    pub fn batch_size(&self) -> usize {
        self.masks.len()
    }

    fn example(&self, index: usize) -> &[Vec<f64>] {
        &self.masks[index]
    }
}

/// Numerically stable logistic function; output is strictly inside (0, 1)
/// for any finite input (logits are clamped to ±36 first, within which the
/// result is representable away from both endpoints).
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-36.0, 36.0);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// Unclamped logistic for gradient terms, where saturation to exactly 0 or 1
// is the correct limiting behavior.
fn sigmoid_raw(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy evaluated on logits, in the stable form
/// `ln(1 + exp(-|z|)) + max(z, 0) - z·y`. Never NaN/Inf for finite logits.
pub fn bce_with_logits_loss(logits: &[f64], labels: &[u8]) -> Result<f64, SwitcherError> {
    if logits.len() != labels.len() {
        return Err(SwitcherError::LengthMismatch {
            logits: logits.len(),
            labels: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(SwitcherError::EmptyInput);
    }
    let mut total = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        if y > 1 {
            return Err(SwitcherError::NonBinaryLabel(y));
        }
        total += (-z.abs()).exp().ln_1p() + z.max(0.0) - z * f64::from(y);
    }
    Ok(total / logits.len() as f64)
}

struct ForwardTape {
    /// Per layer: rectified activations before dropout.
    relu_out: Vec<Vec<f64>>,
    /// Per layer: activations actually fed forward (after dropout).
    fed: Vec<Vec<f64>>,
    logit: f64,
}

impl SwitcherModel {
    pub fn architecture(&self) -> &MlpArchitecture {
        &self.architecture
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.architecture.parameter_count()
    }

    /// Build a model directly from parameters; shapes must match the
    /// architecture. Intended for hand-built models and the file loader.
    pub fn from_parameters(
        architecture: MlpArchitecture,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
    ) -> Self {
        let widths = architecture.layer_widths();
        assert_eq!(weights.len(), architecture.layer_count());
        assert_eq!(biases.len(), architecture.layer_count());
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            assert_eq!(w.rows, widths[l + 1], "layer {l} weight rows");
            assert_eq!(w.cols, widths[l], "layer {l} weight cols");
            assert_eq!(b.len(), widths[l + 1], "layer {l} bias length");
        }
        SwitcherModel {
            architecture,
            activation: Activation::Relu,
            weights,
            biases,
        }
    }

    /// Check every parameter is finite (the load-time invariant).
    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, features: &[f64]) -> Result<(), SwitcherError> {
        if features.len() != self.architecture.input_dim {
            return Err(SwitcherError::DimensionMismatch {
                expected: self.architecture.input_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn forward_tape(&self, features: &[f64], dropout: Option<&[Vec<f64>]>) -> ForwardTape {
        let layer_count = self.weights.len();
        let mut relu_out = Vec::with_capacity(layer_count.saturating_sub(1));
        let mut fed = Vec::with_capacity(layer_count.saturating_sub(1));
        let mut current: &[f64] = features;
        let mut logit = 0.0;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z: Vec<f64> = (0..w.rows)
                .map(|r| {
                    let row = w.row(r);
                    let mut acc = b[r];
                    for (wi, xi) in row.iter().zip(current) {
                        acc += wi * xi;
                    }
                    acc
                })
                .collect();
            if l + 1 == layer_count {
                logit = z[0];
            } else {
                for v in &mut z {
                    *v = v.max(0.0);
                }
                let mut after = z.clone();
                if let Some(masks) = dropout {
                    for (v, m) in after.iter_mut().zip(&masks[l]) {
                        *v *= m;
                    }
                }
                relu_out.push(z);
                fed.push(after);
                current = fed.last().expect("just pushed").as_slice();
            }
        }
        ForwardTape {
            relu_out,
            fed,
            logit,
        }
    }

    /// Eval-mode forward pass: no dropout, returns the raw logit.
    pub fn forward_eval(&self, features: &[f64]) -> Result<f64, SwitcherError> {
        self.check_input(features)?;
        Ok(self.forward_tape(features, None).logit)
    }

    /// Train-mode forward pass using the given example's dropout masks.
    pub fn forward_train(
        &self,
        features: &[f64],
        dropout: &BatchDropout,
        example_index: usize,
    ) -> Result<f64, SwitcherError> {
        self.check_input(features)?;
        Ok(self
            .forward_tape(features, Some(dropout.example(example_index)))
            .logit)
    }

    /// Estimated probability that the large model's answer aligns with the
    /// small model's. Strictly inside (0, 1).
    pub fn predict_alignment(&self, features: &[f64]) -> Result<f64, SwitcherError> {
        Ok(sigmoid(self.forward_eval(features)?))
    }

    /// Mean BCE-with-logits loss and its exact gradients over a batch,
    /// honoring per-example dropout masks when given.
    pub fn batch_gradients(
        &self,
        inputs: &[&[f64]],
        labels: &[u8],
        dropout: Option<&BatchDropout>,
    ) -> Result<(f64, Gradients), SwitcherError> {
        if inputs.is_empty() {
            return Err(SwitcherError::EmptyInput);
        }
        if inputs.len() != labels.len() {
            return Err(SwitcherError::LengthMismatch {
                logits: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(d) = dropout {
            assert_eq!(
                d.batch_size(),
                inputs.len(),
                "dropout masks must cover the batch"
            );
        }
        let mut grads = Gradients::zeros_like(self);
        let mut logits = Vec::with_capacity(inputs.len());
        let inv_batch = 1.0 / inputs.len() as f64;
        let layer_count = self.weights.len();

        for (i, (&x, &y)) in inputs.iter().zip(labels).enumerate() {
            if y > 1 {
                return Err(SwitcherError::NonBinaryLabel(y));
            }
            self.check_input(x)?;
            let tape = self.forward_tape(x, dropout.map(|d| d.example(i)));
            logits.push(tape.logit);

            // d(mean loss)/d(logit) for this example.
            let mut delta = vec![(sigmoid_raw(tape.logit) - f64::from(y)) * inv_batch];
            for l in (0..layer_count).rev() {
                let input_l: &[f64] = if l == 0 { x } else { &tape.fed[l - 1] };
                {
                    let gw = &mut grads.weights[l];
                    for (r, &d) in delta.iter().enumerate() {
                        let row = &mut gw.data[r * gw.cols..(r + 1) * gw.cols];
                        for (slot, &xi) in row.iter_mut().zip(input_l) {
                            *slot += d * xi;
                        }
                    }
                    for (slot, &d) in grads.biases[l].iter_mut().zip(&delta) {
                        *slot += d;
                    }
                }
                if l == 0 {
                    break;
                }
                // Propagate: W^T delta, then the dropout mask, then the
                // rectifier derivative (relu output > 0 iff pre-activation > 0).
                let w = &self.weights[l];
                let prev_width = w.cols;
                let mut next_delta = vec![0.0; prev_width];
                for (r, &d) in delta.iter().enumerate() {
                    let row = w.row(r);
                    for (slot, &wi) in next_delta.iter_mut().zip(row) {
                        *slot += wi * d;
                    }
                }
                if let Some(d) = dropout {
                    for (slot, &m) in next_delta.iter_mut().zip(&d.example(i)[l - 1]) {
                        *slot *= m;
                    }
                }
                for (slot, &a) in next_delta.iter_mut().zip(&tape.relu_out[l - 1]) {
                    if a <= 0.0 {
                        *slot = 0.0;
                    }
                }
                delta = next_delta;
            }
        }
        let loss = bce_with_logits_loss(&logits, labels)?;
        Ok((loss, grads))
    }
}

/// Initialize parameters: weights uniform in `±sqrt(6 / fan_in)`, biases
/// zero. Deterministic for a given seed.
pub fn init_model(arch: &MlpArchitecture, seed: RngSeed) -> SwitcherModel {
    let mut rng = SplitMix64::new(seed);
    let widths = arch.layer_widths();
    let mut weights = Vec::with_capacity(arch.layer_count());
    let mut biases = Vec::with_capacity(arch.layer_count());
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut m = Matrix::zeros(fan_out, fan_in);
        for v in &mut m.data {
            *v = rng.uniform(-bound, bound);
        }
        weights.push(m);
        biases.push(vec![0.0; fan_out]);
    }
    SwitcherModel {
        architecture: arch.clone(),
        activation: Activation::Relu,
        weights,
        biases,
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    fn tiny_model(w1: f64, b1: f64, w2: f64, b2: f64) -> SwitcherModel {
        SwitcherModel::from_parameters(
            MlpArchitecture::new(1, vec![1]),
            vec![
                Matrix {
                    rows: 1,
                    cols: 1,
                    data: vec![w1],
                },
                Matrix {
                    rows: 1,
                    cols: 1,
                    data: vec![w2],
                },
            ],
            vec![vec![b1], vec![b2]],
        )
    }

    #[test]
    fn init_respects_shapes_and_bounds() {
        let arch = MlpArchitecture::new(2, vec![3]);
        let model = init_model(&arch, RngSeed(1));
        assert_eq!(model.weights()[0].rows, 3);
        assert_eq!(model.weights()[0].cols, 2);
        assert_eq!(model.weights()[1].rows, 1);
        assert_eq!(model.weights()[1].cols, 3);
        assert_eq!(model.biases()[0], vec![0.0; 3]);
        assert_eq!(model.biases()[1], vec![0.0]);
        let bound0 = (6.0f64 / 2.0).sqrt();
        assert!(model.weights()[0].data.iter().all(|w| w.abs() <= bound0));
        let bound1 = (6.0f64 / 3.0).sqrt();
        assert!(model.weights()[1].data.iter().all(|w| w.abs() <= bound1));
    }

    #[test]
    fn init_is_deterministic() {
        let arch = MlpArchitecture::new(5, vec![4, 3]);
        assert_eq!(init_model(&arch, RngSeed(9)), init_model(&arch, RngSeed(9)));
        assert_ne!(init_model(&arch, RngSeed(9)), init_model(&arch, RngSeed(10)));
    }

    #[test]
    fn stock_architecture_parameter_count() {
        // 1536·512+512 + 512·128+128 + 128·1+1
        assert_eq!(MlpArchitecture::stock().parameter_count(), 852_737);
    }

    #[test]
    fn zero_model_forwards_to_zero_logit() {
        let arch = MlpArchitecture::new(3, vec![2]);
        let model = SwitcherModel::from_parameters(
            arch,
            vec![Matrix::zeros(2, 3), Matrix::zeros(1, 2)],
            vec![vec![0.0; 2], vec![0.0]],
        );
        assert_eq!(model.forward_eval(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(model.predict_alignment(&[1.0, -2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn hand_computed_forward() {
        // hidden = relu(2·1 + 0) = 2, logit = 3·2 + 1 = 7
        let model = tiny_model(2.0, 0.0, 3.0, 1.0);
        assert_eq!(model.forward_eval(&[1.0]).unwrap(), 7.0);
        // hidden = relu(-2) = 0, logit = 1
        assert_eq!(model.forward_eval(&[-1.0]).unwrap(), 1.0);
    }

    #[test]
    fn alignment_probability_matches_sigmoid() {
        let model = tiny_model(2.0, 0.0, 3.0, 1.0);
        let p = model.predict_alignment(&[1.0]).unwrap();
        assert!((p - 0.9990889488055994).abs() < 1e-12);
    }

    #[test]
    fn alignment_probability_is_strictly_inside_unit_interval() {
        let model = tiny_model(1.0, 0.0, -1e9, 0.0);
        let p = model.predict_alignment(&[1e9]).unwrap();
        assert!(p > 0.0 && p.is_finite());
        let model = tiny_model(1.0, 0.0, 1e9, 0.0);
        let p = model.predict_alignment(&[1e9]).unwrap();
        assert!(p < 1.0);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = tiny_model(1.0, 0.0, 1.0, 0.0);
        assert!(matches!(
            model.forward_eval(&[1.0, 2.0]),
            Err(SwitcherError::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce_with_logits_loss(&[0.0], &[1]).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        assert!(bce_with_logits_loss(&[100.0], &[1]).unwrap() < 1e-6);
        let loss = bce_with_logits_loss(&[-2.0, 3.0], &[0, 1]).unwrap();
        assert!((loss - 0.08775768130835729).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_bad_input() {
        assert!(matches!(
            bce_with_logits_loss(&[], &[]),
            Err(SwitcherError::EmptyInput)
        ));
        assert!(matches!(
            bce_with_logits_loss(&[1.0], &[1, 0]),
            Err(SwitcherError::LengthMismatch { .. })
        ));
        assert!(matches!(
            bce_with_logits_loss(&[1.0], &[2]),
            Err(SwitcherError::NonBinaryLabel(2))
        ));
    }

    proptest! {
        #[test]
        fn bce_is_finite_and_nonnegative(
            logits in prop::collection::vec(-1e6f64..1e6, 1..50),
            seed in any::<u64>(),
        ) {
            let mut rng = SplitMix64::new(RngSeed(seed));
            let labels: Vec<u8> = logits.iter().map(|_| (rng.next_u64() % 2) as u8).collect();
            let loss = bce_with_logits_loss(&logits, &labels).unwrap();
            prop_assert!(loss.is_finite());
            prop_assert!(loss >= 0.0);
        }
    }

    #[test]
    fn saturated_correct_predictions_have_vanishing_gradients() {
        let model = tiny_model(50.0, 0.0, 50.0, 0.0); // logit = 2500·x
        let inputs: Vec<&[f64]> = vec![&[1.0]];
        let (_, grads) = model.batch_gradients(&inputs, &[1], None).unwrap();
        assert!(grads.max_abs() < 1e-6);
    }

    #[test]
    fn hand_derived_gradients_for_tiny_net() {
        // logit z = w2·relu(w1·x + b1) + b2 with x = 1, y = 0:
        //   h = relu(2) = 2, z = 3·2 + 1 = 7, s = sigmoid(7)
        //   dL/dz = s, dL/dw2 = s·h, dL/db2 = s,
        //   dL/dw1 = s·w2·x, dL/db1 = s·w2
        let model = tiny_model(2.0, 0.0, 3.0, 1.0);
        let inputs: Vec<&[f64]> = vec![&[1.0]];
        let (_, grads) = model.batch_gradients(&inputs, &[0], None).unwrap();
        let s = sigmoid(7.0);
        assert!((grads.weights[1].data[0] - s * 2.0).abs() < 1e-12);
        assert!((grads.biases[1][0] - s).abs() < 1e-12);
        assert!((grads.weights[0].data[0] - s * 3.0).abs() < 1e-12);
        assert!((grads.biases[0][0] - s * 3.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_without_dropout() {
        let mut rng = SplitMix64::new(RngSeed(31));
        let arch = MlpArchitecture::new(4, vec![5, 3]);
        let model = random_model(&arch, &mut rng);
        let data: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let inputs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let labels: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
        let worst = max_gradient_relative_error(&model, &inputs, &labels, None);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_with_fixed_dropout_masks() {
        let mut rng = SplitMix64::new(RngSeed(77));
        let arch = MlpArchitecture::new(3, vec![6, 4]);
        let model = random_model(&arch, &mut rng);
        let data: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let inputs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let labels = vec![1, 0, 0, 1];
        let dropout = BatchDropout::sample(&arch, 0.3, 4, &mut rng);
        let worst = max_gradient_relative_error(&model, &inputs, &labels, Some(&dropout));
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_check_sweep_over_random_architectures() {
        let mut rng = SplitMix64::new(RngSeed(4242));
        for trial in 0..20 {
            let input_dim = 1 + rng.below(8);
            let depth = rng.below(3);
            let hidden: Vec<usize> = (0..depth).map(|_| 1 + rng.below(8)).collect();
            let arch = MlpArchitecture::new(input_dim, hidden);
            let model = random_model(&arch, &mut rng);
            let batch = 1 + rng.below(5);
            let data: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect();
            let inputs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
            let labels: Vec<u8> = (0..batch).map(|_| (rng.next_u64() % 2) as u8).collect();
            let worst = max_gradient_relative_error(&model, &inputs, &labels, None);
            assert!(worst < 1e-4, "trial {trial}: worst relative error {worst}");
        }
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let mut rng = SplitMix64::new(RngSeed(5));
        let arch = MlpArchitecture::new(6, vec![4]);
        let model = random_model(&arch, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let first = model.forward_eval(&x).unwrap();
        for _ in 0..10 {
            assert_eq!(model.forward_eval(&x).unwrap().to_bits(), first.to_bits());
        }
    }

    #[test]
    fn inverted_dropout_preserves_expected_activations() {
        let mut rng = SplitMix64::new(RngSeed(100));
        let arch = MlpArchitecture::new(4, vec![8]);
        let model = random_model(&arch, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let eval_tape = model.forward_tape(&x, None);
        let eval_hidden = &eval_tape.fed[0];

        let trials = 10_000;
        let mut sums = [0.0; 8];
        for _ in 0..trials {
            let dropout = BatchDropout::sample(&arch, 0.3, 1, &mut rng);
            let tape = model.forward_tape(&x, Some(dropout.example(0)));
            for (s, v) in sums.iter_mut().zip(&tape.fed[0]) {
                *s += v;
            }
        }
        for (unit, (&mean_sum, &expected)) in sums.iter().zip(eval_hidden).enumerate() {
            let mean = mean_sum / trials as f64;
            if expected.abs() > 0.05 {
                let rel = (mean - expected).abs() / expected.abs();
                assert!(rel < 0.02, "unit {unit}: mean {mean} vs eval {expected}");
            }
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = SplitMix64::new(RngSeed(8));
        let arch = MlpArchitecture::new(3, vec![5]);
        let model = random_model(&arch, &mut rng);
        let dropout = BatchDropout::sample(&arch, 0.0, 1, &mut rng);
        let x = [0.3, -0.7, 0.2];
        assert_eq!(
            model.forward_train(&x, &dropout, 0).unwrap(),
            model.forward_eval(&x).unwrap()
        );
    }
}
