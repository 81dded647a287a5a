//! Versioned binary persistence for switcher models.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SWCH"
//! 4       4     format version (u32, currently 1)
//! 8       1     activation tag (0 = relu)
//! 9       8     training seed (u64)
//! 17      4     affine layer count L (u32)
//! 21      4(L+1) layer widths including input and output (u32 each)
//! ...           per layer, in order: weights as f64 row-major
//!               (rows = out width, cols = in width), then biases (out f64)
//! ```
//!
//! Parameters are stored as raw IEEE-754 bits, so `load(save(m)) == m`
//! exactly.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Matrix, MlpArchitecture, SwitcherModel};
use crate::rng::RngSeed;

const MAGIC: &[u8; 4] = b"SWCH";
const FORMAT_VERSION: u32 = 1;
const ACTIVATION_RELU: u8 = 0;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a switcher model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown activation tag {0}")]
    UnknownActivation(u8),
    #[error("file truncated or malformed: {0}")]
    Truncated(String),
    #[error("invalid layer widths: {0}")]
    InvalidWidths(String),
    #[error("model file contains a non-finite parameter")]
    NonFiniteParameter,
}

/// A model together with the training seed recorded in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: SwitcherModel,
    pub train_seed: RngSeed,
}

pub fn save_model(
    model: &SwitcherModel,
    train_seed: RngSeed,
    path: &Path,
) -> Result<(), ModelIoError> {
    let widths = model.architecture().layer_widths();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.push(ACTIVATION_RELU);
    bytes.extend_from_slice(&train_seed.0.to_le_bytes());
    bytes.extend_from_slice(&(model.weights().len() as u32).to_le_bytes());
    for width in &widths {
        bytes.extend_from_slice(&(*width as u32).to_le_bytes());
    }
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for v in &w.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in b {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelIoError> {
        if self.offset + n > self.bytes.len() {
            return Err(ModelIoError::Truncated(format!(
                "expected {n} bytes for {what} at offset {}",
                self.offset
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelIoError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ModelIoError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_model(path: &Path) -> Result<SavedModel, ModelIoError> {
    let bytes = fs::read(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cursor = Cursor {
        bytes: &bytes,
        offset: 0,
    };
    if cursor.take(4, "magic")? != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = cursor.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::UnsupportedVersion(version));
    }
    let activation = cursor.take(1, "activation")?[0];
    if activation != ACTIVATION_RELU {
        return Err(ModelIoError::UnknownActivation(activation));
    }
    let train_seed = RngSeed(cursor.u64("train seed")?);
    let layer_count = cursor.u32("layer count")? as usize;
    if layer_count == 0 {
        return Err(ModelIoError::InvalidWidths("zero layers".into()));
    }
    let mut widths = Vec::with_capacity(layer_count + 1);
    for i in 0..=layer_count {
        let width = cursor.u32("layer width")? as usize;
        if width == 0 {
            return Err(ModelIoError::InvalidWidths(format!("width {i} is zero")));
        }
        widths.push(width);
    }
    if *widths.last().unwrap() != MlpArchitecture::OUTPUT_DIM {
        return Err(ModelIoError::InvalidWidths(format!(
            "output width {} != {}",
            widths.last().unwrap(),
            MlpArchitecture::OUTPUT_DIM
        )));
    }

    let mut weights = Vec::with_capacity(layer_count);
    let mut biases = Vec::with_capacity(layer_count);
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut matrix = Matrix::zeros(fan_out, fan_in);
        for v in &mut matrix.data {
            *v = cursor.f64("weight")?;
            if !v.is_finite() {
                return Err(ModelIoError::NonFiniteParameter);
            }
        }
        let mut bias = vec![0.0; fan_out];
        for v in &mut bias {
            *v = cursor.f64("bias")?;
            if !v.is_finite() {
                return Err(ModelIoError::NonFiniteParameter);
            }
        }
        weights.push(matrix);
        biases.push(bias);
    }
    if cursor.offset != bytes.len() {
        return Err(ModelIoError::Truncated(format!(
            "{} trailing bytes",
            bytes.len() - cursor.offset
        )));
    }

    let arch = MlpArchitecture::new(widths[0], widths[1..layer_count].to_vec());
    Ok(SavedModel {
        model: SwitcherModel::from_parameters(arch, weights, biases),
        train_seed,
    })
}
