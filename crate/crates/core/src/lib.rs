//! Hybrid edge-cloud inference routing.
//!
//! The pipeline in one pass:
//!
//! 1. [`ingest`] loads a labeled dataset manifest.
//! 2. [`teachers`] provides the small (edge) and large (cloud) prediction
//!    oracles — synthetic, replayed from fixtures, or remote over HTTP.
//! 3. [`dmd`] runs both teachers over the data and labels each item with
//!    whether they agree (dual-model distillation), producing training data
//!    for the switcher without any human annotation.
//! 4. [`switcher`] trains a small MLP on the edge model's hidden features to
//!    predict that agreement probability.
//! 5. [`calibrate`] sweeps deferral fractions in bucket steps over switcher
//!    scores and turns the F1 peak into a probability cutoff.
//! 6. [`router`] dispatches live traffic: the small model always runs, and
//!    items whose alignment probability falls at or below the cutoff are
//!    deferred to the large model, under a sliding-window budget.
//! 7. [`costsim`] prices the whole arrangement in seconds and kilojoules.

pub mod calibrate;
pub mod costsim;
pub mod dmd;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod router;
pub mod switcher;
pub mod teachers;
pub mod types;

pub use metrics::{accuracy, confusion_from_pairs, f1_score, ConfusionCounts};
pub use rng::{RngSeed, SplitMix64};
pub use types::{DatasetRecord, Split, TeacherOutput};
