//! radnet-core: a from-scratch, deterministic CNN training and
//! explainability engine for chest radiograph triage.
//!
//! The crate provides:
//!
//! - [`tensor`] — dense row-major tensors with selectable precision
//!   (`f32` for training, `f64` for verification) and the primitive math
//!   (matmul, same-padding, im2col lowering, bilinear resize, reductions);
//! - [`layers`] — forward/backward rules for the closed layer set
//!   (conv2d, 2x2 maxpool, batchnorm2d, dropout, dense, flatten,
//!   relu/sigmoid/softmax), the two cross-entropy losses and a
//!   finite-difference gradient checker;
//! - [`model`] — the 6-block convolutional classifier built from a
//!   declarative [`model::ModelSpec`], plus binary checkpoint I/O;
//! - [`optim`] — Adam, reduce-on-plateau scheduling, best-validation
//!   checkpoint tracking and the training loop;
//! - [`data`] — manifest-driven dataset ingestion with patient-disjoint
//!   splitting and seeded batch ordering;
//! - [`metrics`] — confusion matrices and per-class precision/recall/F1
//!   reports;
//! - [`gradcam`] — Grad-CAM heatmaps, overlay rendering and 6-zone
//!   severity grading.
//!
//! All randomness flows from explicit 64-bit seeds through ChaCha streams;
//! given a fixed seed and thread-count-independent kernels, training runs
//! are bitwise reproducible.

pub mod data;
pub mod error;
pub mod gradcam;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape2d, Tensor};
