//! Sleep-apnea segment classification from single-lead ECG.
//!
//! The model fuses three inputs per labeled segment — the raw ECG window,
//! the resampled RR-interval series (RRI) and the R-peak envelope (RPE) —
//! through per-modality 1-D convolutional extractors and a softmax
//! cross-attention gate, and trains the fused representation with a hybrid
//! objective: cross-entropy on the classifier head plus a supervised
//! contrastive term on an L2-normalized projection head.
//!
//! Everything numeric is built on a small deterministic f64 engine with
//! hand-derived backward passes, so every gradient in the pipeline can be
//! verified against central finite differences (see [`tensor::gradcheck`]).
//!
//! Crate layout:
//!
//! - [`tensor`] — tensors, layer forward/backward kernels, He init,
//!   AMSGrad, finite-difference checking, checkpoint I/O.
//! - [`signal`] — WFDB/CSV record and annotation parsing, R-peak
//!   detection, RRI/RPE derivation, segmentation, augmentation, the
//!   prepared-dataset file, and synthetic data generation.
//! - [`model`] — extractors, cross attention, projection and classifier
//!   heads, architecture config.
//! - [`losses`] — cross-entropy, cosine similarity, supervised
//!   contrastive, hybrid combination.
//! - [`train`] — batching, the training loop, metrics, cross-validation
//!   folds, label-fraction subsetting, embedding export, experiment
//!   manifests.
//! - [`cli`] — the `concad` command-line interface.
//!
//! The `examples/` directory holds one runnable program per major
//! capability; start with `cargo run --release --example train_synthetic`.

pub mod cli;
pub mod error;
pub mod losses;
pub mod model;
pub mod rng;
pub mod selftest;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Mode, Parameter, Tensor};
