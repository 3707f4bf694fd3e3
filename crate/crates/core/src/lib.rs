//! Masked acoustic pre-training with a cross-contrastive objective and
//! cluster-scaled negatives, at a scale that trains on a laptop CPU.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense tensors and a reverse-mode graph with hand-written
//!   backward rules and a finite-difference checker.
//! - [`audio_io`]: WAV I/O, padded batches, metrics and checkpoint files.
//! - [`augment`]: crop-to-zero and noise/reverb augmentation recipes.
//! - [`model`]: convolutional feature encoder, span masking, product
//!   quantizer and transformer context network.
//! - [`clustering`]: per-utterance cosine k-means over quantized targets.
//! - [`loss`]: contrastive, cross-contrastive and diversity objectives.
//! - [`trainer`]: the pre-training loop, gradient checks and linear probe.
//! - [`repro`]: ablation-grid runner.

// negated comparisons also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio_io;
pub mod augment;
pub mod autodiff;
pub mod clustering;
pub mod error;
pub mod exec;
pub mod loss;
pub mod model;
pub mod repro;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
