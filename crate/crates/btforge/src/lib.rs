//! btforge: a back-translation experimentation toolkit.
//!
//! The crate trains miniature LSTM encoder-decoder translation models with
//! attention, entirely on CPU, and uses them to compare data strategies for
//! leveraging monolingual text: plain back-translation, tagged back-translation,
//! and pre-train-on-synthetic / fine-tune-on-authentic schedules with either a
//! jointly learned subword inventory or one rebuilt between phases.
//!
//! Module map:
//! - [`corpus`]: parallel/monolingual corpora, toy language generation, mixing.
//! - [`subword`]: byte-pair encoding and vocabulary construction.
//! - [`autodiff`]: the reverse-mode tape the training loss is built on.
//! - [`model`]: the encoder-decoder itself (forward ops and exact gradients).
//! - [`trainer`]: Adam loop, early stopping, checkpoint I/O and averaging.
//! - [`decoder`]: greedy/beam translation and bulk back-translation.
//! - [`evaluator`]: corpus BLEU and paired bootstrap significance.
//! - [`pipeline`]: end-to-end experiment runner over the strategy set.
//!
//! Core math is generic over [`scalar::Scalar`] (f32 or f64). The aliases
//! below fix the shipped precision: all file formats and published numbers use
//! f64.

pub mod autodiff;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod subword;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision used by every shipped entry point and file format.
pub type Real = f64;

/// Model parameters at the default precision.
pub type Params = model::ModelParameters<Real>;

/// Checkpoint at the default precision.
pub type Ckpt = trainer::Checkpoint<Real>;
