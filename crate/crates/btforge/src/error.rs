//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. The CLI prints errors as
//! `ERROR <stage>: <message>`; [`Error::stage`] supplies the stage keyword.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("line count mismatch: {src_path} has {src_lines} lines, {tgt_path} has {tgt_lines}")]
    Misaligned {
        src_path: PathBuf,
        tgt_path: PathBuf,
        src_lines: usize,
        tgt_lines: usize,
    },

    #[error("toy generation failed: {0}")]
    ToyGeneration(String),

    #[error("mix ratio {authentic}:{synthetic} needs {needed} synthetic pairs, only {available} available")]
    RatioUnsatisfiable {
        authentic: u32,
        synthetic: u32,
        needed: usize,
        available: usize,
    },

    #[error("cannot sample {requested} items from {available} without replacement")]
    SampleSize { requested: usize, available: usize },

    #[error("subword: {0}")]
    Subword(String),

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("vocabulary drift: fine-tuning in joint mode requires the pre-training vocabulary; {0}")]
    VocabularyDrift(String),

    #[error("model: {0}")]
    Model(String),

    #[error("non-finite loss at step {step} (batch {batch}): {detail}")]
    Numeric {
        step: u64,
        batch: usize,
        detail: String,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("experiment: {0}")]
    Experiment(String),
}

impl Error {
    /// Stage keyword for the CLI error line.
    pub fn stage(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. }
            | Error::Misaligned { .. }
            | Error::ToyGeneration(_)
            | Error::RatioUnsatisfiable { .. }
            | Error::SampleSize { .. } => "corpus",
            Error::Subword(_) => "bpe",
            Error::Vocabulary(_) => "vocab",
            Error::VocabularyDrift(_) | Error::Numeric { .. } => "train",
            Error::Model(_) => "model",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Config(_) => "config",
            Error::Evaluation(_) => "eval",
            Error::Experiment(_) => "experiment",
        }
    }

    /// Wraps an I/O error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
