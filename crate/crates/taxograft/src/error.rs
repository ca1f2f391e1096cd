//! Error type shared across the pipeline.
//!
//! Every variant maps to a stable category token so the CLI can print
//! `error[Category]: message` for scripting.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate concept at line {line}: {surface:?} already present after normalization")]
    DuplicateConcept { line: usize, surface: String },

    #[error("empty concept at line {line}: surface normalizes to the empty string")]
    EmptyConcept { line: usize },

    #[error("cycle detected: {}", format_path(.path))]
    CycleDetected { path: Vec<String> },

    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("non-positive count at line {line}: {value}")]
    NonPositiveCount { line: usize, value: i64 },

    #[error("dimension mismatch at line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("malformed embedding header: {message}")]
    MalformedHeader { message: String },

    #[error("shape mismatch in {op}: {message}")]
    ShapeMismatch { op: String, message: String },

    #[error("unknown concept: {surface:?}")]
    UnknownConcept { surface: String },

    #[error("unknown node id {id}")]
    UnknownNode { id: usize },

    #[error("missing embedding for concept {surface:?}")]
    MissingEmbedding { surface: String },

    #[error("corpus has no sentence containing a vocabulary concept")]
    EmptyCorpus,

    #[error("taxonomy has no edges, cannot build positives")]
    EmptyPositives,

    #[error("train split is empty")]
    EmptyTrainSet,

    #[error("gold edge set is empty")]
    EmptyGold,

    #[error("node {id} has no neighbors, cannot compute contrastive loss")]
    IsolatedNode { id: usize },

    #[error("loss is not finite: {value}")]
    NonFiniteLoss { value: f64 },

    #[error("prediction and gold pair universes differ: {message}")]
    UniverseMismatch { message: String },

    #[error("invalid synthetic benchmark spec: {message}")]
    SpecInvalid { message: String },

    #[error("invalid config: {message}")]
    ConfigInvalid { message: String },

    #[error("missing artifact for stage {stage}: {path}")]
    MissingArtifact { stage: String, path: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable token printed first by the CLI error handler.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::DuplicateConcept { .. } => "DuplicateConcept",
            Error::EmptyConcept { .. } => "EmptyConcept",
            Error::CycleDetected { .. } => "CycleDetected",
            Error::MalformedLine { .. } => "MalformedLine",
            Error::NonPositiveCount { .. } => "NonPositiveCount",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MalformedHeader { .. } => "MalformedHeader",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::UnknownConcept { .. } => "UnknownConcept",
            Error::UnknownNode { .. } => "UnknownNode",
            Error::MissingEmbedding { .. } => "MissingEmbedding",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::EmptyPositives => "EmptyPositives",
            Error::EmptyTrainSet => "EmptyTrainSet",
            Error::EmptyGold => "EmptyGold",
            Error::IsolatedNode { .. } => "IsolatedNode",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::UniverseMismatch { .. } => "UniverseMismatch",
            Error::SpecInvalid { .. } => "SpecInvalid",
            Error::ConfigInvalid { .. } => "ConfigInvalid",
            Error::MissingArtifact { .. } => "MissingArtifact",
        }
    }
}

fn format_path(path: &[String]) -> String {
    path.join(" -> ")
}
