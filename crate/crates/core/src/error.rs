use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("every position is masked")]
    AllMasked,

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("cannot build a vocabulary from an empty training set")]
    EmptyTrainingSet,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("confusion matrix has no samples")]
    EmptyMatrix,

    #[error("class {class} has no {missing} samples; ROC is undefined")]
    SingleClassLabels { class: usize, missing: &'static str },

    #[error("bad magic: not a checkpoint file")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
