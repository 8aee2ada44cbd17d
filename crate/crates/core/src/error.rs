use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no pairs survived filtering with margin_floor = {margin_floor}")]
    NoPairsRetained { margin_floor: f64 },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("model does not fit dataset: {0}")]
    ShapeMismatch(String),

    #[error("operation requires the {expected} backend")]
    WrongBackend { expected: &'static str },

    #[error("likelihood {value} at index {index} is outside (0, 1)")]
    LikelihoodDomain { index: usize, value: f64 },

    #[error("non-finite {what} at sample {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("non-finite loss during training ({variant}) at epoch {epoch}, batch {batch}")]
    TrainingDiverged {
        variant: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("loss increased at epoch {epoch} ({previous} -> {current})")]
    DescentViolation {
        epoch: usize,
        previous: f64,
        current: f64,
    },

    #[error("dataset carries no ground-truth flip labels")]
    MissingGroundTruth,

    #[error("dataset carries no true reward parameters")]
    MissingTrueTheta,

    #[error("{0} is the zero vector")]
    ZeroVector(&'static str),

    #[error("report covers {report} pairs but dataset has {data}")]
    ReportMismatch { report: usize, data: usize },

    #[error("cell ({variant}, eps = {epsilon}, seed = {seed}): {source}")]
    Cell {
        variant: String,
        epsilon: f64,
        seed: u64,
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics themselves (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::TrainingDiverged { .. }
            | Error::DescentViolation { .. } => true,
            Error::Cell { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
