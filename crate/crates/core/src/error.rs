use std::fmt;

use crate::model::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classes of failure, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Parse,
    Validation,
    Admission,
    Training,
    Usage,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Parse => 2,
            ErrorCategory::Validation => 3,
            ErrorCategory::Admission => 4,
            ErrorCategory::Training => 5,
            ErrorCategory::Io => 6,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node `{node}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        node: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("backward called without a loss or output gradient")]
    NoLoss,
    #[error("parameters were updated after the last forward pass")]
    StaleForward,
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("gradient supplied for unknown parameter `{0}`")]
    UnknownGradient(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),
    #[error("parameter `{id}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        id: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid token id {value} at node `{node}` (vocabulary {vocab})")]
    InvalidToken { node: String, value: f32, vocab: usize },
    #[error("invalid class target {value} (classes {classes})")]
    InvalidTarget { value: f32, classes: usize },
    #[error("invalid graph `{name}`: {}", DiagnosticList(.diagnostics))]
    InvalidGraph {
        name: String,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),
    #[error("invalid job id `{0}`")]
    InvalidJobId(String),
    #[error("job `{job}`: {source}")]
    Job {
        job: String,
        #[source]
        source: Box<Error>,
    },
    #[error("no jobs to merge")]
    EmptyJobList,
    #[error("duplicate job id `{0}`")]
    DuplicateJob(String),
    #[error("duplicate arrival sequence {0}")]
    DuplicateArrival(u64),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` is not in a state that allows this operation")]
    JobState(String),
    #[error("namespace mapping corrupted: {0}")]
    NamespaceCorruption(String),
    #[error("plan does not match the hybrid: {0}")]
    PlanMismatch(String),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("batch size {batch} exceeds sample count {samples}")]
    BatchTooLarge { batch: usize, samples: usize },
    #[error("checkpoint does not match sub-model: {0}")]
    CheckpointMismatch(String),
    #[error("hybrid needs {estimate} bytes but device capacity is {capacity} bytes")]
    Admission { estimate: u64, capacity: u64 },
    #[error("nothing to do: {0}")]
    Empty(&'static str),
    #[error("{file}: {source}")]
    File {
        file: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_job(self, job: &str) -> Self {
        Error::Job {
            job: job.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_file(self, file: impl fmt::Display) -> Self {
        Error::File {
            file: file.to_string(),
            source: Box::new(self),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Format { .. } | Error::Json(_) => ErrorCategory::Parse,
            Error::InvalidGraph { .. }
            | Error::InvalidHyperParams(_)
            | Error::InvalidJobId(_)
            | Error::DuplicateJob(_)
            | Error::DuplicateArrival(_)
            | Error::ParameterShape { .. }
            | Error::MissingParameter(_)
            | Error::UnexpectedParameter(_)
            | Error::CheckpointMismatch(_) => ErrorCategory::Validation,
            Error::Admission { .. } => ErrorCategory::Admission,
            Error::ShapeMismatch { .. }
            | Error::BackwardBeforeForward
            | Error::NoLoss
            | Error::StaleForward
            | Error::MissingGradient(_)
            | Error::UnknownGradient(_)
            | Error::InvalidToken { .. }
            | Error::InvalidTarget { .. }
            | Error::BatchTooLarge { .. }
            | Error::UnknownDataset(_)
            | Error::PlanMismatch(_)
            | Error::NamespaceCorruption(_) => ErrorCategory::Training,
            Error::EmptyJobList | Error::UnknownJob(_) | Error::JobState(_) | Error::Empty(_) => {
                ErrorCategory::Usage
            }
            Error::Io(_) => ErrorCategory::Io,
            Error::Job { source, .. } | Error::File { source, .. } => source.category(),
        }
    }
}

struct DiagnosticList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagnosticList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}
