//! Model definitions, hyper-parameters, jobs and the model file format.

pub mod format;
mod graph;
mod hyper;
mod job;

pub use format::{ModelFile, ModelHeader};
pub(crate) use graph::strip_prefix;
pub use graph::{param_id, Diagnostic, DiagnosticKind, ModelGraph, OpKind, OpNode, ParamSpec, INPUT, NAMESPACE_SEP};
pub use hyper::{HyperParams, OptimizerChoice, DEFAULT_LR_GAMMA};
pub use job::{validate_job_id, JobRecord, TrainingJob};
