use serde::{Deserialize, Serialize};

use super::{HyperParams, ModelGraph, NAMESPACE_SEP};
use crate::autograd::{Criterion, ParamStore};
use crate::dataset::DatasetHash;
use crate::error::{Error, Result};

/// A queued training request.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingJob {
    pub job_id: String,
    pub model: ModelGraph,
    pub initial_params: ParamStore,
    pub dataset: DatasetHash,
    pub hyper: HyperParams,
    /// Lower runs first.
    pub priority: i64,
    pub arrival_seq: u64,
    pub criterion: Criterion,
}

impl TrainingJob {
    /// Validates the id, graph and hyper-parameters and seeds the initial
    /// parameters from `hyper.seed`. Priority defaults to the arrival sequence.
    pub fn new(
        job_id: impl Into<String>,
        model: ModelGraph,
        dataset: DatasetHash,
        hyper: HyperParams,
        arrival_seq: u64,
    ) -> Result<Self> {
        let job_id = job_id.into();
        validate_job_id(&job_id)?;
        let checked = || -> Result<ParamStore> {
            model.check()?;
            hyper.validate()?;
            Ok(model.init_params(hyper.seed))
        };
        let initial_params = checked().map_err(|e| e.in_job(&job_id))?;
        Ok(Self {
            job_id,
            model,
            initial_params,
            dataset,
            hyper,
            priority: arrival_seq as i64,
            arrival_seq,
            criterion: Criterion::SoftmaxCrossEntropy,
        })
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.priority = priority;
        self
    }

    /// Replaces the seeded initialization, e.g. with parameters read from a model file.
    pub fn with_initial_params(mut self, params: ParamStore) -> Result<Self> {
        self.model.check_params(&params).map_err(|e| e.in_job(&self.job_id))?;
        self.initial_params = params;
        Ok(self)
    }
}

/// Job ids become file names and namespace prefixes.
pub fn validate_job_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && !id.starts_with("__")
        && !id.contains(NAMESPACE_SEP)
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidJobId(id.to_string()))
    }
}

/// Queue-level view of a job, persisted by the service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub dataset: DatasetHash,
    pub priority: i64,
    pub arrival_seq: u64,
    pub epochs: u32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OpKind, OptimizerChoice};

    fn graph() -> ModelGraph {
        ModelGraph::sequential(
            "m",
            vec![3],
            vec![(
                "fc",
                OpKind::Dense {
                    in_features: 3,
                    out_features: 2,
                },
            )],
        )
    }

    #[test]
    fn priority_defaults_to_arrival() {
        let h = HyperParams::new(2, 4, 0.1, OptimizerChoice::Sgd);
        let job = TrainingJob::new("a", graph(), DatasetHash::of(b"x"), h, 7).unwrap();
        assert_eq!(job.priority, 7);
        assert_eq!(job.initial_params, graph().init_params(0));
    }

    #[test]
    fn job_ids() {
        for ok in ["job1", "user-2.lenet", "a_b"] {
            assert!(validate_job_id(ok).is_ok(), "{ok}");
        }
        for bad in ["", "a/b", "..", "__global_input__", "sp ace", ".hidden"] {
            assert!(validate_job_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn invalid_graph_names_job() {
        let mut g = graph();
        g.output = "nope".into();
        let h = HyperParams::new(2, 4, 0.1, OptimizerChoice::Sgd);
        let err = TrainingJob::new("j9", g, DatasetHash::of(b"x"), h, 0).unwrap_err();
        assert!(matches!(err, Error::Job { job, .. } if job == "j9"));
    }
}
