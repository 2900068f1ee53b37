//! Merging submitted jobs into one hybrid model.

use std::collections::BTreeSet;

use crate::autograd::{Criterion, Executor, OptimizerState, ParamStore};
use crate::dataset::DatasetHash;
use crate::error::{Error, Result};
use crate::memory::{self, CostModelConfig, MemoryEstimate};
use crate::model::{strip_prefix, HyperParams, ModelGraph, TrainingJob, INPUT, NAMESPACE_SEP};
use crate::tensor::Tensor;

pub const GLOBAL_INPUT: &str = "__global_input__";
pub const GLOBAL_OUTPUT: &str = "__global_output__";

/// One job's model inside the hybrid. Node and parameter ids carry the
/// `job_id/` prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    pub job_id: String,
    pub graph: ModelGraph,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    pub criterion: Criterion,
    pub completed_epochs: u32,
    pub hyper: HyperParams,
    pub dataset: DatasetHash,
    pub priority: i64,
    pub arrival_seq: u64,
}

impl SubModel {
    fn from_job(job: &TrainingJob) -> Result<Self> {
        let prefix = &job.job_id;
        let ns = |id: &str| Ok(format!("{prefix}{NAMESPACE_SEP}{id}"));
        Ok(Self {
            job_id: job.job_id.clone(),
            graph: job.model.namespaced(prefix),
            params: job.initial_params.map_ids(ns)?,
            optimizer: job.hyper.optimizer_state(),
            criterion: job.criterion,
            completed_epochs: 0,
            hyper: job.hyper.clone(),
            dataset: job.dataset.clone(),
            priority: job.priority,
            arrival_seq: job.arrival_seq,
        })
    }

    /// The submitted graph, recovered by stripping the namespace.
    pub fn local_graph(&self) -> Result<ModelGraph> {
        self.graph.strip_namespace(&self.job_id)
    }

    pub fn local_params(&self) -> Result<ParamStore> {
        self.params.map_ids(|id| strip_prefix(&self.job_id, id))
    }

    pub fn local_optimizer(&self) -> Result<OptimizerState> {
        self.optimizer.map_ids(|id| strip_prefix(&self.job_id, id))
    }

    pub fn is_complete(&self) -> bool {
        self.completed_epochs >= self.hyper.epochs
    }

    pub fn param_count(&self) -> u64 {
        self.graph.param_count()
    }

    /// Executor over the namespaced graph, reading namespaced parameters.
    pub fn executor(&self) -> Result<Executor> {
        self.local_graph()?.check()?;
        Ok(Executor::from_checked(&self.graph))
    }
}

/// All sub-models plus the two routing nodes. Sub-graphs share no nodes,
/// parameters or edges.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    sub_models: Vec<SubModel>,
}

impl HybridModel {
    /// One sub-model per job, in list order. Each job is re-validated and
    /// failures are reported with the job id.
    pub fn merge(jobs: &[TrainingJob]) -> Result<Self> {
        if jobs.is_empty() {
            return Err(Error::EmptyJobList);
        }
        let mut ids = BTreeSet::new();
        let mut arrivals = BTreeSet::new();
        let mut sub_models = Vec::with_capacity(jobs.len());
        for job in jobs {
            if !ids.insert(job.job_id.as_str()) {
                return Err(Error::DuplicateJob(job.job_id.clone()));
            }
            if !arrivals.insert(job.arrival_seq) {
                return Err(Error::DuplicateArrival(job.arrival_seq));
            }
            let checked = || -> Result<SubModel> {
                job.model.check()?;
                job.hyper.validate()?;
                job.model.check_params(&job.initial_params)?;
                SubModel::from_job(job)
            };
            sub_models.push(checked().map_err(|e| e.in_job(&job.job_id))?);
        }
        Ok(Self { sub_models })
    }

    pub fn sub_models(&self) -> &[SubModel] {
        &self.sub_models
    }

    pub fn job_ids(&self) -> impl Iterator<Item = &str> {
        self.sub_models.iter().map(|s| s.job_id.as_str())
    }

    pub fn index_of(&self, job_id: &str) -> Result<usize> {
        self.sub_models
            .iter()
            .position(|s| s.job_id == job_id)
            .ok_or_else(|| Error::UnknownJob(job_id.to_string()))
    }

    pub fn sub_model(&self, job_id: &str) -> Result<&SubModel> {
        Ok(&self.sub_models[self.index_of(job_id)?])
    }

    pub fn sub_model_mut(&mut self, job_id: &str) -> Result<&mut SubModel> {
        let i = self.index_of(job_id)?;
        Ok(&mut self.sub_models[i])
    }

    /// Routing nodes plus every namespaced sub-model node.
    pub fn node_ids(&self) -> Vec<String> {
        let mut ids = vec![GLOBAL_INPUT.to_string()];
        for s in &self.sub_models {
            ids.extend(s.graph.nodes.iter().map(|n| n.id.clone()));
        }
        ids.push(GLOBAL_OUTPUT.to_string());
        ids
    }

    /// Directed edges. Sub-model nodes reading `input` hang off the global
    /// input; each sub-model output feeds the global output.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut edges = Vec::new();
        for s in &self.sub_models {
            for n in &s.graph.nodes {
                for i in &n.inputs {
                    let from = if i == INPUT { GLOBAL_INPUT } else { i.as_str() };
                    edges.push((from.to_string(), n.id.clone()));
                }
            }
            edges.push((s.graph.output.clone(), GLOBAL_OUTPUT.to_string()));
        }
        edges
    }

    /// Forward pass of one sub-model on a batch tagged for it.
    pub fn route(&self, job_id: &str, batch: &Tensor) -> Result<Tensor> {
        let sub = self.sub_model(job_id)?;
        let mut ex = sub.executor()?;
        Ok(ex.forward(&sub.params, batch)?.clone())
    }

    /// Unified memory estimate for this hybrid; `dataset_bytes` maps each dataset to its size.
    pub fn estimate_memory(
        &self,
        dataset_bytes: impl Fn(&DatasetHash) -> Result<u64>,
        config: &CostModelConfig,
    ) -> Result<MemoryEstimate> {
        let estimates = self
            .sub_models
            .iter()
            .map(|s| {
                let bytes = dataset_bytes(&s.dataset).map_err(|e| e.in_job(&s.job_id))?;
                memory::estimate_model(&s.local_graph()?, &s.hyper, bytes, config)
            })
            .collect::<Result<Vec<_>>>()?;
        memory::estimate_hybrid(&estimates)
    }
}
