//! Device memory and simulated-time accounting.
//!
//! A single model's footprint is `unreleased + reserved + device_context` where
//!
//! * `unreleased = weights_grads + io_tensors + dataset_bytes`
//! * `weights_grads = 2 * params * 4` (weights plus one gradient each)
//! * `io_tensors = batch * 4 * (input size + sum of node output sizes)`
//! * `reserved = ephemeral * fragmentation`
//!
//! A hybrid keeps one model's working set resident at a time, so its
//! unreleased term is the maximum over sub-models while ephemeral and device
//! context are paid once. The concurrent baseline pays every term per model.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelGraph};
use crate::scheduler::SchedulePlan;

pub const MIB: u64 = 1 << 20;
const F32_BYTES: u64 = 4;

/// Calibration constants. None of these are measured; the defaults are
/// documented knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModelConfig {
    /// Library and workspace allocations made each time a model is loaded.
    pub ephemeral_bytes: u64,
    pub device_context_bytes: u64,
    /// Allocator slack applied to ephemeral allocations; at least 1.
    pub fragmentation: f64,
    /// Slices an offloaded sub-model's unreleased memory lingers for.
    pub release_lag: u32,
    pub epoch_cost: EpochCost,
    /// Simulated time to load libraries and context once.
    pub load_cost: f64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        Self {
            ephemeral_bytes: 900 * MIB,
            device_context_bytes: 300 * MIB,
            fragmentation: 1.1,
            release_lag: 0,
            epoch_cost: EpochCost::default(),
            load_cost: 5.0,
        }
    }
}

impl CostModelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ephemeral_bytes > 0
            && self.device_context_bytes > 0
            && self.fragmentation.is_finite()
            && self.fragmentation >= 1.0
            && self.load_cost.is_finite()
            && self.load_cost > 0.0
            && self.epoch_cost.per_param_sample.is_finite()
            && self.epoch_cost.per_param_sample > 0.0
            && self.epoch_cost.per_batch.is_finite()
            && self.epoch_cost.per_batch > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::format("cost model", "constants must be positive and fragmentation >= 1"))
        }
    }

    pub fn reserved_bytes(&self) -> u64 {
        (self.ephemeral_bytes as f64 * self.fragmentation).round() as u64
    }
}

/// Simulated time for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochCost {
    pub per_param_sample: f64,
    pub per_batch: f64,
}

impl Default for EpochCost {
    fn default() -> Self {
        Self {
            per_param_sample: 1e-9,
            per_batch: 1e-3,
        }
    }
}

impl EpochCost {
    pub fn cost(&self, params: u64, samples: u64, batch: u64) -> f64 {
        self.per_param_sample * params as f64 * samples as f64 + self.per_batch * samples.div_ceil(batch.max(1)) as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub weights_grads: u64,
    pub io_tensors: u64,
    pub dataset_bytes: u64,
    pub ephemeral: u64,
    pub resident_context: u64,
    pub unreleased: u64,
    pub reserved: u64,
    pub device_context: u64,
    pub total: u64,
}

impl MemoryEstimate {
    fn finish(mut self) -> Self {
        self.total = self.unreleased + self.reserved + self.device_context;
        self
    }
}

/// What the estimator needs to know about one job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub param_count: u64,
    /// Input elements plus every node's output elements, per sample.
    pub activation_elements: u64,
    pub batch_size: u64,
    pub dataset_bytes: u64,
}

impl ModelProfile {
    pub fn of(graph: &ModelGraph, hyper: &HyperParams, dataset_bytes: u64) -> Result<Self> {
        let shapes = graph.infer_shapes()?;
        let input: u64 = graph.input_shape.iter().product::<usize>() as u64;
        let nodes: u64 = shapes.iter().map(|s| s.iter().product::<usize>() as u64).sum();
        Ok(Self {
            param_count: graph.param_count(),
            activation_elements: input + nodes,
            batch_size: hyper.batch_size as u64,
            dataset_bytes,
        })
    }
}

pub fn estimate_profile(p: &ModelProfile, config: &CostModelConfig) -> MemoryEstimate {
    let weights_grads = 2 * p.param_count * F32_BYTES;
    let io_tensors = p.batch_size * F32_BYTES * p.activation_elements;
    MemoryEstimate {
        weights_grads,
        io_tensors,
        dataset_bytes: p.dataset_bytes,
        ephemeral: config.ephemeral_bytes,
        resident_context: config.device_context_bytes,
        unreleased: weights_grads + io_tensors + p.dataset_bytes,
        reserved: config.reserved_bytes(),
        device_context: config.device_context_bytes,
        total: 0,
    }
    .finish()
}

pub fn estimate_model(
    graph: &ModelGraph,
    hyper: &HyperParams,
    dataset_bytes: u64,
    config: &CostModelConfig,
) -> Result<MemoryEstimate> {
    Ok(estimate_profile(&ModelProfile::of(graph, hyper, dataset_bytes)?, config))
}

/// Largest unreleased term plus shared terms counted once. The breakdown
/// fields are those of the first sub-model attaining the maximum.
pub fn estimate_hybrid(estimates: &[MemoryEstimate]) -> Result<MemoryEstimate> {
    let peak = estimates
        .iter()
        .reduce(|best, e| if e.unreleased > best.unreleased { e } else { best })
        .ok_or(Error::Empty("no sub-model estimates"))?;
    let max = |f: fn(&MemoryEstimate) -> u64| estimates.iter().map(f).max().unwrap_or(0);
    Ok(MemoryEstimate {
        ephemeral: max(|e| e.ephemeral),
        resident_context: max(|e| e.resident_context),
        reserved: max(|e| e.reserved),
        device_context: max(|e| e.device_context),
        ..peak.clone()
    }
    .finish())
}

/// Every model resident at once, each with its own ephemeral and context.
pub fn baseline_concurrent(estimates: &[MemoryEstimate]) -> Result<MemoryEstimate> {
    if estimates.is_empty() {
        return Err(Error::Empty("no sub-model estimates"));
    }
    let sum = |f: fn(&MemoryEstimate) -> u64| estimates.iter().map(f).sum();
    Ok(MemoryEstimate {
        weights_grads: sum(|e| e.weights_grads),
        io_tensors: sum(|e| e.io_tensors),
        dataset_bytes: sum(|e| e.dataset_bytes),
        ephemeral: sum(|e| e.ephemeral),
        resident_context: sum(|e| e.resident_context),
        unreleased: sum(|e| e.unreleased),
        reserved: sum(|e| e.reserved),
        device_context: sum(|e| e.device_context),
        total: 0,
    }
    .finish())
}

/// `(baseline - unified) / baseline` as a percentage.
pub fn reduction_percent(unified: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        return 0.0;
    }
    (baseline as f64 - unified as f64) / baseline as f64 * 100.0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePoint {
    pub slice: usize,
    pub job_id: String,
    pub epoch: u32,
    pub occupied: u64,
}

/// Occupancy per slice: the active sub-model's unreleased memory, the
/// unreleased memory of sub-models that ran within the last `release_lag`
/// slices, and the shared reserved and context terms.
pub fn trace_memory(
    plan: &SchedulePlan,
    estimates: &[(String, MemoryEstimate)],
    config: &CostModelConfig,
) -> Result<Vec<TracePoint>> {
    let lookup = |job: &str| {
        estimates
            .iter()
            .find(|(id, _)| id == job)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::UnknownJob(job.to_string()))
    };
    let shared = estimates
        .iter()
        .map(|(_, e)| e.reserved + e.device_context)
        .max()
        .unwrap_or(config.reserved_bytes() + config.device_context_bytes);
    let mut last_ran: Vec<(&str, usize)> = Vec::new();
    let mut points = Vec::with_capacity(plan.slices.len());
    for (i, slice) in plan.slices.iter().enumerate() {
        let active = lookup(&slice.job_id)?;
        let mut occupied = active.unreleased + shared;
        for &(job, at) in &last_ran {
            if job != slice.job_id && i - at <= config.release_lag as usize {
                occupied += lookup(job)?.unreleased;
            }
        }
        match last_ran.iter_mut().find(|(j, _)| *j == slice.job_id) {
            Some(entry) => entry.1 = i,
            None => last_ran.push((&slice.job_id, i)),
        }
        points.push(TracePoint {
            slice: i,
            job_id: slice.job_id.clone(),
            epoch: slice.epoch,
            occupied,
        });
    }
    Ok(points)
}

pub fn trace_csv(points: &[TracePoint]) -> String {
    let mut out = String::from("slice,job,epoch,occupied_bytes\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.slice, p.job_id, p.epoch, p.occupied).expect("writing to a String");
    }
    out
}

/// Per-job inputs to the simulated clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeProfile {
    pub param_count: u64,
    pub samples: u64,
    pub batch_size: u64,
    pub epochs: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTime {
    pub unified: f64,
    pub baseline: f64,
}

/// Both runs do the same epochs; the baseline loads libraries and context
/// once per model, the hybrid once in total.
pub fn simulated_time(jobs: &[TimeProfile], config: &CostModelConfig) -> SimulatedTime {
    let work: f64 = jobs
        .iter()
        .map(|j| j.epochs as f64 * config.epoch_cost.cost(j.param_count, j.samples, j.batch_size))
        .sum();
    let loads = if jobs.is_empty() { 0.0 } else { config.load_cost };
    SimulatedTime {
        unified: loads + work,
        baseline: jobs.len() as f64 * config.load_cost + work,
    }
}
