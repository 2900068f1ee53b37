//! Executes a schedule over a hybrid model.

mod checkpoint;

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, DataCursor};

use crate::autograd::{evaluate, train_step, Executor, ParamStore};
use crate::dataset::{Dataset, DatasetStore};
use crate::error::{Error, Result};
use crate::scheduler::{plan, JobSummary, Policy, SchedulePlan, Slice};
use crate::unifier::HybridModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Training,
    Paused,
    Complete,
    Aborted,
}

/// Sent when a job's last slice finishes. The snapshot is a deep copy of the
/// whole hybrid at that moment.
#[derive(Clone, Debug)]
pub struct CompletionEvent {
    pub job_id: String,
    pub slice_index: usize,
    pub snapshot: HybridModel,
}

/// Receiver of completion events.
pub trait CompletionSink {
    fn deliver(&mut self, event: CompletionEvent) -> Result<()>;
}

impl CompletionSink for Sender<CompletionEvent> {
    fn deliver(&mut self, event: CompletionEvent) -> Result<()> {
        // A dropped receiver only means nobody is listening.
        let _ = self.send(event);
        Ok(())
    }
}

/// Called after every applied optimizer update.
pub trait StepObserver {
    fn after_step(&mut self, job_id: &str, epoch: u32, batch: usize, params: &ParamStore);
}

impl<F: FnMut(&str, u32, usize, &ParamStore)> StepObserver for F {
    fn after_step(&mut self, job_id: &str, epoch: u32, batch: usize, params: &ParamStore) {
        self(job_id, epoch, batch, params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutedSlice {
    pub index: usize,
    pub job_id: String,
    pub epoch: u32,
    pub batches: usize,
    /// Sample-weighted mean; `None` when the loss went non-finite.
    pub train_loss: Option<f64>,
    pub train_accuracy: f64,
    pub completed_job: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub job_id: String,
    pub status: JobStatus,
    pub epochs: u32,
    pub completed_epochs: u32,
    pub slices_executed: u32,
    pub completion_index: Option<usize>,
    pub final_train_loss: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub abort_reason: Option<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub policy: Policy,
    pub jobs: Vec<JobReport>,
    pub slices: Vec<ExecutedSlice>,
    /// Path of the memory trace, relative to the run directory.
    pub memory_trace: Option<String>,
}

impl TrainReport {
    pub fn job(&self, job_id: &str) -> Option<&JobReport> {
        self.jobs.iter().find(|j| j.job_id == job_id)
    }

    /// Jobs in the order they completed.
    pub fn completion_order(&self) -> Vec<&str> {
        let mut done: Vec<_> = self.jobs.iter().filter_map(|j| Some((j.completion_index?, j.job_id.as_str()))).collect();
        done.sort();
        done.into_iter().map(|(_, id)| id).collect()
    }
}

/// Scheduling view of every unfinished sub-model.
pub fn job_summaries(hybrid: &HybridModel) -> Vec<JobSummary> {
    hybrid
        .sub_models()
        .iter()
        .filter(|s| !s.is_complete())
        .map(|s| JobSummary {
            job_id: s.job_id.clone(),
            priority: s.priority,
            arrival_seq: s.arrival_seq,
            epochs: s.hyper.epochs,
            param_count: s.param_count(),
            completed_epochs: s.completed_epochs,
        })
        .collect()
}

/// Single-threaded slice executor.
pub struct Trainer {
    hybrid: HybridModel,
    policy: Policy,
    plan: VecDeque<Slice>,
    datasets: BTreeMap<String, Arc<Dataset>>,
    executors: BTreeMap<String, Executor>,
    reports: BTreeMap<String, JobReport>,
    executed: Vec<ExecutedSlice>,
    sink: Option<Box<dyn CompletionSink + Send>>,
    observer: Option<Box<dyn StepObserver>>,
}

impl Trainer {
    /// Resolves every job's dataset and checks `plan` against the hybrid.
    pub fn new(hybrid: HybridModel, plan: SchedulePlan, store: &DatasetStore) -> Result<Self> {
        plan.validate(&job_summaries(&hybrid))?;
        let mut datasets = BTreeMap::new();
        let mut executors = BTreeMap::new();
        let mut reports = BTreeMap::new();
        for sub in hybrid.sub_models() {
            let id = &sub.job_id;
            let ds = store.get(&sub.dataset).map_err(|e| e.in_job(id))?;
            if sub.hyper.batch_size > ds.train_samples() {
                return Err(Error::BatchTooLarge {
                    batch: sub.hyper.batch_size,
                    samples: ds.train_samples(),
                }
                .in_job(id));
            }
            if ds.sample_shape() != sub.graph.input_shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    node: crate::unifier::GLOBAL_INPUT.to_string(),
                    expected: sub.graph.input_shape.clone(),
                    found: ds.sample_shape().to_vec(),
                }
                .in_job(id));
            }
            datasets.insert(id.clone(), ds);
            executors.insert(id.clone(), sub.executor().map_err(|e| e.in_job(id))?);
            reports.insert(
                id.clone(),
                JobReport {
                    job_id: id.clone(),
                    status: if sub.is_complete() { JobStatus::Complete } else { JobStatus::Pending },
                    epochs: sub.hyper.epochs,
                    completed_epochs: sub.completed_epochs,
                    slices_executed: 0,
                    completion_index: None,
                    final_train_loss: None,
                    final_train_accuracy: None,
                    test_loss: None,
                    test_accuracy: None,
                    abort_reason: None,
                    wall_time: Duration::ZERO,
                },
            );
        }
        Ok(Self {
            hybrid,
            policy: plan.policy,
            plan: plan.slices.into(),
            datasets,
            executors,
            reports,
            executed: Vec::new(),
            sink: None,
            observer: None,
        })
    }

    /// Plans with `policy` and builds the trainer.
    pub fn with_policy(hybrid: HybridModel, policy: Policy, store: &DatasetStore) -> Result<Self> {
        let p = plan(policy, &job_summaries(&hybrid))?;
        Self::new(hybrid, p, store)
    }

    pub fn with_sink(mut self, sink: impl CompletionSink + Send + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    pub fn with_observer(mut self, observer: impl StepObserver + 'static) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    pub fn hybrid(&self) -> &HybridModel {
        &self.hybrid
    }

    pub fn into_hybrid(self) -> HybridModel {
        self.hybrid
    }

    pub fn remaining(&self) -> impl Iterator<Item = &Slice> {
        self.plan.iter()
    }

    pub fn status(&self, job_id: &str) -> Result<JobStatus> {
        self.reports
            .get(job_id)
            .map(|r| r.status)
            .ok_or_else(|| Error::UnknownJob(job_id.to_string()))
    }

    pub fn executed(&self) -> &[ExecutedSlice] {
        &self.executed
    }

    /// Runs the next slice; `None` once the plan is exhausted.
    pub fn step(&mut self) -> Result<Option<&ExecutedSlice>> {
        let Some(slice) = self.plan.pop_front() else {
            return Ok(None);
        };
        let started = Instant::now();
        let index = self.executed.len();
        let job = slice.job_id.clone();
        let outcome = self.run_epoch(&slice).map_err(|e| e.in_job(&job))?;
        let report = self.reports.get_mut(&job).expect("plan validated against hybrid");
        report.slices_executed += 1;
        report.wall_time += started.elapsed();

        let sub = self.hybrid.sub_model(&job)?;
        let completed_job = outcome.loss.is_some() && sub.is_complete();
        match outcome.loss {
            None => {
                report.status = JobStatus::Aborted;
                report.abort_reason = Some(format!("non-finite loss in slice {index} (epoch {})", slice.epoch));
                self.plan.retain(|s| s.job_id != job);
            }
            Some(loss) => {
                report.completed_epochs = sub.completed_epochs;
                report.final_train_loss = Some(loss);
                report.final_train_accuracy = Some(outcome.accuracy);
                report.status = if completed_job { JobStatus::Complete } else { JobStatus::Training };
            }
        }
        if completed_job {
            let (test_loss, test_accuracy) = self.evaluate_test(&job)?;
            let report = self.reports.get_mut(&job).expect("present");
            report.completion_index = Some(index);
            report.test_loss = test_loss;
            report.test_accuracy = Some(test_accuracy);
        }
        self.executed.push(ExecutedSlice {
            index,
            job_id: job.clone(),
            epoch: slice.epoch,
            batches: outcome.batches,
            train_loss: outcome.loss,
            train_accuracy: outcome.accuracy,
            completed_job,
        });
        if completed_job {
            if let Some(sink) = self.sink.as_mut() {
                sink.deliver(CompletionEvent {
                    job_id: job,
                    slice_index: index,
                    snapshot: self.hybrid.clone(),
                })?;
            }
        }
        Ok(self.executed.last())
    }

    fn run_epoch(&mut self, slice: &Slice) -> Result<EpochOutcome> {
        let dataset = Arc::clone(&self.datasets[&slice.job_id]);
        let executor = self.executors.get_mut(&slice.job_id).expect("built for every job");
        let sub = self.hybrid.sub_model_mut(&slice.job_id)?;
        if slice.epoch != sub.completed_epochs {
            return Err(Error::PlanMismatch(format!(
                "slice for epoch {} but {} epochs are complete",
                slice.epoch, sub.completed_epochs
            )));
        }
        sub.optimizer.set_epoch(slice.epoch);
        let batches = dataset.batches(sub.hyper.batch_size, slice.epoch, sub.hyper.seed)?;
        let (mut loss_sum, mut correct, mut samples) = (0.0f64, 0usize, 0usize);
        for b in &batches {
            let out = train_step(
                executor,
                &mut sub.params,
                &mut sub.optimizer,
                sub.criterion,
                &b.inputs,
                &b.targets,
            )?;
            if !out.loss.is_finite() {
                return Ok(EpochOutcome {
                    batches: b.index + 1,
                    loss: None,
                    accuracy: 0.0,
                });
            }
            loss_sum += out.loss as f64 * out.samples as f64;
            correct += out.correct;
            samples += out.samples;
            if let Some(obs) = self.observer.as_mut() {
                obs.after_step(&slice.job_id, slice.epoch, b.index, &sub.params);
            }
        }
        sub.completed_epochs += 1;
        Ok(EpochOutcome {
            batches: batches.len(),
            loss: Some(loss_sum / samples as f64),
            accuracy: correct as f64 / samples as f64,
        })
    }

    fn evaluate_test(&mut self, job: &str) -> Result<(Option<f64>, f64)> {
        let dataset = Arc::clone(&self.datasets[job]);
        let executor = self.executors.get_mut(job).expect("built for every job");
        let sub = self.hybrid.sub_model(job)?;
        let (mut loss_sum, mut correct, mut samples) = (0.0f64, 0usize, 0usize);
        for b in dataset.test_batches(sub.hyper.batch_size) {
            let out = evaluate(executor, &sub.params, sub.criterion, &b.inputs, &b.targets).map_err(|e| e.in_job(job))?;
            loss_sum += out.loss as f64 * out.samples as f64;
            correct += out.correct;
            samples += out.samples;
        }
        let loss = loss_sum / samples as f64;
        Ok((loss.is_finite().then_some(loss), correct as f64 / samples as f64))
    }

    /// Runs every remaining slice and returns the report.
    pub fn run(&mut self) -> Result<TrainReport> {
        while self.step()?.is_some() {}
        Ok(self.report())
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            policy: self.policy,
            jobs: self
                .hybrid
                .job_ids()
                .map(|id| self.reports[id].clone())
                .collect(),
            slices: self.executed.clone(),
            memory_trace: None,
        }
    }

    /// Removes the job's remaining slices and returns its state.
    pub fn pause(&mut self, job_id: &str) -> Result<Checkpoint> {
        match self.status(job_id)? {
            JobStatus::Pending | JobStatus::Training => {}
            other => return Err(Error::JobState(format!("cannot pause `{job_id}`: it is {other:?}"))),
        }
        let checkpoint = checkpoint_of(&self.hybrid, job_id)?;
        self.plan.retain(|s| s.job_id != job_id);
        self.reports.get_mut(job_id).expect("present").status = JobStatus::Paused;
        Ok(checkpoint)
    }

    /// Restores a paused job and re-plans every unfinished job under the
    /// trainer's policy.
    pub fn resume(&mut self, checkpoint: &Checkpoint) -> Result<&VecDeque<Slice>> {
        let job_id = checkpoint.job_id.as_str();
        if self.status(job_id)? != JobStatus::Paused {
            return Err(Error::JobState(format!("cannot resume `{job_id}`: it is not paused")));
        }
        restore(&mut self.hybrid, checkpoint)?;
        let summaries: Vec<_> = job_summaries(&self.hybrid)
            .into_iter()
            .filter(|s| {
                matches!(
                    self.reports[&s.job_id].status,
                    JobStatus::Pending | JobStatus::Training | JobStatus::Paused
                )
            })
            .collect();
        let report = self.reports.get_mut(job_id).expect("present");
        report.status = JobStatus::Training;
        report.completed_epochs = checkpoint.completed_epochs;
        self.plan = if summaries.is_empty() {
            VecDeque::new()
        } else {
            plan(self.policy, &summaries)?.slices.into()
        };
        Ok(&self.plan)
    }
}

struct EpochOutcome {
    batches: usize,
    loss: Option<f64>,
    accuracy: f64,
}

/// Snapshot of one sub-model with its original ids.
pub fn checkpoint_of(hybrid: &HybridModel, job_id: &str) -> Result<Checkpoint> {
    let sub = hybrid.sub_model(job_id)?;
    Ok(Checkpoint {
        job_id: job_id.to_string(),
        graph: sub.local_graph()?,
        hyper: sub.hyper.clone(),
        params: sub.local_params()?,
        optimizer: sub.local_optimizer()?,
        completed_epochs: sub.completed_epochs,
        cursor: DataCursor {
            dataset: sub.dataset.clone(),
            seed: sub.hyper.seed,
            next_epoch: sub.completed_epochs,
        },
    })
}

/// Writes a checkpoint back into its sub-model after checking that it
/// belongs there.
pub fn restore(hybrid: &mut HybridModel, checkpoint: &Checkpoint) -> Result<()> {
    let job_id = checkpoint.job_id.as_str();
    let sub = hybrid.sub_model_mut(job_id)?;
    let mismatch = |what: &str| Err(Error::CheckpointMismatch(format!("`{job_id}`: {what} differs")));
    if sub.local_graph()? != checkpoint.graph {
        return mismatch("graph");
    }
    if sub.hyper != checkpoint.hyper {
        return mismatch("hyper-parameters");
    }
    let cursor = &checkpoint.cursor;
    if cursor.dataset != sub.dataset || cursor.seed != sub.hyper.seed || cursor.next_epoch != checkpoint.completed_epochs {
        return mismatch("data cursor");
    }
    if checkpoint.completed_epochs > sub.hyper.epochs {
        return mismatch("epoch count");
    }
    checkpoint.graph.check_params(&checkpoint.params)?;
    let ns = |id: &str| Ok(format!("{job_id}{}{id}", crate::model::NAMESPACE_SEP));
    let params = checkpoint.params.map_ids(ns)?;
    let optimizer = checkpoint.optimizer.map_ids(ns)?;
    if let Some(id) = optimizer.buffers().keys().find(|id| params.get(id).is_none()) {
        return Err(Error::CheckpointMismatch(format!("optimizer buffer for unknown parameter `{id}`")));
    }
    sub.params = params;
    sub.optimizer = optimizer;
    sub.completed_epochs = checkpoint.completed_epochs;
    Ok(())
}

#[cfg(test)]
mod tests;
