//! File-backed job queue tying the pieces together.
//!
//! A service directory holds:
//!
//! ```text
//! queue.json            job records and progress
//! models/<job>.unnm     submitted graph, hyper-parameters and initial parameters
//! datasets/<hash>.unnd  each distinct dataset once
//! out/<job>.unnd        trained models, written as jobs complete
//! checkpoints/<job>.ckpt
//! report.json           last run: training and memory summaries
//! memory_trace.csv
//! training.csv
//! ```

mod queue;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use queue::{EntryState, Queue, QueueEntry};

use crate::dataset::{Dataset, DatasetHash, DatasetStore};
use crate::error::{Error, Result};
use crate::memory::{self, CostModelConfig, MemoryEstimate, SimulatedTime, TimeProfile, TracePoint};
use crate::model::{validate_job_id, HyperParams, ModelFile, TrainingJob};
use crate::scheduler::{plan, Policy, SchedulePlan};
use crate::separator::{write_atomic, SeparatorWorker};
use crate::trainer::{job_summaries, restore, Checkpoint, JobStatus, TrainReport, Trainer};
use crate::unifier::HybridModel;

pub const QUEUE_FILE: &str = "queue.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "memory_trace.csv";
pub const TRAINING_FILE: &str = "training.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobMemory {
    pub job_id: String,
    pub estimate: MemoryEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorySummary {
    pub config: CostModelConfig,
    pub jobs: Vec<JobMemory>,
    pub unified: MemoryEstimate,
    pub baseline: MemoryEstimate,
    pub unified_peak: u64,
    pub reduction_percent: f64,
    pub simulated_time: SimulatedTime,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub training: TrainReport,
    pub memory: MemorySummary,
    /// Output files relative to the service directory, in delivery order.
    pub outputs: Vec<String>,
    pub paused: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Memory,
    Training,
}

/// Optional overrides for `submit`.
#[derive(Clone, Debug, Default)]
pub struct SubmitOptions {
    pub priority: Option<i64>,
    pub job_id: Option<String>,
}

pub struct Service {
    root: PathBuf,
    config: CostModelConfig,
}

impl Service {
    /// Opens (creating if needed) a service directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["models", "datasets", "out", "checkpoints"] {
            std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::from(e).in_file(root.join(sub).display()))?;
        }
        Ok(Self {
            root,
            config: CostModelConfig::default(),
        })
    }

    pub fn with_config(mut self, config: CostModelConfig) -> Result<Self> {
        config.validate()?;
        self.config = config;
        Ok(self)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn model_rel(job_id: &str) -> String {
        format!("models/{job_id}.unnm")
    }

    fn dataset_rel(hash: &DatasetHash) -> String {
        format!("datasets/{hash}.unnd")
    }

    pub fn queue(&self) -> Result<Queue> {
        Queue::load(&self.path(QUEUE_FILE))
    }

    fn save_queue(&self, q: &Queue) -> Result<()> {
        q.save(&self.path(QUEUE_FILE))
    }

    /// Validates the three files and queues a job. Nothing is written unless
    /// every file is valid.
    pub fn submit(&self, model: &Path, dataset: &Path, hyper: &Path, opts: SubmitOptions) -> Result<String> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| Error::from(e).in_file(p.display()));
        let model_bytes = read(model)?;
        let dataset_bytes = read(dataset)?;
        let hyper_text = read(hyper)?;

        let file = ModelFile::read(&model_bytes).map_err(|e| e.in_file(model.display()))?;
        let hyper_text = std::str::from_utf8(&hyper_text)
            .map_err(|_| Error::format("hyper-parameters", "not UTF-8").in_file(hyper.display()))?;
        let hp = HyperParams::parse(hyper_text).map_err(|e| e.in_file(hyper.display()))?;
        let ds = Dataset::decode(&dataset_bytes).map_err(|e| e.in_file(dataset.display()))?;
        if ds.sample_shape() != file.graph.input_shape.as_slice() {
            return Err(Error::format(
                "dataset",
                format!("samples have shape {:?}, model expects {:?}", ds.sample_shape(), file.graph.input_shape),
            )
            .in_file(dataset.display()));
        }
        if hp.batch_size > ds.train_samples() {
            return Err(Error::BatchTooLarge {
                batch: hp.batch_size,
                samples: ds.train_samples(),
            }
            .in_file(hyper.display()));
        }

        let mut q = self.queue()?;
        let seq = q.next_seq;
        let job_id = opts.job_id.unwrap_or_else(|| format!("job{}", seq + 1));
        validate_job_id(&job_id)?;
        if q.jobs.iter().any(|j| j.job_id == job_id) {
            return Err(Error::DuplicateJob(job_id));
        }
        let mut job = TrainingJob::new(&job_id, file.graph.clone(), ds.hash.clone(), hp.clone(), seq)?;
        if let Some(p) = opts.priority {
            job = job.with_priority(p);
        }
        if !file.params.is_empty() {
            job = job.with_initial_params(file.params)?;
        }

        let ds_path = self.path(&Self::dataset_rel(&ds.hash));
        if !ds_path.exists() {
            write_atomic(&ds_path, &dataset_bytes)?;
        }
        let stored = ModelFile::new(job.model.clone(), job.initial_params.clone()).with_hyper(hp);
        write_atomic(&self.path(&Self::model_rel(&job_id)), &stored.encode()?)?;
        q.jobs.push(QueueEntry {
            job_id: job_id.clone(),
            arrival_seq: seq,
            priority: job.priority,
            dataset: ds.hash,
            epochs: job.hyper.epochs,
            state: EntryState::Queued,
            completed_epochs: 0,
            pause_after: None,
            resume_from: None,
            abort_reason: None,
        });
        q.next_seq = seq + 1;
        self.save_queue(&q)?;
        Ok(job_id)
    }

    pub fn status(&self) -> Result<Vec<QueueEntry>> {
        Ok(self.queue()?.jobs)
    }

    /// Datasets referenced by the queue, loaded once per hash.
    pub fn dataset_store(&self) -> Result<DatasetStore> {
        let mut store = DatasetStore::new();
        for entry in self.queue()?.jobs {
            if !store.contains(&entry.dataset) {
                store.ingest_file(&self.path(&Self::dataset_rel(&entry.dataset)))?;
            }
        }
        Ok(store)
    }

    /// Requests a pause once `after_epochs` epochs are done (0 pauses before
    /// the job's next epoch).
    pub fn pause(&self, job_id: &str, after_epochs: Option<u32>) -> Result<()> {
        let mut q = self.queue()?;
        let entry = q.get_mut(job_id)?;
        if !matches!(entry.state, EntryState::Queued | EntryState::Training) {
            return Err(Error::JobState(format!("cannot pause `{job_id}`: it is {:?}", entry.state)));
        }
        let at = after_epochs.unwrap_or(entry.completed_epochs).max(entry.completed_epochs);
        if at >= entry.epochs {
            return Err(Error::JobState(format!(
                "cannot pause `{job_id}` after {at} of {} epochs",
                entry.epochs
            )));
        }
        entry.pause_after = Some(at);
        self.save_queue(&q)
    }

    /// Re-queues a paused job to continue from `checkpoint` on the next run.
    pub fn resume(&self, job_id: &str, checkpoint: &Path) -> Result<()> {
        let mut q = self.queue()?;
        let entry = q.get_mut(job_id)?;
        if entry.state != EntryState::Paused {
            return Err(Error::JobState(format!("cannot resume `{job_id}`: it is not paused")));
        }
        let bytes = std::fs::read(checkpoint).map_err(|e| Error::from(e).in_file(checkpoint.display()))?;
        let ckpt = Checkpoint::decode(&bytes).map_err(|e| e.in_file(checkpoint.display()))?;
        if ckpt.job_id != job_id || ckpt.cursor.dataset != entry.dataset {
            return Err(Error::CheckpointMismatch(format!("checkpoint belongs to `{}`", ckpt.job_id))
                .in_file(checkpoint.display()));
        }
        let rel = format!("checkpoints/{job_id}.ckpt");
        let stored = self.path(&rel);
        if std::fs::canonicalize(checkpoint).ok() != std::fs::canonicalize(&stored).ok() {
            write_atomic(&stored, &bytes)?;
        }
        entry.state = EntryState::Queued;
        entry.completed_epochs = ckpt.completed_epochs;
        entry.resume_from = Some(rel);
        self.save_queue(&q)
    }

    fn load_job(&self, entry: &QueueEntry) -> Result<TrainingJob> {
        let path = self.path(&Self::model_rel(&entry.job_id));
        let bytes = std::fs::read(&path).map_err(|e| Error::from(e).in_file(path.display()))?;
        let file = ModelFile::decode(&bytes).map_err(|e| e.in_file(path.display()))?;
        let hyper = file
            .hyper
            .ok_or_else(|| Error::format("model stream", "stored model lacks hyper-parameters").in_file(path.display()))?;
        TrainingJob::new(&entry.job_id, file.graph, entry.dataset.clone(), hyper, entry.arrival_seq)?
            .with_priority(entry.priority)
            .with_initial_params(file.params)
    }

    /// Trains every queued job as one hybrid and writes outputs and reports.
    pub fn run(&self, policy: Policy, capacity: Option<u64>) -> Result<RunReport> {
        let mut q = self.queue()?;
        let mut entries: Vec<QueueEntry> = q.jobs.iter().filter(|j| j.state == EntryState::Queued).cloned().collect();
        if entries.is_empty() {
            return Err(Error::Empty("no queued jobs"));
        }
        entries.sort_by_key(|e| e.arrival_seq);
        let store = self.dataset_store()?;
        let jobs = entries.iter().map(|e| self.load_job(e)).collect::<Result<Vec<_>>>()?;
        let mut hybrid = HybridModel::merge(&jobs)?;
        for e in &entries {
            if let Some(rel) = &e.resume_from {
                let path = self.path(rel);
                let bytes = std::fs::read(&path).map_err(|err| Error::from(err).in_file(path.display()))?;
                let ckpt = Checkpoint::decode(&bytes).map_err(|err| err.in_file(path.display()))?;
                restore(&mut hybrid, &ckpt).map_err(|err| err.in_job(&e.job_id))?;
            }
        }

        let schedule = plan(policy, &job_summaries(&hybrid))?;
        let (memory, trace) = self.memory_summary(&hybrid, &store, &schedule)?;
        if let Some(cap) = capacity {
            if memory.unified.total > cap {
                return Err(Error::Admission {
                    estimate: memory.unified.total,
                    capacity: cap,
                });
            }
        }
        write_atomic(&self.path(TRACE_FILE), memory::trace_csv(&trace).as_bytes())?;

        let worker = Arc::new(Mutex::new(SeparatorWorker::spawn(Some(self.path("out")))));
        let mut trainer = Trainer::new(hybrid, schedule, &store)?.with_sink(Arc::clone(&worker));
        let mut paused = Vec::new();
        for e in &entries {
            q.get_mut(&e.job_id)?.resume_from = None;
        }
        loop {
            for e in &entries {
                let entry = q.get_mut(&e.job_id)?;
                let done = trainer.hybrid().sub_model(&e.job_id)?.completed_epochs;
                let active = matches!(trainer.status(&e.job_id)?, JobStatus::Pending | JobStatus::Training);
                if active && entry.pause_after == Some(done) {
                    let ckpt = trainer.pause(&e.job_id)?;
                    write_atomic(&self.path(&format!("checkpoints/{}.ckpt", e.job_id)), &ckpt.encode()?)?;
                    entry.state = EntryState::Paused;
                    entry.pause_after = None;
                    entry.completed_epochs = done;
                    paused.push(e.job_id.clone());
                    self.save_queue(&q)?;
                }
            }
            let Some(slice) = trainer.step()?.cloned() else { break };
            let entry = q.get_mut(&slice.job_id)?;
            let status = trainer.status(&slice.job_id)?;
            entry.completed_epochs = trainer.hybrid().sub_model(&slice.job_id)?.completed_epochs;
            entry.state = match status {
                JobStatus::Complete => EntryState::Complete,
                JobStatus::Aborted => EntryState::Aborted,
                _ => EntryState::Training,
            };
            if status == JobStatus::Aborted {
                entry.abort_reason = trainer.report().job(&slice.job_id).and_then(|r| r.abort_reason.clone());
            }
            self.save_queue(&q)?;
        }
        let mut training = trainer.report();
        drop(trainer);
        let delivered = Arc::try_unwrap(worker)
            .map_err(|_| Error::Empty("separator still shared"))?
            .into_inner()
            .expect("separator lock")
            .join()?;
        training.memory_trace = Some(TRACE_FILE.to_string());

        let report = RunReport {
            outputs: delivered.iter().map(|d| format!("out/{}.unnd", d.job_id)).collect(),
            training,
            memory,
            paused,
        };
        write_atomic(&self.path(TRAINING_FILE), training_csv(&report.training).as_bytes())?;
        let mut json = serde_json::to_vec_pretty(&report)?;
        json.push(b'\n');
        write_atomic(&self.path(REPORT_FILE), &json)?;
        Ok(report)
    }

    fn memory_summary(
        &self,
        hybrid: &HybridModel,
        store: &DatasetStore,
        schedule: &SchedulePlan,
    ) -> Result<(MemorySummary, Vec<TracePoint>)> {
        let mut jobs = Vec::new();
        let mut times = Vec::new();
        for sub in hybrid.sub_models() {
            let ds = store.get(&sub.dataset).map_err(|e| e.in_job(&sub.job_id))?;
            let estimate = memory::estimate_model(&sub.local_graph()?, &sub.hyper, ds.byte_len, &self.config)?;
            jobs.push(JobMemory {
                job_id: sub.job_id.clone(),
                estimate,
            });
            times.push(TimeProfile {
                param_count: sub.param_count(),
                samples: ds.train_samples() as u64,
                batch_size: sub.hyper.batch_size as u64,
                epochs: sub.hyper.epochs - sub.completed_epochs,
            });
        }
        let estimates: Vec<_> = jobs.iter().map(|j| j.estimate.clone()).collect();
        let unified = memory::estimate_hybrid(&estimates)?;
        let baseline = memory::baseline_concurrent(&estimates)?;
        let trace = memory::trace_memory(
            schedule,
            &jobs.iter().map(|j| (j.job_id.clone(), j.estimate.clone())).collect::<Vec<_>>(),
            &self.config,
        )?;
        let summary = MemorySummary {
            config: self.config.clone(),
            unified_peak: trace.iter().map(|p| p.occupied).max().unwrap_or(0),
            reduction_percent: memory::reduction_percent(unified.total, baseline.total),
            simulated_time: memory::simulated_time(&times, &self.config),
            unified,
            baseline,
            jobs,
        };
        Ok((summary, trace))
    }

    pub fn last_report(&self) -> Result<RunReport> {
        let path = self.path(REPORT_FILE);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::from(e).in_file(path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Empty("no completed run")),
            Err(e) => Err(Error::from(e).in_file(path.display())),
        }
    }

    /// Text summary of the last run.
    pub fn report(&self, kind: ReportKind) -> Result<String> {
        let r = self.last_report()?;
        Ok(match kind {
            ReportKind::Memory => memory_text(&r.memory),
            ReportKind::Training => {
                let mut out = String::new();
                for j in &r.training.jobs {
                    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                    writeln!(
                        out,
                        "# {} {:?} epochs {}/{} train_loss {} test_accuracy {}",
                        j.job_id,
                        j.status,
                        j.completed_epochs,
                        j.epochs,
                        fmt(j.final_train_loss),
                        fmt(j.test_accuracy)
                    )
                    .expect("writing to a String");
                }
                out.push_str(&training_csv(&r.training));
                out
            }
        })
    }
}

fn memory_text(m: &MemorySummary) -> String {
    let mib = |b: u64| b as f64 / memory::MIB as f64;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("{:<16} {:>14} {:>14}", "job", "unreleased MiB", "total MiB"));
    for j in &m.jobs {
        line(format!("{:<16} {:>14.3} {:>14.3}", j.job_id, mib(j.estimate.unreleased), mib(j.estimate.total)));
    }
    line(format!("unified peak     {:.3} MiB", mib(m.unified.total)));
    line(format!("baseline total   {:.3} MiB", mib(m.baseline.total)));
    line(format!("reduction        {:.2}%", m.reduction_percent));
    line(format!(
        "simulated time   unified {:.3}, baseline {:.3}",
        m.simulated_time.unified, m.simulated_time.baseline
    ));
    line("unified_bytes,baseline_bytes,reduction_percent".to_string());
    line(format!("{},{},{:.4}", m.unified.total, m.baseline.total, m.reduction_percent));
    out
}

/// One row per executed slice.
pub fn training_csv(r: &TrainReport) -> String {
    let mut out = String::from("slice,job,epoch,train_loss,train_accuracy\n");
    for s in &r.slices {
        let loss = s.train_loss.map_or("nan".to_string(), |l| format!("{l:.6}"));
        writeln!(out, "{},{},{},{},{:.6}", s.index, s.job_id, s.epoch, loss, s.train_accuracy).expect("writing to a String");
    }
    out
}
