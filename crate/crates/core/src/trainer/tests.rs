use std::sync::mpsc;

use super::*;
use crate::autograd::Criterion;
use crate::demo;
use crate::model::{HyperParams, ModelGraph, OptimizerChoice, TrainingJob};
use crate::scheduler::SjfMetric;

fn setup(specs: &[(&str, ModelGraph, Vec<u8>, HyperParams)]) -> (Vec<TrainingJob>, DatasetStore) {
    let mut store = DatasetStore::new();
    let jobs = specs
        .iter()
        .enumerate()
        .map(|(i, (id, g, data, h))| {
            let hash = store.ingest_bytes(data).unwrap();
            TrainingJob::new(*id, g.clone(), hash, h.clone(), i as u64).unwrap()
        })
        .collect();
    (jobs, store)
}

fn demo_setup() -> (Vec<TrainingJob>, DatasetStore) {
    let specs: Vec<_> = demo::three_jobs()
        .into_iter()
        .map(|d| (d.job_id, d.graph, d.dataset, d.hyper))
        .collect();
    setup(&specs)
}

/// Plain autograd loop, no hybrid involved.
fn standalone(job: &TrainingJob, store: &DatasetStore) -> ParamStore {
    let ds = store.get(&job.dataset).unwrap();
    let mut ex = Executor::new(&job.model).unwrap();
    let mut params = job.initial_params.clone();
    let mut opt = job.hyper.optimizer_state();
    for epoch in 0..job.hyper.epochs {
        opt.set_epoch(epoch);
        for b in ds.batches(job.hyper.batch_size, epoch, job.hyper.seed).unwrap() {
            train_step(&mut ex, &mut params, &mut opt, Criterion::SoftmaxCrossEntropy, &b.inputs, &b.targets).unwrap();
        }
    }
    params
}

fn final_params(trainer: &Trainer, job: &str) -> ParamStore {
    trainer.hybrid().sub_model(job).unwrap().local_params().unwrap()
}

#[test]
fn unified_matches_standalone_for_every_policy() {
    let (jobs, store) = demo_setup();
    let expected: Vec<_> = jobs.iter().map(|j| standalone(j, &store)).collect();
    for policy in Policy::ALL {
        let mut t = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), policy, &store).unwrap();
        let report = t.run().unwrap();
        for (job, want) in jobs.iter().zip(&expected) {
            assert!(final_params(&t, &job.job_id).bits_eq(want), "{policy}: {}", job.job_id);
            let r = report.job(&job.job_id).unwrap();
            assert_eq!(r.slices_executed, job.hyper.epochs);
            assert_eq!(r.status, JobStatus::Complete);
        }
    }
}

#[test]
fn completion_events_follow_plan() {
    let (jobs, store) = demo_setup();
    let jobs: Vec<_> = jobs.into_iter().zip([2, 1, 3]).map(|(j, p)| j.with_priority(p)).collect();
    let (tx, rx) = mpsc::channel();
    let mut t = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), Policy::Priority, &store)
        .unwrap()
        .with_sink(tx);
    let report = t.run().unwrap();
    drop(t);
    let events: Vec<_> = rx.iter().collect();
    let order: Vec<_> = events.iter().map(|e| e.job_id.as_str()).collect();
    assert_eq!(order, ["mlp3", "mlp2", "cnn"]);
    assert_eq!(order, report.completion_order());
    // the snapshot is taken when the job finishes, before later jobs train
    let first = &events[0].snapshot;
    assert_eq!(first.sub_model("mlp2").unwrap().completed_epochs, 0);
}

#[test]
fn pause_resume_is_bit_exact() {
    let (jobs, store) = demo_setup();
    for policy in [Policy::Fcfs, Policy::Rr, Policy::Sjf { metric: SjfMetric::Size }] {
        let mut plain = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), policy, &store).unwrap();
        plain.run().unwrap();

        let mut t = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), policy, &store).unwrap();
        while t.hybrid().sub_model("cnn").unwrap().completed_epochs < 2 {
            t.step().unwrap();
        }
        let ckpt = t.pause("cnn").unwrap();
        assert_eq!(ckpt.completed_epochs, 2);
        assert!(t.remaining().all(|s| s.job_id != "cnn"));
        let bytes = ckpt.encode().unwrap();
        assert_eq!(bytes, ckpt.encode().unwrap());
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        t.step().unwrap();
        t.resume(&back).unwrap();
        t.run().unwrap();
        for job in ["mlp2", "mlp3", "cnn"] {
            assert!(final_params(&t, job).bits_eq(&final_params(&plain, job)), "{policy} {job}");
        }
    }
}

#[test]
fn pause_errors() {
    let (jobs, store) = demo_setup();
    let mut t = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), Policy::Fcfs, &store).unwrap();
    assert!(matches!(t.pause("ghost"), Err(Error::UnknownJob(_))));
    while t.status("mlp2").unwrap() != JobStatus::Complete {
        t.step().unwrap();
    }
    assert!(matches!(t.pause("mlp2"), Err(Error::JobState(_))));
    let ckpt = t.pause("mlp3").unwrap();
    assert!(t.pause("mlp3").is_err());
    let mut wrong = ckpt.clone();
    wrong.cursor.seed += 1;
    assert!(matches!(t.resume(&wrong), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn corrupted_checkpoint_rejected() {
    let (jobs, _) = demo_setup();
    let h = HybridModel::merge(&jobs).unwrap();
    let mut bytes = checkpoint_of(&h, "mlp2").unwrap().encode().unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    assert!(matches!(Checkpoint::decode(&bytes), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn nan_aborts_only_that_job() {
    let (mut jobs, store) = demo_setup();
    jobs[1].hyper.learning_rate = 1e30;
    jobs[1].hyper.optimizer = OptimizerChoice::Sgd;
    let clean = vec![jobs[0].clone(), jobs[2].clone()];
    let mut t = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), Policy::Rr, &store).unwrap();
    let report = t.run().unwrap();
    let bad = report.job("mlp3").unwrap();
    assert_eq!(bad.status, JobStatus::Aborted);
    assert!(bad.abort_reason.as_deref().unwrap().contains("non-finite"));
    let mut reference = Trainer::with_policy(HybridModel::merge(&clean).unwrap(), Policy::Rr, &store).unwrap();
    reference.run().unwrap();
    for job in ["mlp2", "cnn"] {
        assert!(final_params(&t, job).bits_eq(&final_params(&reference, job)));
    }
}

#[test]
fn missing_dataset_names_job() {
    let (jobs, _) = demo_setup();
    let empty = DatasetStore::new();
    let err = Trainer::with_policy(HybridModel::merge(&jobs).unwrap(), Policy::Fcfs, &empty).err().unwrap();
    assert!(matches!(err, Error::Job { job, source } if job == "mlp2" && matches!(*source, Error::UnknownDataset(_))));
}
