//! Pauses the CNN job after two epochs, stores its checkpoint, and resumes it.

use hybridnn::dataset::DatasetStore;
use hybridnn::demo;
use hybridnn::model::TrainingJob;
use hybridnn::scheduler::Policy;
use hybridnn::trainer::{Checkpoint, JobStatus, Trainer};
use hybridnn::unifier::HybridModel;

fn main() -> hybridnn::Result<()> {
    let mut store = DatasetStore::new();
    let mut jobs = Vec::new();
    for (i, d) in demo::three_jobs().into_iter().enumerate() {
        let hash = store.ingest_bytes(&d.dataset)?;
        jobs.push(TrainingJob::new(d.job_id, d.graph, hash, d.hyper, i as u64)?);
    }

    let mut plain = Trainer::with_policy(HybridModel::merge(&jobs)?, Policy::Fcfs, &store)?;
    plain.run()?;

    let mut t = Trainer::with_policy(HybridModel::merge(&jobs)?, Policy::Fcfs, &store)?;
    while t.hybrid().sub_model("cnn")?.completed_epochs < 2 {
        t.step()?;
    }
    let bytes = t.pause("cnn")?.encode()?;
    println!("paused cnn: {} checkpoint bytes, status {:?}", bytes.len(), t.status("cnn")?);
    println!("remaining slices: {}", t.remaining().count());

    let checkpoint = Checkpoint::decode(&bytes)?;
    t.resume(&checkpoint)?;
    t.run()?;
    assert_eq!(t.status("cnn")?, JobStatus::Complete);

    let a = t.hybrid().sub_model("cnn")?.local_params()?;
    let b = plain.hybrid().sub_model("cnn")?.local_params()?;
    println!("resumed run matches uninterrupted run: {}", a.bits_eq(&b));
    Ok(())
}
