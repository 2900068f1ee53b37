//! Trains the three demo jobs as one hybrid under round-robin and checks the
//! result against each job trained on its own.

use std::sync::mpsc;

use hybridnn::autograd::{train_step, Criterion, Executor};
use hybridnn::dataset::DatasetStore;
use hybridnn::demo;
use hybridnn::model::TrainingJob;
use hybridnn::scheduler::Policy;
use hybridnn::trainer::Trainer;
use hybridnn::unifier::HybridModel;

fn main() -> hybridnn::Result<()> {
    let mut store = DatasetStore::new();
    let mut jobs = Vec::new();
    for (i, d) in demo::three_jobs().into_iter().enumerate() {
        let hash = store.ingest_bytes(&d.dataset)?;
        jobs.push(TrainingJob::new(d.job_id, d.graph, hash, d.hyper, i as u64)?);
    }

    let (tx, rx) = mpsc::channel();
    let mut trainer = Trainer::with_policy(HybridModel::merge(&jobs)?, Policy::Rr, &store)?.with_sink(tx);
    let report = trainer.run()?;
    for slice in &report.slices {
        println!(
            "slice {:2} {:5} epoch {} loss {:.4}",
            slice.index,
            slice.job_id,
            slice.epoch,
            slice.train_loss.unwrap_or(f64::NAN)
        );
    }
    for event in rx.try_iter() {
        println!("{} finished at slice {}", event.job_id, event.slice_index);
    }

    for job in &jobs {
        let ds = store.get(&job.dataset)?;
        let mut ex = Executor::new(&job.model)?;
        let mut params = job.initial_params.clone();
        let mut opt = job.hyper.optimizer_state();
        for epoch in 0..job.hyper.epochs {
            opt.set_epoch(epoch);
            for b in ds.batches(job.hyper.batch_size, epoch, job.hyper.seed)? {
                train_step(&mut ex, &mut params, &mut opt, Criterion::SoftmaxCrossEntropy, &b.inputs, &b.targets)?;
            }
        }
        let unified = trainer.hybrid().sub_model(&job.job_id)?.local_params()?;
        println!("{:5} identical to standalone: {}", job.job_id, unified.bits_eq(&params));
    }
    Ok(())
}
