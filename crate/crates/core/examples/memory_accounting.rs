//! Memory estimates for the demo jobs and a LeNet-sized model, plus the
//! per-slice occupancy trace under shortest-job-first.

use hybridnn::demo;
use hybridnn::memory::{
    baseline_concurrent, estimate_hybrid, estimate_model, reduction_percent, trace_memory, CostModelConfig, MIB,
};
use hybridnn::model::{HyperParams, OptimizerChoice};
use hybridnn::scheduler::{plan, JobSummary, Policy, SjfMetric};

fn mib(bytes: u64) -> f64 {
    bytes as f64 / MIB as f64
}

fn main() -> hybridnn::Result<()> {
    let config = CostModelConfig::default();
    let mut named = Vec::new();
    let mut jobs = Vec::new();
    for (i, d) in demo::three_jobs().iter().enumerate() {
        let e = estimate_model(&d.graph, &d.hyper, d.dataset.len() as u64, &config)?;
        println!(
            "{:5} weights+grads {:>8} B  io {:>8} B  dataset {:>7} B  total {:.1} MiB",
            d.job_id,
            e.weights_grads,
            e.io_tensors,
            e.dataset_bytes,
            mib(e.total)
        );
        jobs.push(JobSummary::new(d.job_id, i as u64, d.hyper.epochs));
        named.push((d.job_id.to_string(), e));
    }
    let est: Vec<_> = named.iter().map(|(_, e)| e.clone()).collect();
    let unified = estimate_hybrid(&est)?.total;
    let baseline = baseline_concurrent(&est)?.total;
    println!(
        "unified {:.1} MiB, concurrent {:.1} MiB, reduction {:.1}%",
        mib(unified),
        mib(baseline),
        reduction_percent(unified, baseline)
    );

    let sjf = plan(Policy::Sjf { metric: SjfMetric::Epochs }, &jobs)?;
    for p in trace_memory(&sjf, &named, &config)? {
        println!("slice {:2} {:5} {:.3} MiB", p.slice, p.job_id, mib(p.occupied));
    }

    let lenet = demo::lenet_class();
    let hyper = HyperParams::new(20, 256, 0.01, OptimizerChoice::Sgd);
    let e = estimate_model(&lenet, &hyper, 0, &config)?;
    println!("lenet-class: {} params, weights+grads {} B", lenet.param_count(), e.weights_grads);
    Ok(())
}
