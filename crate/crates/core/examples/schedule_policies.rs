//! Prints the epoch plan of three jobs (10, 25 and 50 epochs) under every policy.

use hybridnn::scheduler::{plan, JobSummary, Policy, SjfMetric};

fn main() -> hybridnn::Result<()> {
    let jobs = [
        JobSummary::new("lenet", 0, 10).with_priority(2).with_params(44_470),
        JobSummary::new("resnet18", 1, 25).with_priority(1).with_params(11_200_000),
        JobSummary::new("resnet50", 2, 50).with_priority(3).with_params(23_700_000),
    ];
    let policies = [
        Policy::Fcfs,
        Policy::Priority,
        Policy::Sjf { metric: SjfMetric::Epochs },
        Policy::Sjf { metric: SjfMetric::Size },
        Policy::Rr,
    ];
    for policy in policies {
        let p = plan(policy, &jobs)?;
        let done: Vec<String> = jobs
            .iter()
            .map(|j| format!("{}@{}", j.job_id, p.completion_index(&j.job_id).unwrap()))
            .collect();
        let head: Vec<String> = p.slices.iter().take(8).map(|s| format!("{}:{}", s.job_id, s.epoch)).collect();
        println!("{:12} {}", policy.to_string(), done.join("  "));
        println!("{:12} {} ...", "", head.join(" "));
    }
    Ok(())
}
