//! Plan checks written against the policy definitions, not the planner.

use std::collections::BTreeMap;

use hybridnn::scheduler::{JobSummary, Policy, SchedulePlan, SjfMetric};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 1 to 8 jobs with distinct shuffled arrivals, 1 to 6 epochs, priorities in
/// 0..4 (ties likely) and some epochs already done.
pub fn random_jobs(rng: &mut ChaCha8Rng) -> Vec<JobSummary> {
    let n = rng.gen_range(1..9);
    let mut arrivals: Vec<u64> = (0..n as u64 * 3).collect();
    arrivals.shuffle(rng);
    (0..n)
        .map(|i| {
            let epochs = rng.gen_range(1..7);
            let mut j = JobSummary::new(format!("j{i}"), arrivals[i], epochs)
                .with_priority(rng.gen_range(0..4))
                .with_params(rng.gen_range(1..10_000));
            if rng.gen_bool(0.2) {
                j.completed_epochs = rng.gen_range(0..epochs);
            }
            j
        })
        .collect()
}

/// Every remaining epoch exactly once, in increasing order, nothing else.
pub fn check_coverage(plan: &SchedulePlan, jobs: &[JobSummary]) -> Result<(), String> {
    let mut seen: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for s in &plan.slices {
        seen.entry(s.job_id.as_str()).or_default().push(s.epoch);
    }
    for j in jobs {
        let want: Vec<u32> = (j.completed_epochs..j.epochs).collect();
        let got = seen.remove(j.job_id.as_str()).unwrap_or_default();
        if got != want {
            return Err(format!("{}: epochs {got:?}, expected {want:?}", j.job_id));
        }
    }
    match seen.keys().next() {
        Some(extra) => Err(format!("unknown job {extra} in plan")),
        None => Ok(()),
    }
}

fn sequence(plan: &SchedulePlan) -> Vec<&str> {
    plan.slices.iter().map(|s| s.job_id.as_str()).collect()
}

fn contiguous(order: &[&JobSummary]) -> Vec<String> {
    order
        .iter()
        .flat_map(|j| std::iter::repeat_n(j.job_id.clone(), (j.epochs - j.completed_epochs) as usize))
        .collect()
}

fn rotate(order: &[&JobSummary]) -> Vec<String> {
    let mut left: Vec<u32> = order.iter().map(|j| j.epochs - j.completed_epochs).collect();
    let mut out = Vec::new();
    while left.iter().any(|&l| l > 0) {
        for (j, l) in order.iter().zip(left.iter_mut()) {
            if *l > 0 {
                *l -= 1;
                out.push(j.job_id.clone());
            }
        }
    }
    out
}

/// Job sequence each policy must produce.
pub fn expected_sequence(policy: Policy, jobs: &[JobSummary]) -> Vec<String> {
    let mut by_arrival: Vec<&JobSummary> = jobs.iter().collect();
    by_arrival.sort_by_key(|j| j.arrival_seq);
    match policy {
        Policy::Fcfs => contiguous(&by_arrival),
        Policy::Rr => rotate(&by_arrival),
        Policy::Sjf { metric } => {
            let key = |j: &JobSummary| match metric {
                SjfMetric::Epochs => j.epochs as u64,
                SjfMetric::Size => j.param_count,
            };
            let mut order = by_arrival.clone();
            order.sort_by(|a, b| key(a).cmp(&key(b)).then(a.arrival_seq.cmp(&b.arrival_seq)));
            contiguous(&order)
        }
        Policy::Priority => {
            let mut levels: Vec<i64> = jobs.iter().map(|j| j.priority).collect();
            levels.sort();
            levels.dedup();
            levels
                .into_iter()
                .flat_map(|p| {
                    let group: Vec<&JobSummary> = by_arrival.iter().copied().filter(|j| j.priority == p).collect();
                    rotate(&group)
                })
                .collect()
        }
    }
}

pub fn check_plan(plan: &SchedulePlan, jobs: &[JobSummary]) -> Result<(), String> {
    check_coverage(plan, jobs)?;
    let want = expected_sequence(plan.policy, jobs);
    if sequence(plan) != want {
        return Err(format!("{}: sequence {:?}, expected {want:?}", plan.policy, sequence(plan)));
    }
    Ok(())
}
