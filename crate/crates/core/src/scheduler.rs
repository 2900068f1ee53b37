//! Epoch-granularity training plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length measure used by shortest-job-first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SjfMetric {
    /// Trainable parameter count.
    Size,
    #[default]
    Epochs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Policy {
    Fcfs,
    Priority,
    Sjf { metric: SjfMetric },
    Rr,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Fcfs => f.write_str("fcfs"),
            Policy::Priority => f.write_str("priority"),
            Policy::Sjf { metric: SjfMetric::Epochs } => f.write_str("sjf(epochs)"),
            Policy::Sjf { metric: SjfMetric::Size } => f.write_str("sjf(size)"),
            Policy::Rr => f.write_str("rr"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcfs" => Ok(Policy::Fcfs),
            "priority" => Ok(Policy::Priority),
            "sjf" => Ok(Policy::Sjf {
                metric: SjfMetric::default(),
            }),
            "rr" => Ok(Policy::Rr),
            other => Err(Error::format("policy", format!("unknown policy `{other}`"))),
        }
    }
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::Fcfs,
        Policy::Priority,
        Policy::Sjf {
            metric: SjfMetric::Epochs,
        },
        Policy::Rr,
    ];
}

/// What a policy may look at.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSummary {
    pub job_id: String,
    pub priority: i64,
    pub arrival_seq: u64,
    pub epochs: u32,
    pub param_count: u64,
    /// Epochs already trained; the plan covers `completed_epochs..epochs`.
    pub completed_epochs: u32,
}

impl JobSummary {
    pub fn new(job_id: impl Into<String>, arrival_seq: u64, epochs: u32) -> Self {
        Self {
            job_id: job_id.into(),
            priority: arrival_seq as i64,
            arrival_seq,
            epochs,
            param_count: 0,
            completed_epochs: 0,
        }
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.priority = priority;
        self
    }

    pub fn with_params(mut self, param_count: u64) -> Self {
        self.param_count = param_count;
        self
    }

    fn remaining(&self) -> impl Iterator<Item = Slice> + '_ {
        (self.completed_epochs..self.epochs).map(|e| Slice::new(&self.job_id, e))
    }
}

/// One epoch of one job.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slice {
    pub job_id: String,
    pub epoch: u32,
}

impl Slice {
    pub fn new(job_id: impl Into<String>, epoch: u32) -> Self {
        Self {
            job_id: job_id.into(),
            epoch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub policy: Policy,
    pub slices: Vec<Slice>,
}

impl SchedulePlan {
    /// Each job's remaining epochs appear exactly once and in increasing order,
    /// and nothing else appears.
    pub fn validate(&self, jobs: &[JobSummary]) -> Result<()> {
        let mut next: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
        for j in jobs {
            if next.insert(&j.job_id, (j.completed_epochs, j.epochs)).is_some() {
                return Err(Error::DuplicateJob(j.job_id.clone()));
            }
        }
        for (i, s) in self.slices.iter().enumerate() {
            let (want, end) = next
                .get_mut(s.job_id.as_str())
                .ok_or_else(|| Error::PlanMismatch(format!("slice {i} names unknown job `{}`", s.job_id)))?;
            if s.epoch != *want || *want >= *end {
                return Err(Error::PlanMismatch(format!(
                    "slice {i}: job `{}` epoch {} out of order (expected {want})",
                    s.job_id, s.epoch
                )));
            }
            *want += 1;
        }
        if let Some((id, _)) = next.iter().find(|(_, (done, end))| done != end) {
            return Err(Error::PlanMismatch(format!("job `{id}` is not fully scheduled")));
        }
        Ok(())
    }

    /// Index of the job's last slice.
    pub fn completion_index(&self, job_id: &str) -> Option<usize> {
        self.slices.iter().rposition(|s| s.job_id == job_id)
    }

    /// Jobs in order of their last slice.
    pub fn completion_order(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut order: Vec<String> = self
            .slices
            .iter()
            .rev()
            .filter(|s| seen.insert(s.job_id.as_str()))
            .map(|s| s.job_id.clone())
            .collect();
        order.reverse();
        order
    }
}

/// Anything that can order a job set. The built-in [`Policy`] covers the four
/// standard disciplines.
pub trait SchedulingPolicy {
    fn plan(&self, jobs: &[JobSummary]) -> Result<SchedulePlan>;
}

impl SchedulingPolicy for Policy {
    fn plan(&self, jobs: &[JobSummary]) -> Result<SchedulePlan> {
        plan(*self, jobs)
    }
}

pub fn plan(policy: Policy, jobs: &[JobSummary]) -> Result<SchedulePlan> {
    if jobs.is_empty() {
        return Err(Error::EmptyJobList);
    }
    let mut arrivals = BTreeSet::new();
    if let Some(j) = jobs.iter().find(|j| !arrivals.insert(j.arrival_seq)) {
        return Err(Error::DuplicateArrival(j.arrival_seq));
    }
    let slices = match policy {
        Policy::Fcfs => plan_fcfs(jobs),
        Policy::Priority => plan_priority(jobs),
        Policy::Sjf { metric } => plan_sjf(jobs, metric),
        Policy::Rr => plan_rr(jobs),
    };
    let plan = SchedulePlan { policy, slices };
    debug_assert!(plan.validate(jobs).is_ok());
    Ok(plan)
}

fn by_arrival(jobs: &[JobSummary]) -> Vec<&JobSummary> {
    let mut v: Vec<_> = jobs.iter().collect();
    v.sort_by_key(|j| j.arrival_seq);
    v
}

fn contiguous<'a>(order: impl IntoIterator<Item = &'a JobSummary>) -> Vec<Slice> {
    order.into_iter().flat_map(|j| j.remaining()).collect()
}

fn round_robin(group: &[&JobSummary]) -> Vec<Slice> {
    let mut queues: Vec<_> = group.iter().map(|j| j.remaining()).collect();
    let mut out = Vec::new();
    loop {
        let before = out.len();
        for q in &mut queues {
            out.extend(q.next());
        }
        if out.len() == before {
            return out;
        }
    }
}

pub fn plan_fcfs(jobs: &[JobSummary]) -> Vec<Slice> {
    contiguous(by_arrival(jobs))
}

/// Ascending priority; equal priorities share epochs round-robin in arrival order.
pub fn plan_priority(jobs: &[JobSummary]) -> Vec<Slice> {
    let mut groups: BTreeMap<i64, Vec<&JobSummary>> = BTreeMap::new();
    for j in by_arrival(jobs) {
        groups.entry(j.priority).or_default().push(j);
    }
    groups.values().flat_map(|g| round_robin(g)).collect()
}

/// Ascending length, ties by arrival. Length counts all epochs, not only
/// the remaining ones.
pub fn plan_sjf(jobs: &[JobSummary], metric: SjfMetric) -> Vec<Slice> {
    let mut order = by_arrival(jobs);
    order.sort_by_key(|j| match metric {
        SjfMetric::Size => j.param_count,
        SjfMetric::Epochs => j.epochs as u64,
    });
    contiguous(order)
}

/// One epoch per turn in arrival order; finished jobs drop out.
pub fn plan_rr(jobs: &[JobSummary]) -> Vec<Slice> {
    round_robin(&by_arrival(jobs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(p: &[Slice]) -> Vec<String> {
        p.iter().map(|s| format!("{}{}", s.job_id, s.epoch)).collect()
    }

    fn abc(epochs: [u32; 3]) -> Vec<JobSummary> {
        ["A", "B", "C"]
            .iter()
            .zip(epochs)
            .enumerate()
            .map(|(i, (id, e))| JobSummary::new(*id, i as u64, e))
            .collect()
    }

    #[test]
    fn fcfs_contiguous() {
        assert_eq!(ids(&plan_fcfs(&abc([2, 1, 1]))), ["A0", "A1", "B0", "C0"]);
    }

    #[test]
    fn priority_order_and_ties() {
        let jobs: Vec<_> = abc([1, 1, 1]).into_iter().zip([2, 1, 3]).map(|(j, p)| j.with_priority(p)).collect();
        assert_eq!(ids(&plan_priority(&jobs)), ["B0", "A0", "C0"]);
        let tie = vec![JobSummary::new("A", 0, 2).with_priority(1), JobSummary::new("B", 1, 2).with_priority(1)];
        assert_eq!(ids(&plan_priority(&tie)), ["A0", "B0", "A1", "B1"]);
    }

    #[test]
    fn sjf_by_epochs_and_size() {
        let jobs = vec![
            JobSummary::new("resnet50", 0, 120).with_params(23_500_000),
            JobSummary::new("resnet18", 1, 100).with_params(11_170_000),
            JobSummary::new("lenet", 2, 20).with_params(44_470),
        ];
        assert_eq!(plan_sjf(&jobs, SjfMetric::Epochs)[0].job_id, "lenet");
        assert_eq!(plan_sjf(&jobs, SjfMetric::Size)[0].job_id, "lenet");
        let tied = abc([3, 3, 3]);
        assert_eq!(plan(Policy::Sjf { metric: SjfMetric::Epochs }, &tied).unwrap().completion_order(), ["A", "B", "C"]);
    }

    #[test]
    fn rr_examples() {
        let two = vec![JobSummary::new("A", 0, 2), JobSummary::new("B", 1, 3)];
        assert_eq!(ids(&plan_rr(&two)), ["A0", "B0", "A1", "B1", "B2"]);
        let p = plan(Policy::Rr, &abc([10, 25, 50])).unwrap();
        assert_eq!(p.completion_index("A"), Some(27));
    }

    #[test]
    fn resumed_jobs_start_mid_way() {
        let mut j = JobSummary::new("A", 0, 4);
        j.completed_epochs = 2;
        let p = plan(Policy::Fcfs, &[j.clone()]).unwrap();
        assert_eq!(ids(&p.slices), ["A2", "A3"]);
        p.validate(&[j]).unwrap();
    }

    #[test]
    fn validate_rejects_bad_plans() {
        let jobs = abc([2, 1, 1]);
        let mut p = plan(Policy::Fcfs, &jobs).unwrap();
        p.slices.swap(0, 1);
        assert!(matches!(p.validate(&jobs), Err(Error::PlanMismatch(_))));
        let mut p = plan(Policy::Fcfs, &jobs).unwrap();
        p.slices.pop();
        assert!(p.validate(&jobs).is_err());
        assert!(matches!(plan(Policy::Rr, &[]), Err(Error::EmptyJobList)));
        let dup = vec![JobSummary::new("A", 0, 1), JobSummary::new("B", 0, 1)];
        assert!(matches!(plan(Policy::Rr, &dup), Err(Error::DuplicateArrival(0))));
    }
}
