//! Runs the service in a temporary directory: submit three jobs with
//! priorities, train them, and print the reports.

use hybridnn::demo;
use hybridnn::scheduler::Policy;
use hybridnn::service::{ReportKind, Service, SubmitOptions};

fn main() -> hybridnn::Result<()> {
    let work = tempfile::tempdir()?;
    let inputs = demo::write_inputs(&work.path().join("inputs"), &demo::three_jobs())?;
    let svc = Service::open(work.path().join("service"))?;

    for (f, priority) in inputs.iter().zip([2, 1, 3]) {
        let opts = SubmitOptions {
            priority: Some(priority),
            job_id: Some(f.job_id.to_string()),
        };
        let id = svc.submit(&f.model, &f.dataset, &f.hyper, opts)?;
        println!("submitted {id} with priority {priority}");
    }

    let report = svc.run(Policy::Priority, None)?;
    println!("delivered: {}", report.outputs.join(", "));
    println!("{}", svc.report(ReportKind::Memory)?);
    println!("{}", svc.report(ReportKind::Training)?);
    for entry in svc.status()? {
        println!("{entry}");
    }
    Ok(())
}
