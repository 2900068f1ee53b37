use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use hybridnn::scheduler::{Policy, SjfMetric};
use hybridnn::service::{ReportKind, Service, SubmitOptions};
use hybridnn::{demo, ErrorCategory};

#[derive(Parser)]
#[command(name = "unnd", version, about = "Train queued models together as one hybrid model")]
struct Cli {
    /// Service directory holding the queue, datasets and outputs.
    #[arg(long, global = true, env = "UNND_DIR", default_value = ".")]
    dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Fcfs,
    Priority,
    Sjf,
    Rr,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Size,
    Epochs,
}

#[derive(Subcommand)]
enum Command {
    /// Queue a model, dataset and hyper-parameter file as a new job.
    Submit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        hyper: PathBuf,
        /// Lower runs first; defaults to arrival order.
        #[arg(long, allow_negative_numbers = true)]
        priority: Option<i64>,
        #[arg(long)]
        id: Option<String>,
    },
    /// Train every queued job.
    Run {
        #[arg(long, value_enum)]
        policy: PolicyArg,
        #[arg(long, value_enum, default_value = "epochs")]
        sjf_metric: MetricArg,
        /// Device capacity in bytes.
        #[arg(long)]
        capacity: Option<u64>,
    },
    Status,
    /// Pause a job once it has trained the given number of epochs.
    Pause {
        job: String,
        #[arg(long)]
        after_epochs: Option<u32>,
    },
    /// Continue a paused job from a checkpoint on the next run.
    Resume { job: String, checkpoint: PathBuf },
    #[command(group(ArgGroup::new("kind").required(true).args(["memory", "training"])))]
    Report {
        #[arg(long)]
        memory: bool,
        #[arg(long)]
        training: bool,
    },
    /// Write input files for the three built-in toy jobs.
    Demo { out: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ErrorCategory::Usage.exit_code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> hybridnn::Result<()> {
    if let Command::Demo { out } = &cli.command {
        for f in demo::write_inputs(out, &demo::three_jobs())? {
            println!(
                "{}: --model {} --dataset {} --hyper {}",
                f.job_id,
                f.model.display(),
                f.dataset.display(),
                f.hyper.display()
            );
        }
        return Ok(());
    }
    let svc = Service::open(&cli.dir)?;
    match cli.command {
        Command::Submit {
            model,
            dataset,
            hyper,
            priority,
            id,
        } => {
            let job = svc.submit(&model, &dataset, &hyper, SubmitOptions { priority, job_id: id })?;
            println!("{job}");
        }
        Command::Run {
            policy,
            sjf_metric,
            capacity,
        } => {
            let policy = match policy {
                PolicyArg::Fcfs => Policy::Fcfs,
                PolicyArg::Priority => Policy::Priority,
                PolicyArg::Sjf => Policy::Sjf {
                    metric: match sjf_metric {
                        MetricArg::Size => SjfMetric::Size,
                        MetricArg::Epochs => SjfMetric::Epochs,
                    },
                },
                PolicyArg::Rr => Policy::Rr,
            };
            let report = svc.run(policy, capacity)?;
            for out in &report.outputs {
                println!("wrote {out}");
            }
            for job in &report.paused {
                println!("paused {job}");
            }
            for j in report.training.jobs.iter().filter(|j| j.abort_reason.is_some()) {
                println!("aborted {}: {}", j.job_id, j.abort_reason.as_deref().unwrap_or_default());
            }
            println!("memory reduction {:.2}%", report.memory.reduction_percent);
        }
        Command::Status => {
            for entry in svc.status()? {
                println!("{entry}");
            }
        }
        Command::Pause { job, after_epochs } => svc.pause(&job, after_epochs)?,
        Command::Resume { job, checkpoint } => svc.resume(&job, &checkpoint)?,
        Command::Report { memory, .. } => {
            let kind = if memory { ReportKind::Memory } else { ReportKind::Training };
            print!("{}", svc.report(kind)?);
        }
        Command::Demo { .. } => unreachable!("handled above"),
    }
    Ok(())
}
