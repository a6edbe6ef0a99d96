use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdmot_core::taskgen::StrategyKind;

mod commands;
mod files;

use files::CliError;

/// Crowd annotation pipeline for multi-object tracking with lineage.
#[derive(Debug, Parser)]
#[command(name = "crowdmot", version)]
struct Cli {
    /// Working directory holding videos, ground truth, tasks and results.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register a video and its ground truth (MOT CSV or native JSON).
    Ingest {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Lineage sidecar for a MOT CSV; defaults to `<gt>.lineage.csv` when present.
        #[arg(long)]
        lineage: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Task generation.
    Tasks {
        #[command(subcommand)]
        action: TasksCommand,
    },
    /// Answer every open task with simulated workers.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Merge per-segment annotation files, given in segment order.
    Merge {
        #[arg(long, value_parser = parse_plan, default_value = "320,20")]
        plan: (u32, u32),
        #[arg(long)]
        frame_count: u32,
        #[arg(long, default_value_t = 0.3)]
        min_mean_iou: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(required = true)]
        segments: Vec<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Round administration.
    Workflow {
        #[command(subcommand)]
        action: WorkflowCommand,
    },
    /// Run the HTTP task service.
    Serve {
        /// Listen address; falls back to the CROWDMOT_ADDR environment variable.
        #[arg(long)]
        addr: Option<String>,
        /// Record store directory.
        #[arg(long, default_value = "service-data")]
        data: PathBuf,
        /// Project configuration to register on startup.
        #[arg(long)]
        project: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TasksCommand {
    Generate {
        #[arg(long)]
        strategy: StrategyKind,
        #[arg(long, default_value_t = 3)]
        redundancy: u32,
        #[arg(long, value_parser = parse_plan, default_value = "320,20")]
        plan: (u32, u32),
        #[arg(long, default_value_t = 0.4)]
        auc_filter: f64,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Subcommand)]
enum WorkflowCommand {
    Advance {
        /// Supervisor score table, required when selection is external.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn parse_plan(s: &str) -> Result<(u32, u32), String> {
    let (len, ov) = s.split_once(',').ok_or("expected LENGTH,OVERLAP")?;
    let len = len.trim().parse().map_err(|_| format!("bad segment length {len:?}"))?;
    let ov = ov.trim().parse().map_err(|_| format!("bad overlap {ov:?}"))?;
    Ok((len, ov))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let dir = &cli.dir;
    match cli.command {
        Command::Ingest { video, gt, lineage, force } => {
            commands::ingest(dir, &video, gt.as_deref(), lineage.as_deref(), force)
        }
        Command::Tasks { action: TasksCommand::Generate { strategy, redundancy, plan, auc_filter, force } } => {
            commands::generate(dir, strategy, redundancy, plan, auc_filter, force)
        }
        Command::Simulate { model, seed, force } => commands::simulate(dir, &model, seed, force),
        Command::Merge { plan, frame_count, min_mean_iou, out, force, segments } => {
            commands::merge(plan, frame_count, min_mean_iou, &segments, &out, force)
        }
        Command::Eval(a) => commands::eval(&a.pred, &a.gt, a.out.as_deref(), a.curves.as_deref(), a.force),
        Command::Workflow { action: WorkflowCommand::Advance { scores } } => commands::advance(dir, scores.as_deref()),
        Command::Serve { addr, data, project } => commands::serve(addr.as_deref(), &data, project.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
