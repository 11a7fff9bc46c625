//! `toolforge`: asset generation, trajectory preprocessing, rollouts,
//! planning, evaluation, and report emission over one experiment config.
//!
//! Exit codes: 1 usage, 2 validation (bad inputs or files), 3 runtime.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use toolforge_core::error::Error as CoreError;

mod commands;

pub const SCHEMA_VERSIONS: &[(&str, u32)] = &[
    ("config", 1),
    ("tool", 1),
    ("robot", 1),
    ("trajectory", 1),
    ("report", 1),
];

#[derive(Parser)]
#[command(name = "toolforge", disable_version_flag = true)]
struct Cli {
    /// Print schema versions and exit.
    #[arg(long, global = true)]
    version: bool,
    /// Experiment config (TOML or JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural tools (JSON + OBJ mesh per tool).
    Gen(GenArgs),
    /// Downsample and lift-off-truncate a goal trajectory.
    Preprocess(PreprocessArgs),
    /// Run scripted-policy episodes and write JSONL logs.
    Rollout(RolloutArgs),
    /// Plan a fixed-grasp trajectory with DLS or trajectory optimization.
    Plan(PlanArgs),
    /// Closed-loop task-progress evaluation of a rollout or live policy.
    Eval(EvalArgs),
    /// Summarize episode logs into plot-ready CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Skip OBJ mesh emission.
    #[arg(long)]
    no_mesh: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Output rate; defaults to eval.downsample_hz.
    #[arg(long)]
    hz: Option<f64>,
    /// Apply lift-off truncation.
    #[arg(long)]
    liftoff: bool,
    /// Lift-off threshold override, m.
    #[arg(long)]
    z_thresh: Option<f64>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    policy: String,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long)]
    log: PathBuf,
    /// Tool file; sampled per episode when omitted.
    #[arg(long)]
    tool: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    mode: String,
    /// Object goal trajectory (JSONL).
    #[arg(long)]
    goals: PathBuf,
    /// Grab transform file (JSON).
    #[arg(long)]
    grab: PathBuf,
    /// Robot chain file; bundled default model when omitted.
    #[arg(long)]
    robot: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Table plane height override; defaults to the goals file table_z.
    #[arg(long)]
    table_z: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Recorded object-pose trajectory (JSONL) to score.
    #[arg(long, conflicts_with = "policy")]
    rollout: Option<PathBuf>,
    /// Live policy to roll out instead of a recording.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    goals: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Optional CSV summary (one row per rollout).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    #[arg(long)]
    tool: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of episode_*.jsonl logs.
    #[arg(long)]
    log: PathBuf,
    /// Reward-curve CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-episode summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Validation { .. }
        | CoreError::Parse { .. }
        | CoreError::Model(_)
        | CoreError::LengthMismatch { .. }
        | CoreError::UnknownFrame(_)
        | CoreError::AmbiguousOrientation { .. }
        | CoreError::NeverLifted { .. }
        | CoreError::NonFinite { .. } => 2,
        CoreError::Io(_) | CoreError::EpisodeDone | CoreError::EmptyDelayQueue => 3,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<toolforge_core::config::ExperimentConfig, CoreError> {
    let mut config = match path {
        Some(p) => toolforge_core::config::ExperimentConfig::load(p)?,
        None => toolforge_core::config::ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.master_seed = s;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version requests are not usage errors
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if cli.version {
        println!("toolforge {}", env!("CARGO_PKG_VERSION"));
        for (name, v) in SCHEMA_VERSIONS {
            println!("schema {name} v{v}");
        }
        return ExitCode::SUCCESS;
    }
    let config = match load_config(cli.config.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };
    if cli.dump_config {
        print!("{}", config.dump_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (try --help)");
        return ExitCode::from(1);
    };
    let result = match command {
        Command::Gen(args) => commands::gen(&config, args.count, &args.out, args.no_mesh),
        Command::Preprocess(args) => commands::preprocess(
            &config,
            &args.input,
            &args.output,
            args.hz,
            args.liftoff,
            args.z_thresh,
        ),
        Command::Rollout(args) => commands::rollout(
            &config,
            &args.policy,
            args.episodes,
            &args.log,
            args.tool.as_deref(),
            args.jobs,
        ),
        Command::Plan(args) => commands::plan(
            &config,
            &args.mode,
            &args.goals,
            &args.grab,
            args.robot.as_deref(),
            &args.report,
            args.table_z,
        ),
        Command::Eval(args) => commands::eval(
            &config,
            args.rollout.as_deref(),
            args.policy.as_deref(),
            &args.goals,
            &args.report,
            args.csv.as_deref(),
            args.episodes,
            args.tool.as_deref(),
            args.jobs,
        ),
        Command::Report(args) => {
            commands::report(&args.log, &args.out, args.summary.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
