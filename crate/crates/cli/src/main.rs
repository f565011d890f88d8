use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajsens_cli::config::{self, ExperimentConfig, Overrides};
use trajsens_cli::pipeline::{self, Context};
use trajsens_cli::CliResult;
use trajsens_core::report::ReportFormat;

#[derive(Parser)]
#[command(name = "trajsens", version, about = "Sensitivity analyses of a trajectory predictor")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override a config field, e.g. `--set training.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Args)]
struct CheckpointArg {
    /// Trained parameters; defaults to `<out>/train/model.json`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and evaluation scenes.
    GenData {
        /// Number of training scenes.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the predictor.
    Train,
    /// Run the analyses listed in `analysis.run`.
    Analyze(CheckpointArg),
    /// Per-dimension, per-step state-history sensitivity.
    Depth(CheckpointArg),
    /// FGSM epsilon sweep, plus the mode-switch count on one scene.
    Sweep(CheckpointArg),
    /// Plan against baseline and attacked predictions.
    PlanDemo(CheckpointArg),
    /// Emit tables, plot data and SVG boxplots from existing results.
    Report {
        #[arg(long, value_delimiter = ',', default_value = "table,plotdata,svg")]
        formats: Vec<ReportFormat>,
    },
}

fn resolve(common: &Common, extra: Vec<String>) -> CliResult<ExperimentConfig> {
    let mut sets = common.sets.clone();
    sets.extend(extra);
    config::load(
        common.config.as_deref(),
        &Overrides {
            sets,
            seed: common.seed,
            out: common.out.clone(),
            workers: common.workers,
        },
    )
}

fn run(cli: Cli) -> CliResult<()> {
    let extra = match &cli.command {
        Command::GenData { count: Some(n) } => vec![format!("data.train_count={n}")],
        _ => Vec::new(),
    };
    let cfg = resolve(&cli.common, extra)?;
    match cli.command {
        Command::GenData { .. } => {
            let dir = pipeline::gen_data(&cfg)?;
            log::info!("scenes written to {}", dir.display());
        }
        Command::Train => {
            let model = pipeline::train_command(&cfg)?;
            log::info!("checkpoint written to {}", model.display());
        }
        Command::Analyze(c) => {
            for dir in pipeline::analyze(&cfg, c.checkpoint.as_deref())? {
                log::info!("results written to {}", dir.display());
            }
        }
        Command::Depth(c) => {
            let ctx = Context::load(&cfg, c.checkpoint.as_deref())?;
            let dir = pipeline::run_depth(&ctx)?;
            log::info!("results written to {}", dir.display());
        }
        Command::Sweep(c) => {
            let ctx = Context::load(&cfg, c.checkpoint.as_deref())?;
            let dir = pipeline::run_sweep(&ctx)?;
            let report = pipeline::run_mode_switch(&ctx)?;
            log::info!(
                "results written to {}; {} mode switches",
                dir.display(),
                report.switches
            );
        }
        Command::PlanDemo(c) => {
            let ctx = Context::load(&cfg, c.checkpoint.as_deref())?;
            let dir = pipeline::run_plan_demo(&ctx)?;
            log::info!("results written to {}", dir.display());
        }
        Command::Report { formats } => {
            for p in pipeline::report(&cfg, &formats)? {
                log::info!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
