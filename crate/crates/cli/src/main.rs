use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use artfield::worldgen::dataset::DataConfig;
use artfield_cli::config::{resolve, EvalRun, InferRun, PlanRun, SimulateRun, TrainRun, Validate};
use artfield_cli::rundir::{self, Tee, RUNS_ENV};
use artfield_cli::{commands, CliError, CliResult};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Neural articulated-object fields: data, training, inference, simulation and planning.
#[derive(Parser)]
#[command(name = "artfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic posed-image dataset.
    GenData(Common),
    /// Train the model on a dataset.
    Train(Common),
    /// Infer latent codes for observed instances.
    Infer(Common),
    /// Forward-simulate keypoints (and frames) from inferred codes.
    Simulate(Common),
    /// Plan gripper trajectories and validate them against the oracle.
    Plan(Common),
    /// Score predictions against ground truth.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// JSON file with configuration values; missing fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set train.iterations=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory. Defaults to a timestamped directory under the runs root.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Root for timestamped run directories.
    #[arg(long, env = RUNS_ENV)]
    runs_root: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

fn execute<T, R>(name: &str, args: &Common, body: impl FnOnce(&T, &Path) -> CliResult<R>) -> CliResult<()>
where
    T: Default + Serialize + DeserializeOwned + Validate,
{
    let cfg: T = resolve(args.config.as_deref(), &args.sets)?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(());
    }
    let run = rundir::create(name, args.run_dir.as_deref(), args.runs_root.as_deref())?;
    rundir::write_json(&run.join("config.json"), &cfg)?;
    let tee = Tee::create(&run.join("log.txt"))?;
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .parse_default_env()
        .format_timestamp(None)
        .target(env_logger::Target::Pipe(Box::new(tee)))
        .init();
    info!("{name}: run directory {}", run.display());
    let start = Instant::now();
    body(&cfg, &run)?;
    info!("{name}: done in {:.1} s", start.elapsed().as_secs_f64());
    println!("{}", run.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => execute::<DataConfig, _>("gen-data", &a, commands::gen_data),
        Command::Train(a) => execute::<TrainRun, _>("train", &a, commands::train_model),
        Command::Infer(a) => execute::<InferRun, _>("infer", &a, commands::infer),
        Command::Simulate(a) => execute::<SimulateRun, _>("simulate", &a, commands::simulate),
        Command::Plan(a) => execute::<PlanRun, _>("plan", &a, commands::plan),
        Command::Eval(a) => execute::<EvalRun, _>("eval", &a, commands::eval),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            e.exit_code()
        }
    }
}

fn report(e: &CliError) {
    // Once the logger is up, errors also land in the run's log file.
    if log::max_level() >= log::LevelFilter::Error {
        log::error!("{e}");
    } else {
        eprintln!("error: {e}");
    }
    if let Some(h) = e.hint() {
        eprintln!("hint: {h}");
    }
}
