use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lsbnav_cli::commands;
use lsbnav_cli::config::{ConfigFile, EvalOpts, GenDatasetOpts, PlotOpts, SimulateOpts, TrainOpts};

/// Learned clearance fields and barrier-constrained navigation.
#[derive(Parser)]
#[command(name = "lsbnav", version)]
struct Cli {
    /// TOML file with per-subcommand defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample configurations and label them with ground-truth clearance.
    GenDataset(GenDatasetOpts),
    /// Train a clearance model.
    Train(TrainOpts),
    /// Report metric-scale errors of a model on a dataset.
    Eval(EvalOpts),
    /// Run a closed-loop scenario and audit it.
    Simulate(SimulateOpts),
    /// Draw a logged trajectory over the map.
    Plot(PlotOpts),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenDataset(o) => commands::gen_dataset(&o.resolve(file.gen_dataset)?),
        Command::Train(o) => commands::train(&o.resolve(file.train)?),
        Command::Eval(o) => commands::eval(&o.resolve(file.eval)?),
        Command::Simulate(o) => commands::simulate(&o.resolve(file.simulate)?),
        Command::Plot(o) => commands::plot(&o.resolve(file.plot)?),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", commands::category(&e), one_line(&format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}
