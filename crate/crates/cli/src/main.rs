//! `gmam`: equilibria, minimum action curves and fold scaling fits from a
//! JSON run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Run};
use config::{ModelKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "gmam", version, about = "Minimum action paths and escape barriers near folds")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir` of the configuration).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads for sweeps without warm start.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Start each sweep point from the previous minimizer.
    #[arg(long, global = true, value_name = "BOOL", action = clap::ArgAction::Set)]
    warm_start: Option<bool>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Locate and classify equilibria; for the superlattice also continue
    /// the current branches.
    Equilibria,
    /// Minimize the action from an attractor to the saddle.
    Mincurve {
        /// Bias at which to run (overrides the configured one).
        #[arg(long)]
        bias: Option<f64>,
    },
    /// Sweep the bias towards the fold and fit the action's scaling.
    SweepFit,
    /// Check the exponent on the saddle-node normal form.
    NormalFormCheck,
}

fn prepare(cli: &Cli) -> Result<Run, Failure> {
    let needs_config = !matches!(cli.command, Command::NormalFormCheck);
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::config)?,
        None if needs_config => return Err(Failure::config("--config <path> is required for this command")),
        None => RunConfig::from_json(r#"{"model": "saddle_node_normal_form"}"#).map_err(Failure::config)?,
    };
    if let Some(w) = cli.warm_start {
        config.sweep.warm_start = w;
    }
    config.validate().map_err(Failure::config)?;
    if matches!(cli.command, Command::NormalFormCheck) && config.model != ModelKind::SaddleNodeNormalForm {
        return Err(Failure::config("model: normal-form-check needs \"saddle_node_normal_form\""));
    }
    let mut model = config.model().map_err(Failure::config)?;
    if let Command::Mincurve { bias: Some(b) } = cli.command {
        model = model.with_bias(b).map_err(|e| Failure::config(format!("--bias: {e}")))?;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("--threads: {e}")))?;
    }
    let output = cli.output.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok(Run { config, model, output })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = prepare(&cli).and_then(|run| match cli.command {
        Command::Equilibria => commands::equilibria(&run),
        Command::Mincurve { .. } => commands::mincurve(&run),
        Command::SweepFit => commands::sweep_fit(&run),
        Command::NormalFormCheck => commands::normal_form_check(&run),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
