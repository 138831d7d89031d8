use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsel::fault::CostModel;
use fedsel_cli::commands::{self, CheckpointOptArgs};
use fedsel_cli::{CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "fedsel", version, about = "Federated learning simulator with client selection, privacy and checkpointing")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; trials use seed, seed+1, ... Overrides the config.
    #[arg(long, global = true, env = "FEDSEL_SEED")]
    seed: Option<u64>,

    /// Output directory. Overrides `experiment.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run `experiment.trials` simulations and write one report per trial.
    Run,
    /// Repeat the experiment for each privacy budget.
    SweepEpsilon {
        /// Comma-separated ε values. Defaults to `sweep.epsilons`.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Utility selection against `experiment.baseline` with a U test per metric.
    Compare,
    /// Optimal checkpoint interval for a Weibull failure model.
    CheckpointOpt {
        /// Total job time T.
        #[arg(long)]
        total_time: f64,
        /// Recovery time t_r.
        #[arg(long)]
        recovery_time: f64,
        /// Cost of one checkpoint write c_w.
        #[arg(long)]
        write_cost: f64,
        /// Weibull scale λ.
        #[arg(long)]
        lambda: f64,
        /// Weibull shape k.
        #[arg(long)]
        shape: f64,
        #[arg(long, default_value = "amortized")]
        model: CostModel,
        /// Lower end of the search domain. Defaults to T/10^4.
        #[arg(long)]
        t_min: Option<f64>,
        /// Upper end of the search domain. Defaults to T.
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Fit a Weibull model to failure times, one per line.
    FitWeibull { failures_csv: PathBuf },
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("--config is required for this command"))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Run => commands::cmd_run(&experiment(cli)?),
        Command::SweepEpsilon { epsilons } => {
            let cfg = experiment(cli)?;
            let eps = epsilons.clone().unwrap_or_else(|| cfg.epsilons.clone());
            commands::cmd_sweep_epsilon(&cfg, &eps)
        }
        Command::Compare => commands::cmd_compare(&experiment(cli)?),
        Command::CheckpointOpt {
            total_time,
            recovery_time,
            write_cost,
            lambda,
            shape,
            model,
            t_min,
            t_max,
        } => commands::cmd_checkpoint_opt(
            &CheckpointOptArgs {
                total_time: *total_time,
                recovery_time: *recovery_time,
                write_cost: *write_cost,
                lambda: *lambda,
                shape: *shape,
                model: *model,
                t_min: *t_min,
                t_max: *t_max,
            },
            cli.out.as_deref(),
        ),
        Command::FitWeibull { failures_csv } => commands::cmd_fit_weibull(failures_csv, cli.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
