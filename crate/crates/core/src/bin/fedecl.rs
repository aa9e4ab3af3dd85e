use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedecl::config::ExperimentConfig;
use fedecl::ecl::ScalingScheme;
use fedecl::pipeline::{cmd_eval, cmd_partition, cmd_report, cmd_train};
use fedecl::Error;

/// Federated long-tail learning with per-client experts.
#[derive(Debug, Parser)]
#[command(name = "fedecl", version)]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set phase2.lambda=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, env = "FEDECL_OUTPUT_DIR", global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shape and partition the data; write partition.csv and imbalance.csv.
    Partition,
    /// Run FedAvg, per-client personalization and baselines; write checkpoints.
    Train,
    /// Evaluate stored checkpoints; write metrics.csv and summary.json.
    Eval {
        /// Extra λ values to evaluate without retraining.
        #[arg(long, value_delimiter = ',')]
        lambda_sweep: Vec<f64>,
        /// Extra scaling schemes to evaluate.
        #[arg(long, value_delimiter = ',', value_parser = parse_scaling)]
        scaling_sweep: Vec<ScalingScheme>,
    },
    /// Rebuild summary.json from metrics.csv.
    Report,
}

fn parse_scaling(s: &str) -> Result<ScalingScheme, String> {
    match s {
        "ecl_scaling" => Ok(ScalingScheme::EclScaling),
        "ecl_scaling_matrix" => Ok(ScalingScheme::EclScalingMatrix),
        "no_scaling" => Ok(ScalingScheme::NoScaling),
        _ => Err(format!(
            "unknown scaling `{s}` (ecl_scaling, ecl_scaling_matrix, no_scaling)"
        )),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    let out = cfg.output.dir.clone();
    match cli.command {
        Command::Partition => {
            cmd_partition(&cfg, &out)?;
        }
        Command::Train => {
            cmd_train(&cfg, &out)?;
        }
        Command::Eval {
            lambda_sweep,
            scaling_sweep,
        } => {
            cfg.eval.lambda_sweep.extend(lambda_sweep);
            cfg.eval.scaling_sweep.extend(scaling_sweep);
            cfg.validate()?;
            cmd_eval(&cfg, &out)?;
        }
        Command::Report => cmd_report(&out)?,
    }
    eprintln!("wrote results to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidArgument(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
