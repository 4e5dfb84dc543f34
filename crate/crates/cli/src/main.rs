use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use kalman_drift_cli::commands::{self, CliError, LearnerChoice, RunArgs};

#[derive(Parser)]
#[command(name = "kalman-drift", version, about = "Kalman-filter weight modifier under concept drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sequential-task experiment and write metrics, summary and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the four MNIST IDX files (optionally gzipped).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = LearnerChoice::Both)]
        learner: LearnerChoice,
        /// Override a config key, e.g. `--set eval_every=100`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Validate a config file and print the resolved settings.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the built-in property checks.
    Selftest,
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            config,
            data,
            out,
            seed,
            learner,
            overrides,
        } => {
            let args = RunArgs {
                config,
                data,
                out,
                seed,
                learner,
                overrides,
            };
            let outputs = commands::run(&args).with_context(|| format!("run into {}", args.out.display()))?;
            for s in &outputs.report.summary {
                println!(
                    "{:<12} pretrain test accuracy drop {:.4}",
                    s.learner.as_str(),
                    s.pretrain_test_drop
                );
            }
            println!("wrote {}", args.out.display());
        }
        Command::Check { config, overrides } => {
            print!("{}", commands::check(&config, &overrides)?);
        }
        Command::Selftest => {
            let results = commands::selftest();
            for r in &results {
                println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if !failed.is_empty() {
                bail!("failed: {}", failed.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e:#}");
            // property failures and anything unclassified exit 1
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
