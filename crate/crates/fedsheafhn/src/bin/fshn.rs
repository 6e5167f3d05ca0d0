//! Thin command-line front end over the library runner.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsheafhn::config::{parse_config, Method};
use fedsheafhn::runner;

#[derive(Parser)]
#[command(name = "fshn", about = "Personalized subgraph federated learning with sheaf collaboration", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write metrics, summary and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's method (fedsheafhn | local | fedavg | ablation:VARIANT).
        #[arg(long)]
        method: Option<String>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate held-out clients against a trained checkpoint.
    NewClients {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract round-vs-federated-accuracy columns from metrics files.
    EmitConvergence {
        /// Input metrics.csv paths (comma separated).
        #[arg(long = "in", value_delimiter = ',')]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Print without panicking when stdout is a closed pipe (e.g. `| head`).
fn say(line: String) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn run(cli: Cli) -> fedsheafhn::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            method,
            out,
            resume,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(m) = method {
                cfg.method = Method::parse(&m).ok_or_else(|| {
                    fedsheafhn::Error::config("method", format!("unknown method `{m}`"))
                })?;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let output = match resume {
                None => runner::execute(&cfg)?,
                Some(ckpt) => runner::resume(&cfg, &ckpt)?,
            };
            if let Some(last) = output.reports.last() {
                say(format!(
                    "method={} rounds={} federated_accuracy={:.4} std={:.4}",
                    cfg.method.name(),
                    output.reports.len(),
                    last.federated_accuracy,
                    last.accuracy_std
                ));
            }
            say(format!("metrics: {}", output.metrics_path.display()));
            Ok(())
        }
        Command::NewClients {
            checkpoint,
            config,
            out,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let report = runner::new_clients(&cfg, &checkpoint)?;
            say(format!(
                "trained_mean={:.4} new_mean={:.4} new_clients={}",
                report.trained_mean_accuracy,
                report.new_mean_accuracy,
                report.per_new_client_accuracy.len()
            ));
            Ok(())
        }
        Command::EmitConvergence { inputs, out } => {
            runner::emit_convergence_files(&inputs, &out)?;
            say(format!("wrote {}", out.display()));
            Ok(())
        }
    }
}
