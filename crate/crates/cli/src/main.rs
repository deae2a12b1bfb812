use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rydberg_cli::{emit_plot_script, load_manifest, report, run, run_config};

#[derive(Parser)]
#[command(name = "rydberg", version, about = "STIRAP Rydberg-excitation simulations from config files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Write a matplotlib script for a result CSV.
    Plot { csv: PathBuf },
    /// Rerun the experiment recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(a) => {
            let mut overrides = a.set;
            if let Some(dir) = a.out {
                overrides.push(format!("run.output={}", dir.display()));
            }
            if let Some(seed) = a.seed {
                overrides.push(format!("run.seed={seed}"));
            }
            if let Some(f) = a.format {
                overrides.push(format!("run.format={f}"));
            }
            ExitCode::from(run(&a.config, &overrides))
        }
        Command::Plot { csv } => match emit_plot_script(&csv) {
            Ok(path) => {
                println!("wrote {}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Replay { manifest, out } => match load_manifest(&manifest, out.as_deref()).and_then(|c| run_config(&c)) {
            Ok(record) => {
                report(&record);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code())
            }
        },
    }
}
