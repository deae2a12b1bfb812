//! Configuration-driven front end for the `rydberg-core` simulations.

pub mod config;
pub mod plot;
pub mod runner;

use std::path::Path;

pub use config::{ConfigError, ExperimentKind, OutputFormat, RawConfig, RunConfig};
pub use plot::{emit_plot_script, PlotError};
pub use runner::{execute, load_config, load_manifest, run_config, Manifest, RunError, RunRecord};

/// Loads, runs and records a configuration. Exit status 0 on success, 2 on
/// configuration errors (nothing is written), 3 on numerical failure.
pub fn run(config: &Path, overrides: &[String]) -> u8 {
    match load_config(config, overrides).map_err(RunError::from).and_then(|cfg| run_config(&cfg)) {
        Ok(record) => {
            report(&record);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Prints the summary and the written files.
pub fn report(record: &RunRecord) {
    for (k, v) in &record.summary {
        println!("{k} = {v}");
    }
    for p in &record.outputs {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", record.manifest.display());
}
