//! `longmix`: command-line front end for the repeated-measures pipeline.
//!
//! Subcommands cover the whole workflow: `explore` (profiles and empirical
//! covariance), `fit` (mixed-model estimation), `stratify` (separate fits
//! per smoking stratum with coefficient differences), `diagnose` (residual
//! diagnostics of a fit), `compare` (mixed model next to the classical
//! paired t-test and factorial ANOVA), `simulate` (write one synthetic
//! dataset), and `study` (parameter-recovery study over many replicates).
//!
//! Every run writes its reports into `--out` and finishes with a
//! `manifest.json` naming exactly the files produced. Messages go to
//! standard error only. Exit codes: 0 success, 2 validation error, 3
//! convergence failure.

mod pipeline;

use clap::{Parser, Subcommand};
use pipeline::{run, CommonArgs};

#[derive(Parser)]
#[command(name = "longmix", version, about = "Repeated-measures modeling pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean/sd profiles, empirical covariance and correlation, scatter data.
    Explore(CommonArgs),
    /// Estimate the mixed model and write the fit report.
    Fit(CommonArgs),
    /// Fit each smoking stratum separately and contrast the coefficients.
    Stratify(CommonArgs),
    /// Fit, then write residual and random-effect diagnostics.
    Diagnose(CommonArgs),
    /// Mixed model alongside the paired t-test and factorial ANOVA.
    Compare(CommonArgs),
    /// Generate one synthetic dataset from a simulation config.
    Simulate(CommonArgs),
    /// Parameter-recovery study across simulated replicates.
    Study(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Explore(a) => ("explore", a),
        Command::Fit(a) => ("fit", a),
        Command::Stratify(a) => ("stratify", a),
        Command::Diagnose(a) => ("diagnose", a),
        Command::Compare(a) => ("compare", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Study(a) => ("study", a),
    };
    if let Err(err) = run(name, args) {
        eprintln!("error[{}]: {}", err.code(), err);
        std::process::exit(err.exit_code());
    }
}
