//! Batch harness for the correlation-witness simulator: configuration,
//! subcommands, SVG plots and exit-code mapping.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{Overrides, Session};
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "qwitness",
    version,
    about = "Local detection of system-environment correlations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Δ(η, τ) curve, witness maximum and total correlation for one crystal.
    Witness(CommonArgs),
    /// The 8 × 24 η–τ table of the standard delay sweep.
    Fig3(CommonArgs),
    /// Witness versus crystal length with both theory overlays.
    Fig4(CommonArgs),
    /// Fit the visibility envelope for the inverse linewidth.
    FitLinewidth(CommonArgs),
    /// Simulated three-setting polarization tomography.
    TomographyDemo(CommonArgs),
    /// Dense-matrix versus block-diagonal equivalence checks.
    OracleCheck(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file; defaults to the built-in lab setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `[protocol] seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of frequency bins (overrides `[grid] n_bins`).
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Use the exact eigenbasis instead of simulated tomography.
    #[arg(long)]
    pub exact_tomography: bool,
    #[arg(long, hide = true, default_value_t = 1.0)]
    pub tolerance_scale: f64,
}

impl CommonArgs {
    fn session(&self) -> Result<Session, CliError> {
        Session::load(
            self.config.as_deref(),
            Overrides {
                out: self.out.clone(),
                seed: self.seed,
                grid_n: self.grid_n,
                exact_tomography: self.exact_tomography,
                tolerance_scale: self.tolerance_scale,
            },
        )
    }
}

/// Executes a parsed command line and returns the written artifact names.
pub fn execute(cli: &Cli) -> Result<Vec<String>, CliError> {
    use commands::*;
    match &cli.command {
        Command::Witness(a) => run_witness(&a.session()?),
        Command::Fig3(a) => run_fig3(&a.session()?),
        Command::Fig4(a) => run_fig4(&a.session()?),
        Command::FitLinewidth(a) => run_fit_linewidth(&a.session()?),
        Command::TomographyDemo(a) => run_tomography_demo(&a.session()?),
        Command::OracleCheck(a) => run_oracle_check(&a.session()?),
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {f}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
