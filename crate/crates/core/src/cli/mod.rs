//! The `mtdlnm` command line: `fit`, `simulate` and `summarize`.

mod commands;
mod input;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::OutcomeFamily;
use crate::error::{Error, Result};
use crate::inference::IntervalStyle;
use crate::simstudy::{FlKind, FxKind};

pub use commands::{cmd_fit, cmd_simulate, cmd_summarize};
pub use input::{parse_grid_l, parse_grid_x, read_dataset, read_exposure_library, InputOptions};
pub use output::{read_draws, write_draws, RunManifest, DIAGNOSTICS_SCHEMA, SURFACE_SCHEMA, SUSCEPTIBILITY_SCHEMA};

#[derive(Debug, Parser)]
#[command(name = "mtdlnm", version, about = "Monotone treed distributed lag nonlinear models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a CSV of outcomes and daily exposures.
    Fit(FitArgs),
    /// Run simulation replicates and score them against the truth.
    Simulate(SimulateArgs),
    /// Re-summarize stored draws without refitting.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for OutcomeFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => OutcomeFamily::Gaussian,
            FamilyArg::Binomial => OutcomeFamily::Binomial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Central,
    Upper,
}

impl From<StyleArg> for IntervalStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Central => IntervalStyle::Central,
            StyleArg::Upper => IntervalStyle::UpperOneSided,
        }
    }
}

/// Sampler settings shared by `fit` and `simulate`; each overrides the
/// config file when given.
#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    /// JSON model configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Worker threads; defaults to one per chain.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Posterior summary options shared by `fit` and `summarize`.
#[derive(Debug, Clone, Args)]
pub struct SummaryArgs {
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Added to each side of the credible band.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = StyleArg::Central)]
    pub style: StyleArg,
    /// Susceptibility probability needed to declare a lag.
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
    /// Report 100(exp(w) - 1) instead of w.
    #[arg(long = "percent-change")]
    pub percent_change: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV with columns time, outcome, exposure, optional trials, then covariates.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub summary: SummaryArgs,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Maximum lag L.
    #[arg(long)]
    pub lags: Option<usize>,
    /// Model the negated exposure (decreasing effects, e.g. cold).
    #[arg(long = "negate-exposure")]
    pub negate_exposure: bool,
    /// Add month-by-year and day-of-week intercepts from the time column.
    #[arg(long = "calendar-covariates")]
    pub calendar_covariates: bool,
    /// Exposure grid: `start:stop:step` or a comma list.
    #[arg(long = "grid-x")]
    pub grid_x: Option<String>,
    /// Lag grid: `start:stop` or a comma list.
    #[arg(long = "grid-l")]
    pub grid_l: Option<String>,
    /// Also write every retained draw under `out/draws`.
    #[arg(long = "write-draws")]
    pub write_draws: bool,
    /// Median R-hat above this prints a warning.
    #[arg(long = "rhat-threshold", default_value_t = 1.1)]
    pub rhat_threshold: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', default_value = "linear")]
    pub fx: Vec<FxKind>,
    #[arg(long, value_delimiter = ',', default_value = "piecewise")]
    pub fl: Vec<FlKind>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub noise: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub lags: usize,
    /// Single-column CSV of daily exposures; a synthetic series otherwise.
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Informative selection and split-location priors for the true lags.
    #[arg(long)]
    pub informative: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    /// Directory written by `fit --write-draws`.
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub summary: SummaryArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Summarize(args) => cmd_summarize(&args),
    }
}

/// 2 for numerical failures, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_two() {
        let numeric = Error::Numerical {
            iteration: 4,
            message: "non-finite sigma".into(),
        };
        assert_eq!(exit_code(&numeric), 2);
        assert_eq!(exit_code(&Error::Decomposition("chol".into())), 2);
        assert_eq!(exit_code(&Error::Schema("bad header".into())), 1);
        assert_eq!(exit_code(&Error::Config("unknown key".into())), 1);
        assert_eq!(exit_code(&Error::EmptyDataset), 1);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "mtdlnm", "fit", "--data", "d.csv", "--out", "o", "--family", "binomial", "--thin", "3", "--style", "upper",
        ])
        .unwrap();
        let Command::Fit(f) = cli.command else { panic!() };
        assert_eq!(f.chain.thin, Some(3));
        assert!(matches!(f.summary.style, StyleArg::Upper));
        assert!(
            Cli::try_parse_from(["mtdlnm", "fit", "--data", "d.csv", "--out", "o", "--family", "poisson"]).is_err()
        );
    }
}
