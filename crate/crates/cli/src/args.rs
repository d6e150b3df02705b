//! Command-line flags and the optional TOML config that mirrors them.
//!
//! Every flag that a config file may set is an `Option` here; after parsing,
//! unset flags are filled from the matching config section. Flags given on
//! the command line always win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "carbonpp",
    version,
    about = "Radiocarbon summaries: calibration, SPDs and Poisson-process changepoint models"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CommonArgs {
    /// TOML file with per-subcommand defaults ([calibrate], [spd], [pp-fit],
    /// [summarize], [simulate], plus [common] for --curve and --out).
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Calibration curve: a path to a .14c file, or a name looked up in
    /// $CARBONPP_CURVE_DIR. Defaults to the bundled IntCal20.
    #[arg(long, global = true, value_name = "FILE|NAME")]
    pub curve: Option<String>,

    /// Output directory (created if missing).
    #[arg(long, short, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate each determination on its own; one density CSV per date.
    Calibrate(CalibrateArgs),
    /// Summed probability distribution, optionally with a bootstrap band or a
    /// Monte-Carlo null-model envelope.
    Spd(SpdArgs),
    /// Fit the changepoint Poisson-process model by reversible-jump MCMC.
    PpFit(PpFitArgs),
    /// Summarise a samples file: mean rate, credible band, changepoint
    /// histograms and an optional SVG plot.
    Summarize(SummarizeArgs),
    /// Simulate determinations from a preset or a piecewise rate file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CalibrateArgs {
    /// Determinations CSV with header id,c14_age,sigma.
    #[arg(long, value_name = "FILE")]
    pub dates: Option<PathBuf>,

    /// Most recent edge of the window, cal BP. Defaults to the distant tails
    /// of the calibrated dates.
    #[arg(long, value_name = "CALBP")]
    pub ta: Option<f64>,

    /// Oldest edge of the window, cal BP.
    #[arg(long, value_name = "CALBP")]
    pub tb: Option<f64>,

    /// Grid cell width in calendar years [default: 1].
    #[arg(long, value_name = "YEARS")]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SpdArgs {
    /// Determinations CSV with header id,c14_age,sigma.
    #[arg(long, value_name = "FILE")]
    pub dates: Option<PathBuf>,

    /// Most recent edge of the window, cal BP. Defaults to the distant tails
    /// of the calibrated dates.
    #[arg(long, value_name = "CALBP")]
    pub ta: Option<f64>,

    /// Oldest edge of the window, cal BP.
    #[arg(long, value_name = "CALBP")]
    pub tb: Option<f64>,

    /// Grid cell width in calendar years [default: 1].
    #[arg(long, value_name = "YEARS")]
    pub grid_step: Option<f64>,

    /// Number of bootstrap replicates for a pointwise band.
    #[arg(long, value_name = "B", conflicts_with = "mc_null")]
    pub bootstrap: Option<usize>,

    /// Null-model density CSV (cal_age,density) for a Monte-Carlo envelope.
    #[arg(long, value_name = "FILE")]
    pub mc_null: Option<PathBuf>,

    /// Replicates for the Monte-Carlo envelope [default: 500].
    #[arg(long, value_name = "N")]
    pub replicates: Option<usize>,

    /// Laboratory error of the simulated envelope dates [default: mean sigma
    /// of the input].
    #[arg(long, value_name = "YEARS")]
    pub sigma_obs: Option<f64>,

    /// Central probability of the band [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,

    /// Random seed; required with --bootstrap or --mc-null.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct PpFitArgs {
    /// Determinations CSV with header id,c14_age,sigma.
    #[arg(long, value_name = "FILE")]
    pub dates: Option<PathBuf>,

    /// Most recent edge of the window, cal BP. Defaults to the distant tails
    /// of the calibrated dates.
    #[arg(long, value_name = "CALBP")]
    pub ta: Option<f64>,

    /// Oldest edge of the window, cal BP.
    #[arg(long, value_name = "CALBP")]
    pub tb: Option<f64>,

    /// Grid cell width in calendar years [default: 1].
    #[arg(long, value_name = "YEARS")]
    pub grid_step: Option<f64>,

    /// Prior mean number of changepoints [default: 3].
    #[arg(long)]
    pub n_lambda: Option<f64>,

    /// Largest number of changepoints [default: 30].
    #[arg(long)]
    pub k_max: Option<usize>,

    /// Gamma shape of the heights [default: 1].
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Gamma rate of the heights [default: alpha·L/n, a prior mean of n/L].
    #[arg(long)]
    pub beta: Option<f64>,

    /// MCMC iterations [default: 100000].
    #[arg(long)]
    pub iters: Option<usize>,

    /// Burn-in iterations [default: 50000].
    #[arg(long)]
    pub burn: Option<usize>,

    /// Keep every N-th state after burn-in [default: 10].
    #[arg(long)]
    pub thin: Option<usize>,

    /// Random seed (required). Chain i of --chains uses seed + i − 1.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Independent chains, run in parallel [default: 1].
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SummarizeArgs {
    /// Samples file written by pp-fit.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,

    /// Determinations CSV, drawn as rug ticks on the plot.
    #[arg(long, value_name = "FILE")]
    pub dates: Option<PathBuf>,

    /// Summary grid step [default: the step used by the fit].
    #[arg(long, value_name = "YEARS")]
    pub grid_step: Option<f64>,

    /// Central probability of credible bands [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,

    /// Also summarise the states with exactly K changepoints.
    #[arg(long, value_name = "K")]
    pub cond_k: Option<usize>,

    /// Bin width of the changepoint location histograms [default: 5].
    #[arg(long, value_name = "YEARS")]
    pub bin_width: Option<f64>,

    /// Bins of the conditional height histograms [default: 50].
    #[arg(long)]
    pub height_bins: Option<usize>,

    /// Export this many evenly spaced rate realisations.
    #[arg(long, value_name = "N")]
    pub realisations: Option<usize>,

    /// Write an SVG panel of the mean rate, its band, the curve and the dates.
    #[arg(long, value_name = "FILE")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateArgs {
    /// uniform-phase, four-changepoint or exp-growth.
    #[arg(long, conflicts_with = "rate")]
    pub preset: Option<String>,

    /// Piecewise rate as JSON: {"t_a": .., "t_b": .., "s": [..], "h": [..]}.
    #[arg(long, value_name = "FILE")]
    pub rate: Option<PathBuf>,

    /// Number of events of the uniform-phase preset [default: 40].
    #[arg(long)]
    pub n: Option<usize>,

    /// Growth rate of the exp-growth preset [default: 0.003].
    #[arg(long)]
    pub r: Option<f64>,

    /// Laboratory standard deviation of the simulated dates [default: 25].
    #[arg(long, value_name = "YEARS")]
    pub sigma_obs: Option<f64>,

    /// Leave the curve uncertainty out of the simulated noise.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub no_curve_error: Option<bool>,

    /// Random seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigFile {
    pub common: CommonArgs,
    pub calibrate: CalibrateArgs,
    pub spd: SpdArgs,
    pub pp_fit: PpFitArgs,
    pub summarize: SummarizeArgs,
    pub simulate: SimulateArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.into(),
            msg: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}

/// Fill every unset field of `$target` from `$source`.
macro_rules! fill {
    ($target:expr, $source:expr; $($field:ident),+ $(,)?) => {
        $( if $target.$field.is_none() { $target.$field = $source.$field.clone(); } )+
    };
}

impl CommonArgs {
    pub fn fill_from(&mut self, cfg: &CommonArgs) {
        fill!(self, cfg; curve, out);
    }
}

impl CalibrateArgs {
    pub fn fill_from(&mut self, cfg: &CalibrateArgs) {
        fill!(self, cfg; dates, ta, tb, grid_step);
    }
}

impl SpdArgs {
    pub fn fill_from(&mut self, cfg: &SpdArgs) {
        fill!(self, cfg; dates, ta, tb, grid_step, bootstrap, mc_null, replicates, sigma_obs, level, seed);
    }
}

impl PpFitArgs {
    pub fn fill_from(&mut self, cfg: &PpFitArgs) {
        fill!(self, cfg; dates, ta, tb, grid_step, n_lambda, k_max, alpha, beta, iters, burn, thin, seed, chains);
    }
}

impl SummarizeArgs {
    pub fn fill_from(&mut self, cfg: &SummarizeArgs) {
        fill!(self, cfg; samples, dates, grid_step, level, cond_k, bin_width, height_bins, realisations, plot);
    }
}

impl SimulateArgs {
    pub fn fill_from(&mut self, cfg: &SimulateArgs) {
        fill!(self, cfg; preset, rate, n, r, sigma_obs, no_curve_error, seed);
    }
}

/// Apply the config file named by `--config`, if any.
pub fn apply_config(cli: &mut Cli) -> Result<()> {
    let Some(path) = cli.common.config.clone() else {
        return Ok(());
    };
    let cfg = ConfigFile::load(&path)?;
    cli.common.fill_from(&cfg.common);
    match &mut cli.command {
        Command::Calibrate(a) => a.fill_from(&cfg.calibrate),
        Command::Spd(a) => a.fill_from(&cfg.spd),
        Command::PpFit(a) => a.fill_from(&cfg.pp_fit),
        Command::Summarize(a) => a.fill_from(&cfg.summarize),
        Command::Simulate(a) => a.fill_from(&cfg.simulate),
    }
    Ok(())
}
