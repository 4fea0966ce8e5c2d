use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "matheron-enkf", version)]
#[command(about = "Exact GP regression, EnKF and LETKF on a 1D twin experiment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Posterior mean, spread and draws of every method on one instance (posterior_samples.csv).
    Demo(ExperimentArgs),
    /// Fit/predict timings against the number of observations (timing_vs_observations.csv).
    SweepObs(SweepArgs),
    /// Fit/predict timings against the state dimension (timing_vs_dimensions.csv).
    SweepDim(SweepArgs),
    /// EnKF analysis against the empirical Matheron update on random instances.
    Equivalence(EquivalenceArgs),
    /// Monte Carlo check that pathwise draws carry the conditional moments.
    MomentsCheck(MomentsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Flat key=value file with experiment settings.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Extra key=value setting, applied after the config file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Grid size.
    #[arg(long)]
    pub d: Option<usize>,

    /// Number of observations (defaults to d/5).
    #[arg(long)]
    pub m: Option<usize>,

    /// Ensemble size.
    #[arg(long)]
    pub n_ens: Option<usize>,

    #[arg(long)]
    pub sigma: Option<f64>,

    #[arg(long)]
    pub ell: Option<f64>,

    /// Observation noise standard deviation.
    #[arg(long)]
    pub tau: Option<f64>,

    /// Timed repetitions per phase (odd, at least 3).
    #[arg(long)]
    pub runs: Option<usize>,

    /// Comma separated subset of gp,enkf,letkf.
    #[arg(long)]
    pub methods: Option<String>,

    /// Perturb predicted observations in the EnKF analysis.
    #[arg(long)]
    pub perturb_obs: bool,

    /// LETKF localization radius (defaults to 2·ell).
    #[arg(long)]
    pub loc_radius: Option<f64>,

    /// Posterior draws per method.
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,

    /// Comma separated, strictly ascending sweep values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct EquivalenceArgs {
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, default_value_t = 200_000)]
    pub draws: usize,
}
