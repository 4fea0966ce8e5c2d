use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use matheron_core::checks::{self, EQUIVALENCE_TOLERANCE, MOMENT_COV_RELATIVE, MOMENT_MEAN_STANDARD_ERRORS};
use matheron_core::experiment::{run_method_on, sweep, ExperimentConfig, SweepAxis, TwinInstance};

use crate::args::{EquivalenceArgs, ExperimentArgs, MomentsArgs, SweepArgs};
use crate::csv;
use crate::error::CliError;
use crate::settings::{check_seed, resolve, resolve_unchecked, Layers, SEED_ENV};

pub const POSTERIOR_FILE: &str = "posterior_samples.csv";
pub const OBS_SWEEP_FILE: &str = "timing_vs_observations.csv";
pub const DIM_SWEEP_FILE: &str = "timing_vs_dimensions.csv";

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn output_path(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

pub fn demo(args: &ExperimentArgs) -> Result<(), CliError> {
    let cfg = resolve(Layers::new(ExperimentConfig::default()), args, env_seed())?;
    let path = output_path(&args.out_dir, POSTERIOR_FILE)?;
    let instance = TwinInstance::generate(&cfg)?;
    let mut runs = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let run = run_method_on(method, &instance, &cfg)?;
        println!(
            "{method}: rmse {:.6} fit {:.3e} s predict {:.3e} s",
            run.rmse, run.fit_time_s, run.predict_time_s
        );
        runs.push(run);
    }
    let mut out = BufWriter::new(File::create(&path)?);
    csv::write_posterior(&mut out, &instance, &runs)?;
    out.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn sweep_obs(args: &SweepArgs) -> Result<(), CliError> {
    let base = Layers::new(ExperimentConfig {
        d: 800,
        ..ExperimentConfig::default()
    });
    run_sweep(SweepAxis::Observations, base, &[40, 80, 160, 320], args, OBS_SWEEP_FILE)
}

pub fn sweep_dim(args: &SweepArgs) -> Result<(), CliError> {
    let base = Layers::new(ExperimentConfig::default()).with_m(40);
    run_sweep(SweepAxis::Dimensions, base, &[200, 400, 600, 800], args, DIM_SWEEP_FILE)
}

fn run_sweep(axis: SweepAxis, base: Layers, defaults: &[usize], args: &SweepArgs, file: &str) -> Result<(), CliError> {
    let cfg = resolve_unchecked(base, &args.experiment, env_seed())?;
    let values = args.values.clone().unwrap_or_else(|| defaults.to_vec());
    if values.is_empty() || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("--values must be non-empty and strictly ascending".into()));
    }
    // Reject a bad configuration before any output exists; later points are checked by the sweep.
    let mut first = cfg.clone();
    match axis {
        SweepAxis::Observations => first.m = values[0],
        SweepAxis::Dimensions => first.d = values[0],
    }
    first.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let path = output_path(&args.experiment.out_dir, file)?;
    let mut out = BufWriter::new(File::create(&path)?);
    csv::write_timing_header(&mut out)?;
    out.flush()?;
    let mut io_error = None;
    let result = sweep(axis, &values, &cfg, |record| {
        println!(
            "{} {}={} fit {:.3e} s predict {:.3e} s rmse {:.6}",
            record.method,
            axis.as_str(),
            record.axis_value,
            record.fit_time_s,
            record.predict_time_s,
            record.rmse
        );
        if let Err(e) = csv::write_timing_row(&mut out, record).and_then(|_| out.flush()) {
            io_error = Some(e);
            return Err(matheron_core::Error::InvalidArgument("output write failed".into()));
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    result?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn equivalence(args: &EquivalenceArgs) -> Result<(), CliError> {
    let seed = check_seed(args.seed, env_seed())?;
    if args.instances == 0 {
        return Err(CliError::Usage("--instances must be >= 1".into()));
    }
    let summary = checks::equivalence_check(seed, args.instances)?;
    println!(
        "max relative difference {:e} over {} instances (seed {seed}, tolerance {EQUIVALENCE_TOLERANCE:e})",
        summary.max_rel_diff, summary.instances
    );
    if summary.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "{:e} exceeds {EQUIVALENCE_TOLERANCE:e}",
            summary.max_rel_diff
        )))
    }
}

pub fn moments_check(args: &MomentsArgs) -> Result<(), CliError> {
    let seed = check_seed(args.seed, env_seed())?;
    if args.draws < 2 {
        return Err(CliError::Usage("--draws must be >= 2".into()));
    }
    let s = checks::moment_check(seed, args.draws)?;
    println!(
        "{} draws (seed {seed}): mean error {:.3} standard errors (tolerance {MOMENT_MEAN_STANDARD_ERRORS}), \
         covariance relative error {:.4} (tolerance {MOMENT_COV_RELATIVE})",
        s.draws, s.max_mean_z, s.cov_rel_error
    );
    if s.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed("sample moments outside tolerance".into()))
    }
}
