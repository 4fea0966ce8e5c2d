//! Layered experiment settings: built-in defaults, then `MATHERON_ENKF_SEED`,
//! then the config file, then `--set` overrides, then explicit flags.

use std::path::Path;

use matheron_core::experiment::{default_m, parse_methods, ExperimentConfig};

use crate::args::ExperimentArgs;
use crate::error::CliError;

pub const SEED_ENV: &str = "MATHERON_ENKF_SEED";

/// Settings under construction. `m` stays unset until something names it,
/// so that it can follow the final `d`.
#[derive(Debug, Clone)]
pub struct Layers {
    cfg: ExperimentConfig,
    m: Option<usize>,
}

impl Layers {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Layers { cfg, m: None }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn finish(mut self) -> ExperimentConfig {
        self.cfg.m = self.m.unwrap_or_else(|| default_m(self.cfg.d));
        self.cfg
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let cfg = &mut self.cfg;
        match key.as_str() {
            "d" => cfg.d = parse(&key, value)?,
            "m" => self.m = Some(parse(&key, value)?),
            "sigma" => cfg.sigma = parse(&key, value)?,
            "ell" => cfg.ell = parse(&key, value)?,
            "tau" => cfg.tau = parse(&key, value)?,
            "n_ens" | "N" => cfg.n_ens = parse(&key, value)?,
            "seed" => cfg.seed = parse(&key, value)?,
            "runs" => cfg.runs = parse(&key, value)?,
            "warmup" => cfg.warmup = parse(&key, value)?,
            "methods" => cfg.methods = parse_methods(value).map_err(|e| CliError::Usage(e.to_string()))?,
            "perturb_obs" => cfg.perturb_obs = parse_bool(&key, value)?,
            "loc_radius" => cfg.loc_radius = Some(parse(&key, value)?),
            "taper" => cfg.taper = value.parse().map_err(|e: matheron_core::Error| CliError::Usage(e.to_string()))?,
            "inflation" => cfg.inflation = parse(&key, value)?,
            "draws" => cfg.draws = parse(&key, value)?,
            "sites" => cfg.sites = value.parse().map_err(|e: matheron_core::Error| CliError::Usage(e.to_string()))?,
            _ => return Err(CliError::Usage(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    pub fn apply_env_seed(&mut self, value: Option<String>) -> Result<(), CliError> {
        if let Some(v) = value {
            self.cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (line_no, key, value) in parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))? {
            self.set(&key, &value)
                .map_err(|e| CliError::Usage(format!("{}:{line_no}: {e}", path.display())))?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override '{item}' is not KEY=VALUE")))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, args: &ExperimentArgs) -> Result<(), CliError> {
        let cfg = &mut self.cfg;
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        if let Some(v) = args.d {
            cfg.d = v;
        }
        if let Some(v) = args.m {
            self.m = Some(v);
        }
        if let Some(v) = args.n_ens {
            cfg.n_ens = v;
        }
        if let Some(v) = args.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = args.ell {
            cfg.ell = v;
        }
        if let Some(v) = args.tau {
            cfg.tau = v;
        }
        if let Some(v) = args.runs {
            cfg.runs = v;
        }
        if let Some(v) = &args.methods {
            cfg.methods = parse_methods(v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if args.perturb_obs {
            cfg.perturb_obs = true;
        }
        if let Some(v) = args.loc_radius {
            cfg.loc_radius = Some(v);
        }
        if let Some(v) = args.draws {
            cfg.draws = v;
        }
        Ok(())
    }
}

/// Every layer in order, then validation.
pub fn resolve(base: Layers, args: &ExperimentArgs, env_seed: Option<String>) -> Result<ExperimentConfig, CliError> {
    let cfg = resolve_unchecked(base, args, env_seed)?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn resolve_unchecked(base: Layers, args: &ExperimentArgs, env_seed: Option<String>) -> Result<ExperimentConfig, CliError> {
    let mut layers = base;
    layers.apply_env_seed(env_seed)?;
    if let Some(path) = &args.config {
        layers.apply_file(path)?;
    }
    layers.apply_overrides(&args.overrides)?;
    layers.apply_flags(args)?;
    Ok(layers.finish())
}

/// Seed for the check subcommands: flag, then environment, then 0.
pub fn check_seed(flag: Option<u64>, env_seed: Option<String>) -> Result<u64, CliError> {
    let mut layers = Layers::new(ExperimentConfig {
        seed: 0,
        ..ExperimentConfig::default()
    });
    layers.apply_env_seed(env_seed)?;
    Ok(flag.unwrap_or(layers.cfg.seed))
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(usize, String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got '{raw}'", i + 1))?;
        if key.trim().is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((i + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean '{value}' for '{key}'"))),
    }
}
