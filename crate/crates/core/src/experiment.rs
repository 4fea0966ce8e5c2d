//! Twin-experiment benchmark: synthetic truth from the SE prior, noisy point
//! observations, the three solvers run on identical data, RMSE and
//! median-of-runs timings, and sweeps over `m` or `d`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{enkf_analysis, EnkfConfig, Ensemble};
use crate::error::{Error, Result};
use crate::gaussian::{LinearObservation, ObservationOperator};
use crate::kriging::{GpFit, KernelParams, KrigingProblem, PriorModel};
use crate::letkf::{letkf_analysis, GridGeometry, LocalizationConfig, Taper};
use crate::rng::{standard_normal_matrix, SeedTree, Stream};
use crate::stats::{median, rmse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Gp,
    Enkf,
    Letkf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gp, Method::Enkf, Method::Letkf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::Enkf => "enkf",
            Method::Letkf => "letkf",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Method::Gp => 0,
            Method::Enkf => 1,
            Method::Letkf => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gp" => Ok(Method::Gp),
            "enkf" => Ok(Method::Enkf),
            "letkf" => Ok(Method::Letkf),
            other => Err(Error::invalid(format!("unknown method '{other}' (expected gp, enkf or letkf)"))),
        }
    }
}

/// Parses a comma separated method list, keeping first-seen order and dropping repeats.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("method list is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Observations,
    Dimensions,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Observations => "observations",
            SweepAxis::Dimensions => "dimensions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteLayout {
    /// `idx_j = floor((j + 1/2) d / m)`
    Even,
    /// `m` distinct indices drawn uniformly, then sorted.
    Random,
}

impl FromStr for SiteLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(SiteLayout::Even),
            "random" => Ok(SiteLayout::Random),
            other => Err(Error::invalid(format!("unknown site layout '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    pub m: usize,
    pub sigma: f64,
    pub ell: f64,
    pub tau: f64,
    pub n_ens: usize,
    pub seed: u64,
    pub runs: usize,
    pub warmup: usize,
    pub methods: Vec<Method>,
    pub perturb_obs: bool,
    /// `None` means twice the kernel length-scale.
    pub loc_radius: Option<f64>,
    pub taper: Taper,
    pub inflation: f64,
    /// Posterior draws reported per method.
    pub draws: usize,
    pub sites: SiteLayout,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 200,
            m: default_m(200),
            sigma: 1.0,
            ell: 0.2,
            tau: 0.2,
            n_ens: 400,
            seed: 0,
            runs: 5,
            warmup: 1,
            methods: Method::ALL.to_vec(),
            perturb_obs: false,
            loc_radius: None,
            taper: Taper::GaspariCohn,
            inflation: 1.0,
            draws: 5,
            sites: SiteLayout::Even,
        }
    }
}

pub fn default_m(d: usize) -> usize {
    (d / 5).max(1)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 10 {
            return Err(Error::invalid(format!("d must be >= 10, got {}", self.d)));
        }
        if self.m < 1 || self.m > self.d {
            return Err(Error::invalid(format!("m must lie in [1, d={}], got {}", self.d, self.m)));
        }
        if self.n_ens < 2 {
            return Err(Error::invalid(format!("ensemble size must be >= 2, got {}", self.n_ens)));
        }
        if self.runs < 3 || self.runs % 2 == 0 {
            return Err(Error::invalid(format!("runs must be odd and >= 3, got {}", self.runs)));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.draws > self.n_ens {
            return Err(Error::invalid(format!(
                "draws ({}) cannot exceed the ensemble size ({})",
                self.draws, self.n_ens
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        self.kernel()?;
        self.localization()?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelParams> {
        KernelParams::new(self.sigma, self.ell)
    }

    pub fn localization(&self) -> Result<LocalizationConfig> {
        LocalizationConfig::new(self.loc_radius.unwrap_or(2.0 * self.ell), self.taper)?.with_inflation(self.inflation)
    }

    pub fn enkf(&self) -> EnkfConfig {
        EnkfConfig {
            rho: self.tau,
            perturb_observations: self.perturb_obs,
            ..EnkfConfig::default()
        }
    }
}

pub fn observation_sites<R: rand::Rng + ?Sized>(d: usize, m: usize, layout: SiteLayout, rng: &mut R) -> Result<Vec<usize>> {
    if m > d {
        return Err(Error::invalid(format!("cannot place {m} sites on {d} grid points")));
    }
    Ok(match layout {
        SiteLayout::Even => (0..m).map(|j| ((j as f64 + 0.5) * d as f64 / m as f64) as usize).collect(),
        SiteLayout::Random => {
            let mut idx = rand::seq::index::sample(rng, d, m).into_vec();
            idx.sort_unstable();
            idx
        }
    })
}

/// One seeded problem instance shared by every method.
#[derive(Debug, Clone)]
pub struct TwinInstance {
    prior: Arc<PriorModel>,
    grid: GridGeometry,
    truth: DVector<f64>,
    y_star: DVector<f64>,
    tau: f64,
    seeds: SeedTree,
}

impl TwinInstance {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = GridGeometry::unit(cfg.d, Vec::new())?;
        let prior = PriorModel::new(grid.positions().to_vec(), cfg.kernel()?)?;
        Self::with_prior(Arc::new(prior), cfg)
    }

    /// Reuses a prior built for the same `d`, `σ` and `ℓ`.
    pub fn with_prior(prior: Arc<PriorModel>, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if prior.dim() != cfg.d || *prior.params() != cfg.kernel()? {
            return Err(Error::invalid("cached prior does not match the configuration"));
        }
        let seeds = SeedTree::new(cfg.seed);
        let sites = observation_sites(cfg.d, cfg.m, cfg.sites, &mut seeds.stream(Stream::ObservationSites))?;
        let grid = GridGeometry::new(prior.positions().to_vec(), sites)?;
        let truth: DVector<f64> = prior.sampler().draw(1, &mut seeds.stream(Stream::Truth))?.column(0).into();
        let noise = standard_normal_matrix(cfg.m, 1, &mut seeds.stream(Stream::ObservationNoise));
        let y_star = DVector::from_fn(cfg.m, |j, _| truth[grid.obs_indices()[j]] + cfg.tau * noise[(j, 0)]);
        Ok(TwinInstance {
            prior,
            grid,
            truth,
            y_star,
            tau: cfg.tau,
            seeds,
        })
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn grid(&self) -> &GridGeometry {
        &self.grid
    }

    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    pub fn y_star(&self) -> &DVector<f64> {
        &self.y_star
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn seed(&self) -> u64 {
        self.seeds.root()
    }

    pub fn problem(&self) -> KrigingProblem {
        KrigingProblem {
            grid: self.grid.clone(),
            params: *self.prior.params(),
            tau: self.tau,
            truth: self.truth.clone(),
            y_star: self.y_star.clone(),
        }
    }

    pub fn observation(&self) -> Result<LinearObservation> {
        let op = ObservationOperator::selection(self.grid.obs_indices().to_vec(), self.grid.dim())?;
        LinearObservation::new(op, self.tau, self.y_star.clone())
    }

    /// `n` prior members drawn from the method's own stream.
    pub fn prior_ensemble(&self, method: Method, n: usize) -> Result<Ensemble> {
        let mut rng = self.seeds.stream(Stream::Ensemble(method.stream_id()));
        Ensemble::new(self.prior.sampler().draw(n, &mut rng)?)
    }

    fn stream(&self, stream: Stream) -> crate::rng::StreamRng {
        self.seeds.stream(stream)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub method: Method,
    pub axis: SweepAxis,
    pub axis_value: usize,
    pub fit_time_s: f64,
    pub predict_time_s: f64,
    pub rmse: f64,
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    /// `d × draws`
    pub draws: DMatrix<f64>,
    pub fit_time_s: f64,
    pub predict_time_s: f64,
    pub rmse: f64,
    pub runs: usize,
    pub seed: u64,
}

impl MethodRun {
    pub fn record(&self, axis: SweepAxis, axis_value: usize) -> TimingRecord {
        TimingRecord {
            method: self.method,
            axis,
            axis_value,
            fit_time_s: self.fit_time_s,
            predict_time_s: self.predict_time_s,
            rmse: self.rmse,
            runs: self.runs,
            seed: self.seed,
        }
    }
}

/// Runs `f` `warmup` times untimed, then `runs` times timed; returns the last
/// output and the median wall time in seconds.
pub fn time_median<T>(runs: usize, warmup: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    if runs == 0 {
        return Err(Error::invalid("runs must be >= 1"));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    let out = last.expect("runs >= 1");
    Ok((out, median(&times).expect("runs >= 1")))
}

pub fn run_method(method: Method, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let instance = TwinInstance::generate(cfg)?;
    run_method_on(method, &instance, cfg)
}

pub fn run_method_on(method: Method, instance: &TwinInstance, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let annotate = |e: Error| Error::Method {
        method: method.as_str(),
        source: Box::new(e),
    };
    match method {
        Method::Gp => run_gp(instance, cfg).map_err(annotate),
        Method::Enkf | Method::Letkf => {
            let prior = instance.prior_ensemble(method, cfg.n_ens).map_err(annotate)?;
            run_ensemble_method(method, instance, cfg, prior)
        }
    }
}

/// Ensemble methods starting from a caller-supplied prior ensemble.
pub fn run_ensemble_method(
    method: Method,
    instance: &TwinInstance,
    cfg: &ExperimentConfig,
    prior: Ensemble,
) -> Result<MethodRun> {
    let annotate = |e: Error| Error::Method {
        method: method.as_str(),
        source: Box::new(e),
    };
    run_ensemble_inner(method, instance, cfg, prior).map_err(annotate)
}

fn run_gp(instance: &TwinInstance, cfg: &ExperimentConfig) -> Result<MethodRun> {
    let prior = instance.prior();
    let sites = instance.grid().obs_indices();
    let (fit, fit_time_s) =
        time_median(cfg.runs, cfg.warmup, || GpFit::fit(prior, sites, instance.tau(), instance.y_star()))?;
    let (pred, predict_time_s) = time_median(cfg.runs, cfg.warmup, || {
        fit.predict(prior, cfg.draws, &mut instance.stream(Stream::Draws(Method::Gp.stream_id())))
    })?;
    finish(Method::Gp, instance, cfg, pred.mean, pred.std, pred.draws, fit_time_s, predict_time_s)
}

fn run_ensemble_inner(method: Method, instance: &TwinInstance, cfg: &ExperimentConfig, prior: Ensemble) -> Result<MethodRun> {
    if prior.dim() != instance.grid().dim() {
        return Err(Error::dims("prior ensemble dimension", instance.grid().dim(), prior.dim()));
    }
    if cfg.draws > prior.size() {
        return Err(Error::invalid(format!("{} draws requested from {} members", cfg.draws, prior.size())));
    }
    let (post, fit_time_s) = match method {
        Method::Enkf => {
            let obs = instance.observation()?;
            let enkf = cfg.enkf();
            time_median(cfg.runs, cfg.warmup, || {
                let mut rng = instance.stream(Stream::Perturbation(method.stream_id()));
                enkf_analysis(&prior, &obs, &enkf, &mut rng)
            })?
        }
        Method::Letkf => {
            let loc = cfg.localization()?;
            time_median(cfg.runs, cfg.warmup, || {
                letkf_analysis(&prior, instance.grid(), instance.y_star(), instance.tau(), &loc)
            })?
        }
        Method::Gp => return Err(Error::invalid("gp is not an ensemble method")),
    };
    let ((mean, std, draws), predict_time_s) = time_median(cfg.runs, cfg.warmup, || {
        Ok((post.mean(), post.std_devs(), post.members().columns(0, cfg.draws).into_owned()))
    })?;
    finish(method, instance, cfg, mean, std, draws, fit_time_s, predict_time_s)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    method: Method,
    instance: &TwinInstance,
    cfg: &ExperimentConfig,
    mean: DVector<f64>,
    std: DVector<f64>,
    draws: DMatrix<f64>,
    fit_time_s: f64,
    predict_time_s: f64,
) -> Result<MethodRun> {
    let rmse = rmse(&mean, instance.truth())?;
    Ok(MethodRun {
        method,
        mean,
        std,
        draws,
        fit_time_s,
        predict_time_s,
        rmse,
        runs: cfg.runs,
        seed: instance.seed(),
    })
}

/// One record per `(value, method)`. Each record is handed to `sink` as soon
/// as it exists, so a failure part-way leaves the earlier records delivered.
pub fn sweep(
    axis: SweepAxis,
    values: &[usize],
    cfg: &ExperimentConfig,
    mut sink: impl FnMut(&TimingRecord) -> Result<()>,
) -> Result<Vec<TimingRecord>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep values must be non-empty"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sweep values must be strictly ascending"));
    }
    let mut records = Vec::with_capacity(values.len() * cfg.methods.len());
    let mut shared_prior: Option<Arc<PriorModel>> = None;
    for &value in values {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::Observations => point.m = value,
            SweepAxis::Dimensions => point.d = value,
        }
        point.validate()?;
        let instance = match axis {
            SweepAxis::Observations => {
                let prior = match &shared_prior {
                    Some(p) => Arc::clone(p),
                    None => {
                        let grid = GridGeometry::unit(point.d, Vec::new())?;
                        let p = Arc::new(PriorModel::new(grid.positions().to_vec(), point.kernel()?)?);
                        shared_prior = Some(Arc::clone(&p));
                        p
                    }
                };
                TwinInstance::with_prior(prior, &point)?
            }
            SweepAxis::Dimensions => TwinInstance::generate(&point)?,
        };
        for &method in &point.methods {
            let record = run_method_on(method, &instance, &point)?.record(axis, value);
            sink(&record)?;
            records.push(record);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            d: 40,
            m: 8,
            n_ens: 30,
            runs: 3,
            warmup: 0,
            draws: 2,
            seed: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = small();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.d = 9));
        assert!(bad(|c| c.m = 0));
        assert!(bad(|c| c.m = 41));
        assert!(bad(|c| c.n_ens = 1));
        assert!(bad(|c| c.runs = 4));
        assert!(bad(|c| c.runs = 1));
        assert!(bad(|c| c.methods.clear()));
        assert!(bad(|c| c.draws = 31));
        assert!(bad(|c| c.tau = 0.0));
        assert!(bad(|c| c.inflation = 0.5));
    }

    #[test]
    fn method_lists() {
        assert_eq!(parse_methods("gp,letkf,gp").unwrap(), vec![Method::Gp, Method::Letkf]);
        assert!(parse_methods("gp,kriging").is_err());
        assert!(parse_methods("").is_err());
        assert_eq!("enkf".parse::<Method>().unwrap().to_string(), "enkf");
    }

    #[test]
    fn even_sites() {
        let mut rng = SeedTree::new(0).stream(Stream::ObservationSites);
        assert_eq!(observation_sites(10, 5, SiteLayout::Even, &mut rng).unwrap(), vec![1, 3, 5, 7, 9]);
        assert_eq!(observation_sites(10, 10, SiteLayout::Even, &mut rng).unwrap(), (0..10).collect::<Vec<_>>());
        let r = observation_sites(100, 20, SiteLayout::Random, &mut rng).unwrap();
        assert_eq!(r.len(), 20);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn methods_share_the_instance() {
        let cfg = small();
        let a = TwinInstance::generate(&cfg).unwrap();
        let b = TwinInstance::generate(&cfg).unwrap();
        assert_eq!(a.y_star(), b.y_star());
        assert_eq!(a.truth(), b.truth());
        let gp = run_method_on(Method::Gp, &a, &cfg).unwrap();
        let enkf = run_method_on(Method::Enkf, &a, &cfg).unwrap();
        assert_eq!(gp.seed, enkf.seed);
        assert_eq!(gp.draws.shape(), (40, 2));
        assert_eq!(enkf.draws.shape(), (40, 2));
    }

    #[test]
    fn degenerate_ensemble_is_left_alone() {
        let cfg = ExperimentConfig {
            n_ens: 2,
            ..small()
        };
        let inst = TwinInstance::generate(&cfg).unwrap();
        let member = DVector::from_fn(cfg.d, |i, _| (i as f64 * 0.1).sin());
        let prior = Ensemble::new(DMatrix::from_columns(&[member.clone(), member.clone()])).unwrap();
        for method in [Method::Enkf, Method::Letkf] {
            let run = run_ensemble_method(method, &inst, &cfg, prior.clone()).unwrap();
            assert_eq!(run.mean, member);
            assert_eq!(run.rmse, rmse(&member, inst.truth()).unwrap());
        }
    }

    #[test]
    fn non_timing_outputs_are_reproducible() {
        let cfg = ExperimentConfig {
            perturb_obs: true,
            ..small()
        };
        for method in Method::ALL {
            let a = run_method(method, &cfg).unwrap();
            let b = run_method(method, &cfg).unwrap();
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.std, b.std);
            assert_eq!(a.draws, b.draws);
            assert_eq!(a.rmse, b.rmse);
        }
    }

    #[test]
    fn sweep_shapes_and_partial_flush() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Gp, Method::Enkf],
            ..small()
        };
        let mut seen = Vec::new();
        let records = sweep(SweepAxis::Dimensions, &[20, 30], &cfg, |r| {
            seen.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(seen, records);
        assert!(records.iter().all(|r| r.fit_time_s >= 0.0 && r.rmse >= 0.0));

        let single = sweep(SweepAxis::Observations, &[5], &cfg, |_| Ok(())).unwrap();
        assert_eq!(single.len(), 2);
        assert!(sweep(SweepAxis::Observations, &[], &cfg, |_| Ok(())).is_err());
        assert!(sweep(SweepAxis::Observations, &[8, 4], &cfg, |_| Ok(())).is_err());

        // m = 50 > d = 40 fails at the second point, after the first point's records went out.
        let mut flushed = 0;
        let err = sweep(SweepAxis::Observations, &[8, 50], &cfg, |_| {
            flushed += 1;
            Ok(())
        });
        assert!(err.is_err());
        assert_eq!(flushed, 2);
    }

    #[test]
    fn method_errors_are_annotated() {
        let cfg = small();
        let inst = TwinInstance::generate(&cfg).unwrap();
        let wrong = Ensemble::new(DMatrix::zeros(5, 3)).unwrap();
        let err = run_ensemble_method(Method::Letkf, &inst, &cfg, wrong).unwrap_err();
        assert!(err.to_string().starts_with("letkf failed"));
    }

    #[test]
    fn every_method_beats_the_prior_mean() {
        let cfg = ExperimentConfig {
            d: 100,
            m: 20,
            n_ens: 100,
            ..small()
        };
        let inst = TwinInstance::generate(&cfg).unwrap();
        let prior_rmse = rmse(&DVector::zeros(cfg.d), inst.truth()).unwrap();
        for method in Method::ALL {
            let run = run_method_on(method, &inst, &cfg).unwrap();
            assert!(run.rmse < prior_rmse, "{method}: {} vs {prior_rmse}", run.rmse);
        }
    }
}
