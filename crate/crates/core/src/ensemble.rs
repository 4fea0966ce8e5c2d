//! Ensemble representation and the stochastic ensemble Kalman analysis.
//!
//! Two code paths produce the analysis ensemble:
//!
//! * [`enkf_analysis`] forms the ensemble gain `K̂ = X̃ Ỹᵀ (Ỹ Ỹᵀ + γ² I)⁻¹`
//!   (or its `N × N` dual) and applies `X' = X + K̂ (Y* − Y)`.
//! * [`empirical_matheron`] builds an empirical [`JointGaussian`] from the
//!   ensemble moments and pushes every member through the exact pathwise
//!   update of [`crate::gaussian`].
//!
//! They share no gain routine; [`equivalence_report`] measures how far apart
//! they land.
//!
//! With `perturb_observations` on, each predicted observation gets an
//! independent `N(0, ρ² I)` draw. The noise enters the innovations only; the
//! gain is always built from the noise-free `H X` so that `ρ²` is counted
//! once, through `γ² = υ² + ρ²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Conditioner, JointGaussian, LinearObservation};
use crate::linalg::{self, JitterSchedule, SpdFactor};
use crate::rng::standard_normal_matrix;

/// `D × N` matrix of members stored as columns, `N ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::invalid(format!(
                "an ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ensemble contains non-finite values"));
        }
        Ok(Ensemble { members })
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }

    /// Unbiased sample covariance `X̃ X̃ᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let dev = deviations(&self.members, &self.mean());
        &dev * dev.transpose()
    }

    /// Pointwise sample standard deviation.
    pub fn std_devs(&self) -> DVector<f64> {
        let mean = self.mean();
        let mut sq = DVector::zeros(self.dim());
        for col in self.members.column_iter() {
            for ((acc, v), m) in sq.iter_mut().zip(col.iter()).zip(mean.iter()) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = 1.0 / (self.size() as f64 - 1.0);
        sq.map(|v: f64| (v * scale).sqrt())
    }
}

fn deviations(members: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let scale = 1.0 / (members.ncols() as f64 - 1.0).sqrt();
    let mut dev = members.clone();
    for mut col in dev.column_iter_mut() {
        col -= mean;
        col *= scale;
    }
    dev
}

/// Ensemble mean `X̄`, scaled deviations `X̃ = (X − X̄ 1ᵀ)/√(N−1)`, and the
/// covariance regularizer `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMoments {
    pub mean: DVector<f64>,
    pub deviations: DMatrix<f64>,
    pub xi: f64,
}

impl EnsembleMoments {
    pub fn size(&self) -> usize {
        self.deviations.ncols()
    }

    /// `X̃ X̃ᵀ + ξ² I`
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.deviations * self.deviations.transpose();
        let r = self.xi * self.xi;
        for i in 0..c.nrows() {
            c[(i, i)] += r;
        }
        c
    }

    pub fn is_degenerate(&self) -> bool {
        self.deviations.iter().all(|&v| v == 0.0)
    }
}

pub fn moments(ens: &Ensemble, xi: f64) -> Result<EnsembleMoments> {
    moments_of(ens.members(), xi)
}

fn moments_of(members: &DMatrix<f64>, xi: f64) -> Result<EnsembleMoments> {
    if members.ncols() < 2 {
        return Err(Error::invalid("moments need at least 2 members"));
    }
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(Error::invalid(format!("regularizer must be >= 0, got {xi}")));
    }
    let mean = members.column_mean();
    let deviations = deviations(members, &mean);
    Ok(EnsembleMoments { mean, deviations, xi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnkfConfig {
    /// State covariance regularizer `ξ`.
    pub xi: f64,
    /// Observation-ensemble regularizer `υ`.
    pub upsilon: f64,
    /// Observation noise standard deviation `ρ`. Governs both `γ²` and the
    /// perturbation draws; the ensemble path reads it from here rather than
    /// from the observation so that paths can be compared under mismatched noise.
    pub rho: f64,
    pub perturb_observations: bool,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        EnkfConfig {
            xi: 0.0,
            upsilon: 0.0,
            rho: 0.0,
            perturb_observations: false,
        }
    }
}

impl EnkfConfig {
    pub fn for_observation(obs: &LinearObservation) -> Self {
        EnkfConfig {
            rho: obs.rho(),
            ..Default::default()
        }
    }

    pub fn with_perturbation(mut self, on: bool) -> Self {
        self.perturb_observations = on;
        self
    }

    /// `γ² = υ² + ρ²`
    pub fn gamma_sq(&self) -> f64 {
        self.upsilon * self.upsilon + self.rho * self.rho
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("xi", self.xi), ("upsilon", self.upsilon), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Regularization for ensemble solves: `γ²` is the intended regularizer, so
/// jitter is only tried when the first, unregularized attempt fails.
pub fn ensemble_schedule() -> JitterSchedule {
    JitterSchedule::from_zero(1e-6)
}

/// `rows × n` observation perturbations; all zeros unless perturbation is on and `ρ > 0`.
pub fn observation_perturbations<R: Rng + ?Sized>(rows: usize, n: usize, cfg: &EnkfConfig, rng: &mut R) -> DMatrix<f64> {
    if cfg.perturb_observations && cfg.rho > 0.0 {
        standard_normal_matrix(rows, n, rng) * cfg.rho
    } else {
        DMatrix::zeros(rows, n)
    }
}

/// `Y = H X`, plus an independent `N(0, ρ² I)` column draw when perturbation is on.
pub fn apply_observation<R: Rng + ?Sized>(
    ens: &Ensemble,
    obs: &LinearObservation,
    cfg: &EnkfConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    cfg.validate()?;
    let mut y = obs.operator().apply(ens.members())?;
    if cfg.perturb_observations && cfg.rho > 0.0 {
        y += observation_perturbations(y.nrows(), y.ncols(), cfg, rng);
    }
    Ensemble::new(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainForm {
    /// Solve in observation space, `D_y × D_y`.
    Primal,
    /// Solve in ensemble space, `N × N`.
    Dual,
    /// Dual when `D_y > 2N`.
    Auto,
}

impl GainForm {
    fn resolve(self, obs_dim: usize, n: usize) -> GainForm {
        match self {
            GainForm::Auto if obs_dim > 2 * n => GainForm::Dual,
            GainForm::Auto => GainForm::Primal,
            other => other,
        }
    }
}

/// `K̂ = X̃ Ỹᵀ (Ỹ Ỹᵀ + γ² I)⁻¹`, shape `D_x × D_y`.
pub fn ensemble_gain(mx: &EnsembleMoments, my: &EnsembleMoments, cfg: &EnkfConfig) -> Result<DMatrix<f64>> {
    ensemble_gain_with(mx, my, cfg, GainForm::Auto, &ensemble_schedule())
}

pub fn ensemble_gain_with(
    mx: &EnsembleMoments,
    my: &EnsembleMoments,
    cfg: &EnkfConfig,
    form: GainForm,
    schedule: &JitterSchedule,
) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let n = mx.size();
    if my.size() != n {
        return Err(Error::dims("ensemble gain member count", n, my.size()));
    }
    let (dx, dy) = (mx.deviations.nrows(), my.deviations.nrows());
    if mx.is_degenerate() {
        return Ok(DMatrix::zeros(dx, dy));
    }
    let xd = &mx.deviations;
    let yd = &my.deviations;
    let gamma_sq = cfg.gamma_sq();
    match form.resolve(dy, n) {
        GainForm::Primal => {
            let mut s = yd * yd.transpose();
            for i in 0..dy {
                s[(i, i)] += gamma_sq;
            }
            let factor = SpdFactor::new(&s, schedule, "regularized ensemble innovation")?;
            // S symmetric: K̂ᵀ = S⁻¹ Ỹ X̃ᵀ
            Ok(factor.solve(&(yd * xd.transpose())).transpose())
        }
        _ => {
            let mut g = yd.transpose() * yd;
            for i in 0..n {
                g[(i, i)] += gamma_sq;
            }
            let factor = SpdFactor::new(&g, schedule, "regularized ensemble-space innovation")?;
            Ok(xd * factor.solve(&yd.transpose()))
        }
    }
}

fn check_conforming(ens: &Ensemble, obs: &LinearObservation, noise: Option<&DMatrix<f64>>) -> Result<()> {
    if obs.state_dim() != ens.dim() {
        return Err(Error::dims("observation operator vs ensemble", ens.dim(), obs.state_dim()));
    }
    if let Some(noise) = noise {
        if noise.shape() != (obs.obs_dim(), ens.size()) {
            return Err(Error::dims(
                "observation perturbations",
                format!("{}x{}", obs.obs_dim(), ens.size()),
                format!("{}x{}", noise.nrows(), noise.ncols()),
            ));
        }
    }
    Ok(())
}

/// Stochastic EnKF analysis `X' = X + K̂ (y* 1ᵀ − Y)`.
pub fn enkf_analysis<R: Rng + ?Sized>(
    ens: &Ensemble,
    obs: &LinearObservation,
    cfg: &EnkfConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    let noise = cfg
        .perturb_observations
        .then(|| observation_perturbations(obs.obs_dim(), ens.size(), cfg, rng));
    enkf_analysis_with_noise(ens, obs, cfg, noise.as_ref(), GainForm::Auto)
}

/// Analysis with caller-supplied perturbations (`None` means unperturbed).
pub fn enkf_analysis_with_noise(
    ens: &Ensemble,
    obs: &LinearObservation,
    cfg: &EnkfConfig,
    noise: Option<&DMatrix<f64>>,
    form: GainForm,
) -> Result<Ensemble> {
    check_conforming(ens, obs, noise)?;
    let hx = obs.operator().apply(ens.members())?;
    let mx = moments(ens, cfg.xi)?;
    let my = moments_of(&hx, cfg.upsilon)?;
    let gain = ensemble_gain_with(&mx, &my, cfg, form, &ensemble_schedule())?;

    let mut innovations = -hx;
    if let Some(noise) = noise {
        innovations -= noise;
    }
    for mut col in innovations.column_iter_mut() {
        col += obs.y_star();
    }
    Ensemble::new(ens.members() + gain * innovations)
}

/// Empirical Matheron update: every member goes through
/// `x + C_xy C_yy⁻¹ (y* − y)` with `m_x → X̄`, `C_xx → X̃X̃ᵀ + ξ²I`,
/// `m_y → Ȳ`, `C_xy → X̃Ỹᵀ`, `C_yy → ỸỸᵀ + γ²I`.
pub fn empirical_matheron<R: Rng + ?Sized>(
    ens: &Ensemble,
    obs: &LinearObservation,
    cfg: &EnkfConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    let noise = cfg
        .perturb_observations
        .then(|| observation_perturbations(obs.obs_dim(), ens.size(), cfg, rng));
    empirical_matheron_with_noise(ens, obs, cfg, noise.as_ref())
}

pub fn empirical_matheron_with_noise(
    ens: &Ensemble,
    obs: &LinearObservation,
    cfg: &EnkfConfig,
    noise: Option<&DMatrix<f64>>,
) -> Result<Ensemble> {
    cfg.validate()?;
    check_conforming(ens, obs, noise)?;
    let joint = empirical_joint(ens, obs, cfg)?;
    let conditioner = Conditioner::new(&joint, &ensemble_schedule())?;

    let mut out = ens.members().clone();
    for (i, mut column) in out.column_iter_mut().enumerate() {
        let x: DVector<f64> = ens.members().column(i).into();
        let mut y = obs.operator().apply_vec(&x)?;
        if let Some(noise) = noise {
            y += noise.column(i);
        }
        column.copy_from(&conditioner.update(&x, &y, obs.y_star())?);
    }
    Ensemble::new(out)
}

/// The Gaussian induced by the ensemble and its image under `H`.
pub fn empirical_joint(ens: &Ensemble, obs: &LinearObservation, cfg: &EnkfConfig) -> Result<JointGaussian> {
    let n = ens.size() as f64;
    let x = ens.members();
    let y = obs.operator().apply(x)?;

    let mean_x = x.column_mean();
    let mean_y = y.column_mean();
    let centered = |m: &DMatrix<f64>, mean: &DVector<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            col -= mean;
        }
        c
    };
    let xc = centered(x, &mean_x);
    let yc = centered(&y, &mean_y);
    let scale = 1.0 / (n - 1.0);

    let mut cov_xx = &xc * xc.transpose() * scale;
    let mut cov_yy = &yc * yc.transpose() * scale;
    let cov_xy = &xc * yc.transpose() * scale;
    cov_xx = linalg::symmetrize(&cov_xx);
    cov_yy = linalg::symmetrize(&cov_yy);
    for i in 0..cov_xx.nrows() {
        cov_xx[(i, i)] += cfg.xi * cfg.xi;
    }
    let gamma_sq = cfg.gamma_sq();
    for i in 0..cov_yy.nrows() {
        cov_yy[(i, i)] += gamma_sq;
    }
    JointGaussian::new(mean_x, mean_y, cov_xx, cov_xy, cov_yy)
}

/// Runs both analysis paths on identical inputs (including identical
/// perturbations) and returns the largest entrywise difference, normalized
/// by the largest magnitude in the EnKF output.
pub fn equivalence_report<R: Rng + ?Sized>(
    ens: &Ensemble,
    obs: &LinearObservation,
    cfg: &EnkfConfig,
    rng: &mut R,
) -> Result<f64> {
    compare_paths(ens, obs, cfg, cfg, rng)
}

/// Like [`equivalence_report`] but lets the two paths run under different configurations.
pub fn compare_paths<R: Rng + ?Sized>(
    ens: &Ensemble,
    obs: &LinearObservation,
    enkf_cfg: &EnkfConfig,
    matheron_cfg: &EnkfConfig,
    rng: &mut R,
) -> Result<f64> {
    let z = (enkf_cfg.perturb_observations || matheron_cfg.perturb_observations)
        .then(|| standard_normal_matrix(obs.obs_dim(), ens.size(), rng));
    let noise_for = |cfg: &EnkfConfig| {
        z.as_ref()
            .filter(|_| cfg.perturb_observations && cfg.rho > 0.0)
            .map(|z| z * cfg.rho)
    };
    let a = enkf_analysis_with_noise(ens, obs, enkf_cfg, noise_for(enkf_cfg).as_ref(), GainForm::Auto)?;
    let b = empirical_matheron_with_noise(ens, obs, matheron_cfg, noise_for(matheron_cfg).as_ref())?;
    Ok(linalg::max_rel_diff(b.members(), a.members()))
}
