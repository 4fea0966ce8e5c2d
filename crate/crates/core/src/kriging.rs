//! Squared-exponential GP prior on a 1D grid and exact GP regression.
//!
//! Regression goes through [`gaussian::condition`](crate::gaussian::condition)
//! with a row-selection operator, so the GP and the generic conditioning code
//! cannot drift apart.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{
    self, sampling_schedule, Conditioner, GaussianBelief, GaussianSampler, LinearObservation, ObservationOperator,
};
use crate::letkf::GridGeometry;
use crate::linalg::{JitterSchedule, SpdFactor};
use crate::rng::standard_normal_matrix;

/// Gram diagonal jitter relative to `σ²`.
pub const GRAM_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma: f64,
    pub ell: f64,
}

impl KernelParams {
    pub fn new(sigma: f64, ell: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
        }
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::invalid(format!("ell must be > 0, got {ell}")));
        }
        Ok(KernelParams { sigma, ell })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn default_jitter(&self) -> f64 {
        GRAM_JITTER * self.variance()
    }
}

pub fn se_kernel(r1: f64, r2: f64, p: &KernelParams) -> f64 {
    let r = r1 - r2;
    p.variance() * (-(r * r) / (2.0 * p.ell * p.ell)).exp()
}

pub fn gram(positions: &[f64], p: &KernelParams, jitter: f64) -> DMatrix<f64> {
    let d = positions.len();
    let mut k = DMatrix::zeros(d, d);
    for j in 0..d {
        k[(j, j)] = p.variance() + jitter;
        for i in (j + 1)..d {
            let v = se_kernel(positions[i], positions[j], p);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// A zero-mean SE prior with its Gram matrix and a factorized sampler.
#[derive(Debug, Clone)]
pub struct PriorModel {
    positions: Vec<f64>,
    params: KernelParams,
    gram: DMatrix<f64>,
    sampler: GaussianSampler,
}

impl PriorModel {
    pub fn new(positions: Vec<f64>, params: KernelParams) -> Result<Self> {
        Self::with_jitter(positions, params, params.default_jitter())
    }

    pub fn with_jitter(positions: Vec<f64>, params: KernelParams, jitter: f64) -> Result<Self> {
        if !(jitter >= 0.0) {
            return Err(Error::invalid(format!("gram jitter must be >= 0, got {jitter}")));
        }
        let gram = gram(&positions, &params, jitter);
        let belief = GaussianBelief::new(DVector::zeros(positions.len()), gram)?;
        let sampler = GaussianSampler::new(&belief, &sampling_schedule())?;
        let (_, gram) = belief.into_parts();
        Ok(PriorModel {
            positions,
            params,
            gram,
            sampler,
        })
    }

    pub fn dim(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn sampler(&self) -> &GaussianSampler {
        &self.sampler
    }

    pub fn belief(&self) -> GaussianBelief {
        GaussianBelief::new(DVector::zeros(self.dim()), self.gram.clone()).expect("gram is symmetric")
    }
}

#[derive(Debug, Clone)]
pub struct KrigingProblem {
    pub grid: GridGeometry,
    pub params: KernelParams,
    pub tau: f64,
    pub truth: DVector<f64>,
    pub y_star: DVector<f64>,
}

impl KrigingProblem {
    pub fn new(
        grid: GridGeometry,
        params: KernelParams,
        tau: f64,
        truth: DVector<f64>,
        y_star: DVector<f64>,
    ) -> Result<Self> {
        let problem = KrigingProblem {
            grid,
            params,
            tau,
            truth,
            y_star,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.truth.len() != self.grid.dim() {
            return Err(Error::dims("truth vector", self.grid.dim(), self.truth.len()));
        }
        if self.y_star.len() != self.grid.obs_count() {
            return Err(Error::dims("observation vector", self.grid.obs_count(), self.y_star.len()));
        }
        Ok(())
    }

    pub fn prior(&self) -> GaussianBelief {
        let k = gram(self.grid.positions(), &self.params, self.params.default_jitter());
        GaussianBelief::new(DVector::zeros(self.grid.dim()), k).expect("gram is symmetric")
    }

    pub fn observation(&self) -> Result<LinearObservation> {
        let op = ObservationOperator::selection(self.grid.obs_indices().to_vec(), self.grid.dim())?;
        LinearObservation::new(op, self.tau, self.y_star.clone())
    }
}

/// Exact posterior mean and pointwise standard deviation on the full grid.
pub fn gp_fit_predict(problem: &KrigingProblem) -> Result<(DVector<f64>, DVector<f64>)> {
    problem.validate()?;
    let prior = problem.prior();
    if problem.grid.obs_count() == 0 {
        let std = prior.std_devs();
        return Ok((prior.mean().clone(), std));
    }
    let joint = gaussian::make_joint(&prior, &problem.observation()?)?;
    let post = gaussian::condition(&joint, &problem.y_star)?;
    let std = post.std_devs();
    Ok((post.mean().clone(), std))
}

/// `count` posterior draws: exact prior joint draws pushed through the Matheron update.
pub fn gp_posterior_draws<R: Rng + ?Sized>(problem: &KrigingProblem, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::invalid("draw count must be >= 1"));
    }
    problem.validate()?;
    let prior = PriorModel::new(problem.grid.positions().to_vec(), problem.params)?;
    let fit = GpFit::fit(&prior, problem.grid.obs_indices(), problem.tau, &problem.y_star)?;
    Ok(fit.predict(&prior, count, rng)?.draws)
}

/// Observation-only part of GP regression: the factorized `K_mm + τ² I`
/// and the weights `(K_mm + τ² I)⁻¹ y*`. Grid-to-site covariances are left
/// to [`GpFit::predict`].
#[derive(Debug, Clone)]
pub struct GpFit {
    factor: Arc<SpdFactor>,
    weights: DVector<f64>,
    obs_indices: Vec<usize>,
    y_star: DVector<f64>,
    tau: f64,
}

#[derive(Debug, Clone)]
pub struct GpPrediction {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    /// `d × count`
    pub draws: DMatrix<f64>,
}

impl GpFit {
    pub fn fit(prior: &PriorModel, obs_indices: &[usize], tau: f64, y_star: &DVector<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
        }
        if y_star.len() != obs_indices.len() {
            return Err(Error::dims("observation vector", obs_indices.len(), y_star.len()));
        }
        let d = prior.dim();
        if let Some(&bad) = obs_indices.iter().find(|&&i| i >= d) {
            return Err(Error::dims("observation index", format!("< {d}"), bad));
        }
        let k = prior.gram();
        let m = obs_indices.len();
        let mut cov_yy = DMatrix::from_fn(m, m, |a, b| k[(obs_indices[a], obs_indices[b])]);
        for i in 0..m {
            cov_yy[(i, i)] += tau * tau;
        }
        let factor = SpdFactor::new(&cov_yy, &JitterSchedule::default(), "observation covariance")?;
        let weights = factor.solve_vec(y_star);
        Ok(GpFit {
            factor: Arc::new(factor),
            weights,
            obs_indices: obs_indices.to_vec(),
            y_star: y_star.clone(),
            tau,
        })
    }

    /// Exact conditioner for the zero-mean prior, sharing this fit's factorization.
    pub fn conditioner(&self, prior: &PriorModel) -> Result<Conditioner> {
        let cov_xy = prior.gram().select_columns(&self.obs_indices);
        Conditioner::from_factor(
            DVector::zeros(prior.dim()),
            DVector::zeros(self.obs_indices.len()),
            cov_xy,
            Arc::clone(&self.factor),
        )
    }

    /// Posterior mean, pointwise standard deviation and `count` pathwise draws on the full grid.
    pub fn predict<R: Rng + ?Sized>(&self, prior: &PriorModel, count: usize, rng: &mut R) -> Result<GpPrediction> {
        let conditioner = self.conditioner(prior)?;
        let mean = conditioner.mean_from_weights(&self.weights);
        let reduction = conditioner.variance_reduction();
        let std = DVector::from_fn(prior.dim(), |i, _| (prior.gram()[(i, i)] - reduction[i]).max(0.0).sqrt());
        let draws = if count == 0 {
            DMatrix::zeros(prior.dim(), 0)
        } else {
            let xs = prior.sampler().draw(count, rng)?;
            let mut ys = xs.select_rows(&self.obs_indices);
            ys += standard_normal_matrix(ys.nrows(), count, rng) * self.tau;
            conditioner.update_columns(&xs, &ys, &self.y_star)?
        };
        Ok(GpPrediction { mean, std, draws })
    }
}
