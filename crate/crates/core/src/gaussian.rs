//! Exact finite-dimensional Gaussian machinery.
//!
//! A prior `x ~ N(m, C)` and a linear observation `y = H x + ε`, `ε ~ N(0, ρ² I)`
//! define the block joint
//!
//! ```text
//! [x]     ( [ m  ]   [ C      C Hᵀ        ] )
//! [y] ~ N ( [ Hm ] , [ H C    H C Hᵀ + ρ²I ] )
//! ```
//!
//! from which [`condition`] forms the posterior moments, [`kalman_update`]
//! reaches the same posterior through the gain, and [`matheron_exact`] maps a
//! joint draw `(x, y)` onto a posterior draw `x + C_xy C_yy⁻¹ (y* − y)`
//! without ever forming the posterior covariance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, JitterSchedule, PsdSqrt, SpdFactor};
use crate::rng::standard_normal_matrix;

/// Relative tolerance for the symmetry invariant of stored covariances.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Checks shapes and symmetry. Positive semidefiniteness costs an
    /// eigendecomposition and is checked separately by [`GaussianBelief::is_psd`].
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::dims(
                "gaussian belief covariance",
                format!("{d}x{d}"),
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if !linalg::is_symmetric(&cov, SYMMETRY_TOLERANCE) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("belief contains non-finite values"));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianBelief {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_psd(&self) -> bool {
        linalg::is_psd(&self.cov)
    }

    /// Pointwise standard deviations; tiny negative variances from roundoff clamp to zero.
    pub fn std_devs(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// The observation matrix `H`, either dense or a row selection of the state.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOperator {
    Dense(DMatrix<f64>),
    Selection { indices: Vec<usize>, state_dim: usize },
}

impl ObservationOperator {
    pub fn selection(indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= state_dim) {
            return Err(Error::dims(
                "selection operator",
                format!("indices < {state_dim}"),
                bad,
            ));
        }
        Ok(ObservationOperator::Selection { indices, state_dim })
    }

    pub fn nrows(&self) -> usize {
        match self {
            ObservationOperator::Dense(h) => h.nrows(),
            ObservationOperator::Selection { indices, .. } => indices.len(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            ObservationOperator::Dense(h) => h.ncols(),
            ObservationOperator::Selection { state_dim, .. } => *state_dim,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ObservationOperator::Dense(h) => h.clone(),
            ObservationOperator::Selection { indices, state_dim } => {
                let mut h = DMatrix::zeros(indices.len(), *state_dim);
                for (row, &col) in indices.iter().enumerate() {
                    h[(row, col)] = 1.0;
                }
                h
            }
        }
    }

    fn check_rows(&self, rows: usize, context: &'static str) -> Result<()> {
        if rows != self.ncols() {
            return Err(Error::dims(context, format!("{} state rows", self.ncols()), rows));
        }
        Ok(())
    }

    /// `H X` for a state matrix with members in columns.
    pub fn apply(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(states.nrows(), "observation operator")?;
        Ok(match self {
            ObservationOperator::Dense(h) => h * states,
            ObservationOperator::Selection { indices, .. } => states.select_rows(indices.iter()),
        })
    }

    pub fn apply_vec(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(state.len(), "observation operator")?;
        Ok(match self {
            ObservationOperator::Dense(h) => h * state,
            ObservationOperator::Selection { indices, .. } => state.select_rows(indices.iter()),
        })
    }

    /// `C Hᵀ`
    pub fn cross_covariance(&self, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(cov.ncols(), "cross covariance")?;
        Ok(match self {
            ObservationOperator::Dense(h) => cov * h.transpose(),
            ObservationOperator::Selection { indices, .. } => cov.select_columns(indices.iter()),
        })
    }

    /// `H C Hᵀ`
    pub fn project_covariance(&self, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(cov.nrows(), "projected covariance")?;
        Ok(match self {
            ObservationOperator::Dense(h) => h * cov * h.transpose(),
            ObservationOperator::Selection { indices, .. } => {
                let n = indices.len();
                DMatrix::from_fn(n, n, |i, j| cov[(indices[i], indices[j])])
            }
        })
    }
}

/// `y = H x + ε` with `ε ~ N(0, ρ² I)` and the realized observation `y*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservation {
    operator: ObservationOperator,
    rho: f64,
    y_star: DVector<f64>,
}

impl LinearObservation {
    pub fn new(operator: ObservationOperator, rho: f64, y_star: DVector<f64>) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("observation noise rho must be >= 0, got {rho}")));
        }
        if y_star.len() != operator.nrows() {
            return Err(Error::dims("observation vector", operator.nrows(), y_star.len()));
        }
        Ok(LinearObservation {
            operator,
            rho,
            y_star,
        })
    }

    pub fn dense(h: DMatrix<f64>, rho: f64, y_star: DVector<f64>) -> Result<Self> {
        Self::new(ObservationOperator::Dense(h), rho, y_star)
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.operator
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn noise_variance(&self) -> f64 {
        self.rho * self.rho
    }

    pub fn y_star(&self) -> &DVector<f64> {
        &self.y_star
    }

    pub fn obs_dim(&self) -> usize {
        self.operator.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.operator.ncols()
    }

    pub fn with_y_star(&self, y_star: DVector<f64>) -> Result<Self> {
        Self::new(self.operator.clone(), self.rho, y_star)
    }

    /// `H C Hᵀ + ρ² I`
    pub fn innovation_covariance(&self, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut s = self.operator.project_covariance(cov)?;
        let r = self.noise_variance();
        for i in 0..s.nrows() {
            s[(i, i)] += r;
        }
        Ok(s)
    }
}

/// Block moments of a jointly Gaussian `(x, y)`. The `yx` block is always
/// derived as the transpose of `cov_xy`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub(crate) mean_x: DVector<f64>,
    pub(crate) mean_y: DVector<f64>,
    pub(crate) cov_xx: DMatrix<f64>,
    pub(crate) cov_xy: DMatrix<f64>,
    pub(crate) cov_yy: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(
        mean_x: DVector<f64>,
        mean_y: DVector<f64>,
        cov_xx: DMatrix<f64>,
        cov_xy: DMatrix<f64>,
        cov_yy: DMatrix<f64>,
    ) -> Result<Self> {
        let (dx, dy) = (mean_x.len(), mean_y.len());
        let expect = |m: &DMatrix<f64>, r: usize, c: usize, ctx: &'static str| {
            if m.shape() != (r, c) {
                Err(Error::dims(ctx, format!("{r}x{c}"), format!("{}x{}", m.nrows(), m.ncols())))
            } else {
                Ok(())
            }
        };
        expect(&cov_xx, dx, dx, "joint cov_xx")?;
        expect(&cov_xy, dx, dy, "joint cov_xy")?;
        expect(&cov_yy, dy, dy, "joint cov_yy")?;
        if !linalg::is_symmetric(&cov_xx, SYMMETRY_TOLERANCE) || !linalg::is_symmetric(&cov_yy, SYMMETRY_TOLERANCE) {
            return Err(Error::invalid("joint diagonal blocks must be symmetric"));
        }
        Ok(JointGaussian {
            mean_x,
            mean_y,
            cov_xx,
            cov_xy,
            cov_yy,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mean_x.len(), self.mean_y.len())
    }

    pub fn mean_x(&self) -> &DVector<f64> {
        &self.mean_x
    }

    pub fn mean_y(&self) -> &DVector<f64> {
        &self.mean_y
    }

    pub fn cov_xx(&self) -> &DMatrix<f64> {
        &self.cov_xx
    }

    pub fn cov_xy(&self) -> &DMatrix<f64> {
        &self.cov_xy
    }

    pub fn cov_yy(&self) -> &DMatrix<f64> {
        &self.cov_yy
    }

    pub fn cov_yx(&self) -> DMatrix<f64> {
        self.cov_xy.transpose()
    }

    /// The stacked vector `(x, y)` as one belief, for drawing joint samples.
    pub fn stacked(&self) -> Result<GaussianBelief> {
        let (dx, dy) = self.dims();
        let n = dx + dy;
        let mut mean = DVector::zeros(n);
        mean.rows_mut(0, dx).copy_from(&self.mean_x);
        mean.rows_mut(dx, dy).copy_from(&self.mean_y);
        let mut cov = DMatrix::zeros(n, n);
        cov.view_mut((0, 0), (dx, dx)).copy_from(&self.cov_xx);
        cov.view_mut((0, dx), (dx, dy)).copy_from(&self.cov_xy);
        cov.view_mut((dx, 0), (dy, dx)).copy_from(&self.cov_xy.transpose());
        cov.view_mut((dx, dx), (dy, dy)).copy_from(&self.cov_yy);
        GaussianBelief::new(mean, cov)
    }
}

pub fn make_joint(prior: &GaussianBelief, obs: &LinearObservation) -> Result<JointGaussian> {
    if obs.state_dim() != prior.dim() {
        return Err(Error::dims(
            "observation operator columns vs prior dimension",
            prior.dim(),
            obs.state_dim(),
        ));
    }
    let op = obs.operator();
    Ok(JointGaussian {
        mean_x: prior.mean.clone(),
        mean_y: op.apply_vec(&prior.mean)?,
        cov_xx: prior.cov.clone(),
        cov_xy: op.cross_covariance(&prior.cov)?,
        cov_yy: obs.innovation_covariance(&prior.cov)?,
    })
}

/// A factorized `C_yy` together with `C_xy`: everything conditioning needs
/// except the prior covariance itself.
#[derive(Debug, Clone)]
pub struct Conditioner {
    mean_x: DVector<f64>,
    mean_y: DVector<f64>,
    cov_xy: DMatrix<f64>,
    factor: Arc<SpdFactor>,
}

impl Conditioner {
    pub fn new(joint: &JointGaussian, schedule: &JitterSchedule) -> Result<Self> {
        Self::from_blocks(
            joint.mean_x.clone(),
            joint.mean_y.clone(),
            joint.cov_xy.clone(),
            &joint.cov_yy,
            schedule,
        )
    }

    pub fn from_blocks(
        mean_x: DVector<f64>,
        mean_y: DVector<f64>,
        cov_xy: DMatrix<f64>,
        cov_yy: &DMatrix<f64>,
        schedule: &JitterSchedule,
    ) -> Result<Self> {
        if cov_xy.shape() != (mean_x.len(), mean_y.len()) {
            return Err(Error::dims(
                "conditioner cov_xy",
                format!("{}x{}", mean_x.len(), mean_y.len()),
                format!("{}x{}", cov_xy.nrows(), cov_xy.ncols()),
            ));
        }
        if cov_yy.shape() != (mean_y.len(), mean_y.len()) {
            return Err(Error::dims(
                "conditioner cov_yy",
                mean_y.len(),
                format!("{}x{}", cov_yy.nrows(), cov_yy.ncols()),
            ));
        }
        let factor = SpdFactor::new(cov_yy, schedule, "observation covariance")?;
        Self::from_factor(mean_x, mean_y, cov_xy, Arc::new(factor))
    }

    /// Reuses an existing factorization of `C_yy`.
    pub fn from_factor(
        mean_x: DVector<f64>,
        mean_y: DVector<f64>,
        cov_xy: DMatrix<f64>,
        factor: Arc<SpdFactor>,
    ) -> Result<Self> {
        if cov_xy.shape() != (mean_x.len(), mean_y.len()) || factor.dim() != mean_y.len() {
            return Err(Error::dims(
                "conditioner blocks",
                format!("{}x{} and factor of order {}", mean_x.len(), mean_y.len(), mean_y.len()),
                format!("{}x{} and factor of order {}", cov_xy.nrows(), cov_xy.ncols(), factor.dim()),
            ));
        }
        Ok(Conditioner {
            mean_x,
            mean_y,
            cov_xy,
            factor,
        })
    }

    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    fn check_obs(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.mean_y.len() {
            return Err(Error::dims("observation vector", self.mean_y.len(), y.len()));
        }
        Ok(())
    }

    /// `C_xy C_yy⁻¹`
    pub fn gain(&self) -> DMatrix<f64> {
        self.factor.solve(&self.cov_xy.transpose()).transpose()
    }

    /// `m_x + C_xy C_yy⁻¹ (y* − m_y)`
    pub fn posterior_mean(&self, y_star: &DVector<f64>) -> Result<DVector<f64>> {
        let weights = self.weights(y_star)?;
        Ok(self.mean_from_weights(&weights))
    }

    /// `C_yy⁻¹ (y* − m_y)`
    pub fn weights(&self, y_star: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_obs(y_star)?;
        Ok(self.factor.solve_vec(&(y_star - &self.mean_y)))
    }

    /// `m_x + C_xy w`
    pub fn mean_from_weights(&self, weights: &DVector<f64>) -> DVector<f64> {
        &self.mean_x + &self.cov_xy * weights
    }

    pub fn state_dim(&self) -> usize {
        self.mean_x.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_y.len()
    }

    /// `C_xy C_yy⁻¹ C_yx`, formed as `Bᵀ B` with `B = L⁻¹ C_yx` so it is symmetric by construction.
    pub fn covariance_reduction(&self) -> DMatrix<f64> {
        let b = self.factor.solve_lower(&self.cov_xy.transpose());
        b.transpose() * b
    }

    /// Diagonal of `C_xy C_yy⁻¹ C_yx` without forming the full matrix.
    pub fn variance_reduction(&self) -> DVector<f64> {
        let b = self.factor.solve_lower(&self.cov_xy.transpose());
        DVector::from_iterator(b.ncols(), b.column_iter().map(|c| c.norm_squared()))
    }

    /// Pathwise update of one joint draw: `x + C_xy C_yy⁻¹ (y* − y)`.
    pub fn update(&self, x: &DVector<f64>, y: &DVector<f64>, y_star: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_obs(y)?;
        self.check_obs(y_star)?;
        if x.len() != self.mean_x.len() {
            return Err(Error::dims("matheron state draw", self.mean_x.len(), x.len()));
        }
        let weights = self.factor.solve_vec(&(y_star - y));
        Ok(x + &self.cov_xy * weights)
    }

    /// Column-wise pathwise update of paired draws `(X, Y)`.
    pub fn update_columns(&self, xs: &DMatrix<f64>, ys: &DMatrix<f64>, y_star: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_obs(y_star)?;
        if xs.nrows() != self.mean_x.len() || ys.nrows() != self.mean_y.len() || xs.ncols() != ys.ncols() {
            return Err(Error::dims(
                "matheron paired draws",
                format!("{}xN and {}xN", self.mean_x.len(), self.mean_y.len()),
                format!("{}x{} and {}x{}", xs.nrows(), xs.ncols(), ys.nrows(), ys.ncols()),
            ));
        }
        let mut residual = -ys;
        for mut col in residual.column_iter_mut() {
            col += y_star;
        }
        let weights = self.factor.solve(&residual);
        Ok(xs + &self.cov_xy * weights)
    }
}

pub fn condition(joint: &JointGaussian, y_star: &DVector<f64>) -> Result<GaussianBelief> {
    condition_with(joint, y_star, &JitterSchedule::default())
}

pub fn condition_with(joint: &JointGaussian, y_star: &DVector<f64>, schedule: &JitterSchedule) -> Result<GaussianBelief> {
    let conditioner = Conditioner::new(joint, schedule)?;
    let mean = conditioner.posterior_mean(y_star)?;
    let cov = linalg::symmetrize(&(&joint.cov_xx - conditioner.covariance_reduction()));
    Ok(GaussianBelief { mean, cov })
}

/// `K = C Hᵀ (H C Hᵀ + ρ² I)⁻¹`, shape `D_x × D_y`.
pub fn kalman_gain(prior_cov: &DMatrix<f64>, obs: &LinearObservation) -> Result<DMatrix<f64>> {
    kalman_gain_with(prior_cov, obs, &JitterSchedule::default())
}

pub fn kalman_gain_with(prior_cov: &DMatrix<f64>, obs: &LinearObservation, schedule: &JitterSchedule) -> Result<DMatrix<f64>> {
    if !prior_cov.is_square() || prior_cov.nrows() != obs.state_dim() {
        return Err(Error::dims(
            "kalman gain prior covariance",
            format!("{0}x{0}", obs.state_dim()),
            format!("{}x{}", prior_cov.nrows(), prior_cov.ncols()),
        ));
    }
    let innovation = obs.innovation_covariance(prior_cov)?;
    let factor = SpdFactor::new(&innovation, schedule, "innovation covariance")?;
    // S is symmetric, so Kᵀ = S⁻¹ H C.
    let hc = obs.operator().cross_covariance(prior_cov)?.transpose();
    Ok(factor.solve(&hc).transpose())
}

/// Posterior through the gain: `m + K (y* − H m)`, `C − K H C`.
pub fn kalman_update(prior: &GaussianBelief, obs: &LinearObservation) -> Result<GaussianBelief> {
    let gain = kalman_gain(&prior.cov, obs)?;
    let innovation = obs.y_star() - obs.operator().apply_vec(&prior.mean)?;
    let mean = &prior.mean + &gain * innovation;
    let hc = obs.operator().cross_covariance(&prior.cov)?.transpose();
    let cov = linalg::symmetrize(&(&prior.cov - gain * hc));
    Ok(GaussianBelief { mean, cov })
}

/// Draws from a fixed belief through a precomputed square root.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    sqrt: PsdSqrt,
}

impl GaussianSampler {
    pub fn new(belief: &GaussianBelief, schedule: &JitterSchedule) -> Result<Self> {
        Ok(GaussianSampler {
            mean: belief.mean.clone(),
            sqrt: PsdSqrt::new(&belief.cov, schedule)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn jitter(&self) -> f64 {
        self.sqrt.jitter()
    }

    /// `dim × count` matrix whose columns are i.i.d. draws.
    pub fn draw<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::invalid("sample count must be >= 1"));
        }
        let z = standard_normal_matrix(self.dim(), count, rng);
        let mut out = self.sqrt.factor() * z;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        Ok(out)
    }

    /// Paired joint draws `(x, H x + ρ ε)`.
    pub fn draw_joint<R: Rng + ?Sized>(
        &self,
        obs: &LinearObservation,
        count: usize,
        rng: &mut R,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let xs = self.draw(count, rng)?;
        let mut ys = obs.operator().apply(&xs)?;
        if obs.rho() > 0.0 {
            ys += standard_normal_matrix(ys.nrows(), count, rng) * obs.rho();
        }
        Ok((xs, ys))
    }
}

/// Sampling schedule: exact square root first, jitter only if the covariance
/// is numerically indefinite.
pub fn sampling_schedule() -> JitterSchedule {
    JitterSchedule::from_zero(1e-6)
}

pub fn sample<R: Rng + ?Sized>(belief: &GaussianBelief, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    GaussianSampler::new(belief, &sampling_schedule())?.draw(count, rng)
}

/// `x + C_xy C_yy⁻¹ (y* − y)` for a single joint draw `(x, y)`.
pub fn matheron_exact(
    joint: &JointGaussian,
    x: &DVector<f64>,
    y: &DVector<f64>,
    y_star: &DVector<f64>,
) -> Result<DVector<f64>> {
    Conditioner::new(joint, &JitterSchedule::default())?.update(x, y, y_star)
}
