//! Local ensemble transform analysis on a 1D grid.
//!
//! Every state index gets its own analysis in ensemble space using only the
//! observations whose taper weight is non-negligible. The weight enters as a
//! scaling of the observation precision (`w_j / ρ²`), the mean moves by the
//! local gain, and the deviations are transformed by the symmetric square
//! root `(I + AᵀA)^{-1/2}` where `A = R_loc^{-1/2} Ỹ_loc`.
//!
//! The local problem is solved in whichever space is smaller: through the
//! `k × k` matrix `A Aᵀ` when a state sees `k ≤ N` observations, through the
//! `N × N` matrix `AᵀA` otherwise. Both give the same transform.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Observations at or below this taper weight are dropped from a local problem.
pub const MIN_TAPER_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taper {
    /// Fifth-order piecewise rational, zero beyond twice the radius.
    GaspariCohn,
    /// Indicator of `distance <= radius`.
    Boxcar,
}

impl Taper {
    pub fn as_str(self) -> &'static str {
        match self {
            Taper::GaspariCohn => "gaspari_cohn",
            Taper::Boxcar => "boxcar",
        }
    }
}

impl std::str::FromStr for Taper {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaspari_cohn" | "gaspari-cohn" | "gc" => Ok(Taper::GaspariCohn),
            "boxcar" => Ok(Taper::Boxcar),
            other => Err(Error::invalid(format!("unknown taper '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationConfig {
    pub radius: f64,
    pub taper: Taper,
    /// Multiplies the prior deviations before analysis.
    pub inflation: f64,
}

impl LocalizationConfig {
    pub fn new(radius: f64, taper: Taper) -> Result<Self> {
        let cfg = LocalizationConfig {
            radius,
            taper,
            inflation: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_inflation(mut self, inflation: f64) -> Result<Self> {
        self.inflation = inflation;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.radius.is_nan() {
            return Err(Error::invalid(format!("localization radius must be > 0, got {}", self.radius)));
        }
        if !(self.inflation >= 1.0 && self.inflation.is_finite()) {
            return Err(Error::invalid(format!("inflation must be >= 1, got {}", self.inflation)));
        }
        Ok(())
    }

    /// Distance beyond which every weight is exactly zero.
    pub fn support(&self) -> f64 {
        match self.taper {
            Taper::GaspariCohn => 2.0 * self.radius,
            Taper::Boxcar => self.radius,
        }
    }
}

/// Grid coordinates and the grid index each observation sits on.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    positions: Vec<f64>,
    obs_indices: Vec<usize>,
}

impl GridGeometry {
    pub fn new(positions: Vec<f64>, obs_indices: Vec<usize>) -> Result<Self> {
        if positions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("grid positions must lie in [0, 1]"));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid positions must be strictly increasing"));
        }
        let mut seen = vec![false; positions.len()];
        for &i in &obs_indices {
            if i >= positions.len() {
                return Err(Error::dims("observation index", format!("< {}", positions.len()), i));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("observation index {i} is repeated")));
            }
        }
        Ok(GridGeometry { positions, obs_indices })
    }

    /// `d` evenly spaced points covering `[0, 1]`.
    pub fn unit(d: usize, obs_indices: Vec<usize>) -> Result<Self> {
        let positions = match d {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..d).map(|i| i as f64 / (d - 1) as f64).collect(),
        };
        Self::new(positions, obs_indices)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn obs_indices(&self) -> &[usize] {
        &self.obs_indices
    }

    pub fn dim(&self) -> usize {
        self.positions.len()
    }

    pub fn obs_count(&self) -> usize {
        self.obs_indices.len()
    }

    pub fn obs_positions(&self) -> Vec<f64> {
        self.obs_indices.iter().map(|&i| self.positions[i]).collect()
    }
}

pub fn taper_weight(distance: f64, cfg: &LocalizationConfig) -> f64 {
    let distance = distance.abs();
    match cfg.taper {
        Taper::Boxcar => {
            if distance <= cfg.radius {
                1.0
            } else {
                0.0
            }
        }
        Taper::GaspariCohn => gaspari_cohn(distance / cfg.radius),
    }
}

fn gaspari_cohn(r: f64) -> f64 {
    let w = if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        -0.25 * r3 * r2 + 0.5 * r2 * r2 + 0.625 * r3 - (5.0 / 3.0) * r2 + 1.0
    } else if r < 2.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        r3 * r2 / 12.0 - 0.5 * r2 * r2 + 0.625 * r3 + (5.0 / 3.0) * r2 - 5.0 * r + 4.0 - (2.0 / 3.0) / r
    } else {
        0.0
    };
    w.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalSolve {
    /// `k × k` eigenproblem on `A Aᵀ`.
    ObservationSpace,
    /// `N × N` eigenproblem on `AᵀA`.
    EnsembleSpace,
    /// Observation space while `k <= N`.
    Auto,
}

pub fn letkf_analysis(
    ens: &Ensemble,
    geom: &GridGeometry,
    y_star: &DVector<f64>,
    rho: f64,
    cfg: &LocalizationConfig,
) -> Result<Ensemble> {
    letkf_analysis_with(ens, geom, y_star, rho, cfg, LocalSolve::Auto)
}

pub fn letkf_analysis_with(
    ens: &Ensemble,
    geom: &GridGeometry,
    y_star: &DVector<f64>,
    rho: f64,
    cfg: &LocalizationConfig,
    solve: LocalSolve,
) -> Result<Ensemble> {
    cfg.validate()?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("LETKF needs rho > 0, got {rho}")));
    }
    if geom.dim() != ens.dim() {
        return Err(Error::dims("grid vs ensemble dimension", ens.dim(), geom.dim()));
    }
    if y_star.len() != geom.obs_count() {
        return Err(Error::dims("observation vector", geom.obs_count(), y_star.len()));
    }

    let n = ens.size();
    let members = ens.members();
    let mean = ens.mean();
    let spread = (n as f64 - 1.0).sqrt();
    let mut dev = members.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
        col *= cfg.inflation / spread;
    }
    let obs_dev = dev.select_rows(geom.obs_indices());
    let innovation = DVector::from_fn(geom.obs_count(), |j, _| y_star[j] - mean[geom.obs_indices()[j]]);
    let obs_pos = geom.obs_positions();

    let mut out = members.clone();
    let mut local: Vec<(usize, f64)> = Vec::with_capacity(obs_pos.len());
    for (i, &pos) in geom.positions().iter().enumerate() {
        local.clear();
        local.extend(obs_pos.iter().enumerate().filter_map(|(j, &p)| {
            let w = taper_weight(pos - p, cfg);
            (w > MIN_TAPER_WEIGHT).then_some((j, w))
        }));
        if local.is_empty() {
            continue;
        }

        let k = local.len();
        let mut a = DMatrix::zeros(k, n);
        let mut scaled_innov = DVector::zeros(k);
        for (r, &(j, w)) in local.iter().enumerate() {
            let s = w.sqrt() / rho;
            a.row_mut(r).copy_from(&(obs_dev.row(j) * s));
            scaled_innov[r] = innovation[j] * s;
        }
        let x_row: DVector<f64> = dev.row(i).transpose();

        let use_obs_space = match solve {
            LocalSolve::ObservationSpace => true,
            LocalSolve::EnsembleSpace => false,
            LocalSolve::Auto => k <= n,
        };
        let (increment, new_row) = if use_obs_space {
            local_obs_space(&a, &scaled_innov, &x_row)
        } else {
            local_ensemble_space(&a, &scaled_innov, &x_row)
        };
        if !increment.is_finite() || new_row.iter().any(|v| !v.is_finite()) {
            return Err(Error::LocalAnalysis {
                state_index: i,
                reason: format!("non-finite local update with {k} observations"),
            });
        }
        // Member j becomes x̄ + Δ + √(N−1)·new_j; written as an increment on x_ij
        // so that a zero update leaves the member bit-identical.
        for ((slot, v), old) in out.row_mut(i).iter_mut().zip(new_row.iter()).zip(x_row.iter()) {
            *slot += increment + spread * (v - old / cfg.inflation);
        }
    }
    Ensemble::new(out)
}

/// `-1 / (√(1+λ) (1 + √(1+λ)))`, equal to `((1+λ)^{-1/2} − 1)/λ` without the cancellation.
fn sqrt_transform_coeff(lambda: f64) -> f64 {
    let s = (1.0 + lambda).sqrt();
    -1.0 / (s * (1.0 + s))
}

/// Mean increment `x̃ Aᵀ (I + AAᵀ)⁻¹ d` and transformed deviation row
/// `x̃ + x̃ Aᵀ U f(Λ) Uᵀ A`, with `AAᵀ = U Λ Uᵀ`.
fn local_obs_space(a: &DMatrix<f64>, innov: &DVector<f64>, x_row: &DVector<f64>) -> (f64, DVector<f64>) {
    let gram = a * a.transpose();
    let eig = SymmetricEigen::new(gram);
    let u = &eig.eigenvectors;
    let proj = a * x_row;
    let proj_u = u.tr_mul(&proj);
    let innov_u = u.tr_mul(innov);
    let mut increment = 0.0;
    let mut coeffs = proj_u.clone();
    for (l, lambda) in eig.eigenvalues.iter().enumerate() {
        let lambda = lambda.max(0.0);
        increment += proj_u[l] * innov_u[l] / (1.0 + lambda);
        coeffs[l] *= sqrt_transform_coeff(lambda);
    }
    let new_row = x_row + a.tr_mul(&(u * coeffs));
    (increment, new_row)
}

/// Same quantities through `AᵀA = V Λ Vᵀ`: weights `V (I+Λ)⁻¹ Vᵀ Aᵀ d` and
/// transform `V (I+Λ)^{-1/2} Vᵀ`.
fn local_ensemble_space(a: &DMatrix<f64>, innov: &DVector<f64>, x_row: &DVector<f64>) -> (f64, DVector<f64>) {
    let gram = a.tr_mul(a);
    let eig = SymmetricEigen::new(gram);
    let v = &eig.eigenvectors;
    let mut b = v.tr_mul(&a.tr_mul(innov));
    let mut xv = v.tr_mul(x_row);
    for (l, lambda) in eig.eigenvalues.iter().enumerate() {
        let lambda = lambda.max(0.0);
        b[l] /= 1.0 + lambda;
        xv[l] /= (1.0 + lambda).sqrt();
    }
    let weights = v * b;
    (x_row.dot(&weights), v * xv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{enkf_analysis, EnkfConfig};
    use crate::gaussian::{LinearObservation, ObservationOperator};
    use crate::rng::standard_normal_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gc(radius: f64) -> LocalizationConfig {
        LocalizationConfig::new(radius, Taper::GaspariCohn).unwrap()
    }

    #[test]
    fn gaspari_cohn_values() {
        let cfg = gc(0.3);
        assert_eq!(taper_weight(0.0, &cfg), 1.0);
        assert!((taper_weight(0.3, &cfg) - 5.0 / 24.0).abs() < 1e-12);
        assert_eq!(taper_weight(0.6, &cfg), 0.0);
        assert_eq!(taper_weight(10.0, &cfg), 0.0);
        assert!(taper_weight(0.599999, &cfg) < 1e-9);
    }

    #[test]
    fn boxcar_values() {
        let cfg = LocalizationConfig::new(0.2, Taper::Boxcar).unwrap();
        assert_eq!(taper_weight(0.2, &cfg), 1.0);
        assert_eq!(taper_weight(0.2000001, &cfg), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(LocalizationConfig::new(0.0, Taper::Boxcar).is_err());
        assert!(gc(0.1).with_inflation(0.9).is_err());
        assert!(gc(0.1).with_inflation(1.1).is_ok());
        assert_eq!("boxcar".parse::<Taper>().unwrap(), Taper::Boxcar);
        assert!("cosine".parse::<Taper>().is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(GridGeometry::new(vec![0.0, 0.5, 0.5], vec![]).is_err());
        assert!(GridGeometry::new(vec![0.0, 0.5], vec![1, 1]).is_err());
        assert!(GridGeometry::new(vec![0.0, 0.5], vec![2]).is_err());
        assert!(GridGeometry::new(vec![0.0, 1.5], vec![]).is_err());
        let g = GridGeometry::unit(5, vec![0, 4]).unwrap();
        assert_eq!(g.obs_positions(), vec![0.0, 1.0]);
    }

    #[test]
    fn scalar_two_member_case() {
        // Prior members [-1, 1]: mean 0, variance 2; ρ² = 2 gives gain 1/2,
        // posterior mean 2 and posterior variance (1 − 1/2)·2 = 1.
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        let geom = GridGeometry::new(vec![0.5], vec![0]).unwrap();
        let cfg = LocalizationConfig::new(1.0, Taper::Boxcar).unwrap();
        let out = letkf_analysis(&ens, &geom, &DVector::from_element(1, 4.0), 2f64.sqrt(), &cfg).unwrap();
        let half = 0.5f64.sqrt();
        assert!((out.members()[(0, 0)] - (2.0 - half)).abs() < 1e-12);
        assert!((out.members()[(0, 1)] - (2.0 + half)).abs() < 1e-12);
    }

    #[test]
    fn no_observation_in_reach_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ens = Ensemble::new(standard_normal_matrix(6, 5, &mut rng)).unwrap();
        let geom = GridGeometry::new(vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0], vec![5]).unwrap();
        let cfg = LocalizationConfig::new(0.05, Taper::Boxcar).unwrap();
        let out = letkf_analysis(&ens, &geom, &DVector::from_element(1, 3.0), 0.5, &cfg).unwrap();
        assert_eq!(out.members().rows(0, 5), ens.members().rows(0, 5));
        assert_ne!(out.members().row(5), ens.members().row(5));
    }

    #[test]
    fn both_local_solves_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 30;
        let ens = Ensemble::new(standard_normal_matrix(d, 8, &mut rng)).unwrap();
        let geom = GridGeometry::unit(d, (0..d).step_by(2).collect()).unwrap();
        let y = standard_normal_matrix(geom.obs_count(), 1, &mut rng).column(0).into();
        let cfg = gc(0.2).with_inflation(1.05).unwrap();
        let a = letkf_analysis_with(&ens, &geom, &y, 0.4, &cfg, LocalSolve::ObservationSpace).unwrap();
        let b = letkf_analysis_with(&ens, &geom, &y, 0.4, &cfg, LocalSolve::EnsembleSpace).unwrap();
        assert!((a.members() - b.members()).amax() < 1e-10);
    }

    #[test]
    fn global_boxcar_matches_enkf_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 20;
        let ens = Ensemble::new(standard_normal_matrix(d, 12, &mut rng)).unwrap();
        let sites: Vec<usize> = (0..d).step_by(3).collect();
        let geom = GridGeometry::unit(d, sites.clone()).unwrap();
        let y: DVector<f64> = standard_normal_matrix(sites.len(), 1, &mut rng).column(0).into();
        let cfg = LocalizationConfig::new(2.0, Taper::Boxcar).unwrap();
        let local = letkf_analysis(&ens, &geom, &y, 0.3, &cfg).unwrap();
        let obs = LinearObservation::new(ObservationOperator::selection(sites, d).unwrap(), 0.3, y).unwrap();
        let global = enkf_analysis(&ens, &obs, &EnkfConfig::for_observation(&obs), &mut rng).unwrap();
        assert!((local.mean() - global.mean()).amax() < 1e-10);
    }

    #[test]
    fn mean_increment_is_linear_in_innovation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 25;
        let ens = Ensemble::new(standard_normal_matrix(d, 10, &mut rng)).unwrap();
        let geom = GridGeometry::unit(d, vec![2, 9, 13, 20]).unwrap();
        let prior_mean = ens.mean();
        let y_bar = DVector::from_iterator(4, geom.obs_indices().iter().map(|&i| prior_mean[i]));
        let innov: DVector<f64> = standard_normal_matrix(4, 1, &mut rng).column(0).into();
        let cfg = gc(0.15);
        let once = letkf_analysis(&ens, &geom, &(&y_bar + &innov), 0.2, &cfg).unwrap();
        let twice = letkf_analysis(&ens, &geom, &(&y_bar + &innov * 2.0), 0.2, &cfg).unwrap();
        let inc1 = once.mean() - &prior_mean;
        let inc2 = twice.mean() - &prior_mean;
        assert!((inc2 - inc1 * 2.0).amax() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ens = Ensemble::new(DMatrix::zeros(3, 4)).unwrap();
        let geom = GridGeometry::unit(3, vec![1]).unwrap();
        let cfg = gc(0.5);
        let y = DVector::from_element(1, 0.0);
        assert!(letkf_analysis(&ens, &geom, &y, 0.0, &cfg).is_err());
        assert!(letkf_analysis(&ens, &geom, &DVector::zeros(2), 1.0, &cfg).is_err());
        let wrong = GridGeometry::unit(4, vec![1]).unwrap();
        assert!(letkf_analysis(&ens, &wrong, &y, 1.0, &cfg).is_err());
    }
}
