//! Self-checks exposed on the command line: the two analysis paths agree on
//! random instances, and pathwise draws reproduce the conditional moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ensemble::{equivalence_report, EnkfConfig, Ensemble};
use crate::error::Result;
use crate::gaussian::{self, Conditioner, GaussianBelief, GaussianSampler, LinearObservation};
use crate::linalg::JitterSchedule;
use crate::rng::{standard_normal_matrix, SeedTree, Stream};
use crate::stats::sample_moments;

pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;
pub const MOMENT_MEAN_STANDARD_ERRORS: f64 = 4.0;
pub const MOMENT_COV_RELATIVE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceSummary {
    pub instances: usize,
    pub max_rel_diff: f64,
}

impl EquivalenceSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_diff <= EQUIVALENCE_TOLERANCE
    }
}

/// Random ensemble, dense operator and regularizers with `D_x ≤ 50`,
/// `D_y ≤ 25`, `2 ≤ N ≤ 20`; odd instances use perturbed observations.
pub fn random_instance<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<(Ensemble, LinearObservation, EnkfConfig)> {
    let dx = rng.random_range(1..=50);
    let dy = rng.random_range(1..=25);
    let n = rng.random_range(2..=20);
    let scale = rng.random_range(0.1..3.0);
    let ens = Ensemble::new(standard_normal_matrix(dx, n, rng) * scale)?;
    let h = standard_normal_matrix(dy, dx, rng);
    let rho = rng.random_range(0.05..2.0);
    let y: DVector<f64> = standard_normal_matrix(dy, 1, rng).column(0).into();
    let obs = LinearObservation::dense(h, rho, y)?;
    let cfg = EnkfConfig {
        xi: rng.random_range(0.0..1.0),
        upsilon: rng.random_range(0.0..1.0),
        rho,
        perturb_observations: k % 2 == 1,
    };
    Ok((ens, obs, cfg))
}

pub fn equivalence_check(seed: u64, instances: usize) -> Result<EquivalenceSummary> {
    let tree = SeedTree::new(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = tree.stream(Stream::Custom(k as u64));
        let (ens, obs, cfg) = random_instance(k, &mut rng)?;
        worst = worst.max(equivalence_report(&ens, &obs, &cfg, &mut rng)?);
    }
    Ok(EquivalenceSummary {
        instances,
        max_rel_diff: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub draws: usize,
    /// Largest per-coordinate mean error in Monte Carlo standard errors.
    pub max_mean_z: f64,
    /// `‖Ĉ − C‖_F / ‖C‖_F`
    pub cov_rel_error: f64,
}

impl MomentSummary {
    pub fn passed(&self) -> bool {
        self.max_mean_z <= MOMENT_MEAN_STANDARD_ERRORS && self.cov_rel_error <= MOMENT_COV_RELATIVE
    }
}

/// The fixed 3-state, 2-observation problem used by [`moment_check`].
pub fn moment_problem() -> Result<(GaussianBelief, LinearObservation)> {
    let prior = GaussianBelief::new(
        DVector::from_vec(vec![0.5, -1.0, 2.0]),
        DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.5, 0.4, -0.3, 0.4, 1.0]),
    )?;
    let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 2.0, -1.0]);
    let obs = LinearObservation::dense(h, 0.7, DVector::from_vec(vec![1.2, -0.4]))?;
    Ok((prior, obs))
}

/// Pushes `draws` joint prior draws through the exact pathwise update and
/// compares their sample moments with the conditional moments.
pub fn moment_check(seed: u64, draws: usize) -> Result<MomentSummary> {
    let (prior, obs) = moment_problem()?;
    let joint = gaussian::make_joint(&prior, &obs)?;
    let exact = gaussian::condition(&joint, obs.y_star())?;
    let sampler = GaussianSampler::new(&prior, &gaussian::sampling_schedule())?;
    let (xs, ys) = sampler.draw_joint(&obs, draws, &mut SeedTree::new(seed).stream(Stream::Draws(0)))?;
    let post = Conditioner::new(&joint, &JitterSchedule::default())?.update_columns(&xs, &ys, obs.y_star())?;
    let (mean, cov) = sample_moments(&post)?;
    let se = exact.std_devs() / (draws as f64).sqrt();
    let max_mean_z = (0..mean.len())
        .map(|i| (mean[i] - exact.mean()[i]).abs() / se[i])
        .fold(0.0, f64::max);
    Ok(MomentSummary {
        draws,
        max_mean_z,
        cov_rel_error: (&cov - exact.cov()).norm() / exact.cov().norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equivalence_holds_on_a_few_instances() {
        let s = equivalence_check(1, 10).unwrap();
        assert_eq!(s.instances, 10);
        assert!(s.passed(), "{}", s.max_rel_diff);
    }

    #[test]
    fn moment_check_passes_and_is_seeded() {
        let a = moment_check(3, 20_000).unwrap();
        assert!(a.passed(), "{a:?}");
        assert_eq!(a, moment_check(3, 20_000).unwrap());
    }

    #[test]
    fn too_few_draws_is_an_error() {
        assert!(moment_check(0, 1).is_err());
    }
}
