//! Exact Gaussian conditioning, ensemble Kalman analysis viewed as an
//! empirical pathwise (Matheron) update, local ensemble transform analysis,
//! and a GP twin-experiment harness comparing them on a 1D grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod kriging;
pub mod letkf;
pub mod linalg;
pub mod rng;
pub mod stats;

pub use ensemble::{
    compare_paths, empirical_joint, empirical_matheron, enkf_analysis, ensemble_gain, equivalence_report, moments,
    EnkfConfig, Ensemble, EnsembleMoments, GainForm,
};
pub use error::{Error, Result};
pub use experiment::{
    run_method, run_method_on, sweep, ExperimentConfig, Method, MethodRun, SiteLayout, SweepAxis, TimingRecord,
    TwinInstance,
};
pub use gaussian::{
    condition, kalman_gain, kalman_update, make_joint, matheron_exact, sample, Conditioner, GaussianBelief,
    GaussianSampler, JointGaussian, LinearObservation, ObservationOperator,
};
pub use kriging::{gp_fit_predict, gp_posterior_draws, gram, se_kernel, KernelParams, KrigingProblem, PriorModel};
pub use letkf::{letkf_analysis, taper_weight, GridGeometry, LocalizationConfig, Taper};
pub use linalg::JitterSchedule;
pub use rng::{SeedTree, Stream};
pub use stats::{loglog_slope, median, rmse};

pub use nalgebra::{DMatrix, DVector};
