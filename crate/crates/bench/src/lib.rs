//! Fixtures shared by the criterion benches.

use matheron_core::experiment::{ExperimentConfig, Method, TwinInstance};
use matheron_core::{Ensemble, LinearObservation, Result};

/// Twin instance on `d` grid points with `m` evenly spaced observations.
pub fn instance(d: usize, m: usize, n_ens: usize) -> Result<(ExperimentConfig, TwinInstance)> {
    let cfg = ExperimentConfig {
        d,
        m,
        n_ens,
        seed: 17,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let inst = TwinInstance::generate(&cfg)?;
    Ok((cfg, inst))
}

pub struct AnalysisFixture {
    pub cfg: ExperimentConfig,
    pub instance: TwinInstance,
    pub ensemble: Ensemble,
    pub observation: LinearObservation,
}

pub fn analysis_fixture(d: usize, m: usize, n_ens: usize) -> Result<AnalysisFixture> {
    let (cfg, instance) = instance(d, m, n_ens)?;
    let ensemble = instance.prior_ensemble(Method::Enkf, n_ens)?;
    let observation = instance.observation()?;
    Ok(AnalysisFixture {
        cfg,
        instance,
        ensemble,
        observation,
    })
}
