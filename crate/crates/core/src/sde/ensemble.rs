use rayon::prelude::*;

use super::{integrate, outcome_of, simulate, IntegratorConfig, Schedule, SdeError, Trajectory};
use crate::model::PhasePoint;

/// Source of initial states, indexed so that draw `i` is independent of
/// which worker asks for it.
pub trait InitialSampler: Sync {
    fn sample(&self, index: u64) -> Result<PhasePoint, SdeError>;
}

impl InitialSampler for PhasePoint {
    fn sample(&self, _index: u64) -> Result<PhasePoint, SdeError> {
        Ok(*self)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `counter` from `base`.
pub fn counter_mix(base: u64, counter: u64) -> u64 {
    splitmix_finalize(
        splitmix_finalize(base).wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)),
    )
}

/// Outcome statistics of `n_total` independent trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub n_total: u64,
    pub n_positive: u64,
    pub base_seed: u64,
    /// Final state per trajectory, in index order. Linear above-threshold
    /// runs stop once their sign is settled, so these are the states at
    /// that moment.
    pub final_states: Vec<PhasePoint>,
    /// Full paths, only filled by [`run_ensemble_recorded`].
    pub trajectories: Vec<Trajectory>,
}

impl Ensemble {
    pub fn probability(&self) -> f64 {
        self.n_positive as f64 / self.n_total as f64
    }
}

fn check(schedule: &Schedule, cfg: &IntegratorConfig, n: u64) -> Result<(), SdeError> {
    schedule.validate()?;
    cfg.validate(schedule)?;
    if n == 0 {
        return Err(SdeError::InvalidConfig("ensemble size must be >= 1".into()));
    }
    Ok(())
}

fn first_error<T>(results: Vec<Result<T, SdeError>>) -> Result<Vec<T>, SdeError> {
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(SdeError::Divergence { tau, .. }) => {
                return Err(SdeError::Divergence {
                    tau,
                    trajectory: Some(i as u64),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Runs `n` trajectories; trajectory `i` starts from `sampler.sample(i)` and
/// uses the noise stream `counter_mix(base_seed, i)`, so the result does not
/// depend on the number of worker threads.
pub fn run_ensemble(
    sampler: &dyn InitialSampler,
    schedule: &Schedule,
    cfg: &IntegratorConfig,
    n: u64,
    base_seed: u64,
) -> Result<Ensemble, SdeError> {
    check(schedule, cfg, n)?;
    let results: Vec<Result<PhasePoint, SdeError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let initial = sampler.sample(i)?;
            simulate(
                initial,
                schedule,
                cfg,
                counter_mix(base_seed, i),
                true,
                |_, _| {},
            )
            .map(|o| o.final_state)
        })
        .collect();
    let final_states = first_error(results)?;
    let n_positive = final_states.iter().map(|s| u64::from(outcome_of(*s))).sum();
    Ok(Ensemble {
        n_total: n,
        n_positive,
        base_seed,
        final_states,
        trajectories: Vec::new(),
    })
}

/// Like [`run_ensemble`] but keeps every recorded trajectory and never stops
/// early.
pub fn run_ensemble_recorded(
    sampler: &dyn InitialSampler,
    schedule: &Schedule,
    cfg: &IntegratorConfig,
    n: u64,
    base_seed: u64,
) -> Result<Ensemble, SdeError> {
    check(schedule, cfg, n)?;
    let results: Vec<Result<Trajectory, SdeError>> = (0..n)
        .into_par_iter()
        .map(|i| integrate(sampler.sample(i)?, schedule, cfg, counter_mix(base_seed, i)))
        .collect();
    let trajectories = first_error(results)?;
    let n_positive = trajectories.iter().map(|t| u64::from(t.outcome)).sum();
    Ok(Ensemble {
        n_total: n,
        n_positive,
        base_seed,
        final_states: trajectories.iter().map(|t| t.final_state).collect(),
        trajectories,
    })
}
