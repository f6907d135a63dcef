//! Multi-threaded Monte Carlo with the same results as the sequential engine.
//!
//! Each trial draws from its own stream, and per-trial results are collected
//! in trial order before aggregation, so the report does not depend on the
//! thread count.

use qflqg_core::simulate::{
    run_trial, summarize, trial_rng, MonteCarloOutcome, OfflinePlan, SimulationConfig, SimulationError, TrialCost,
};
use qflqg_core::TrajectoryRecord;
use rayon::prelude::*;

/// Run `trials` trials of `theta` and return every record, in trial order.
/// On failure the error of the lowest failing trial index is returned.
pub fn par_trials(
    plan: &OfflinePlan,
    theta: &[usize],
    master_seed: u64,
    trials: usize,
) -> Result<Vec<TrajectoryRecord>, SimulationError> {
    (0..trials)
        .into_par_iter()
        .map(|trial| run_trial(plan, theta, trial, &mut trial_rng(master_seed, trial)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Parallel counterpart of [`qflqg_core::monte_carlo`].
pub fn par_monte_carlo(plan: &OfflinePlan, config: &SimulationConfig) -> Result<MonteCarloOutcome, SimulationError> {
    if config.trials == 0 {
        return Err(SimulationError::NoTrials);
    }
    let theta = config.schedule.as_deref().unwrap_or(&plan.schedule.theta_star);
    let keep = config.record_trajectories;
    let results: Vec<Result<(TrialCost, Option<TrajectoryRecord>), SimulationError>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let rec = run_trial(plan, theta, trial, &mut trial_rng(config.master_seed, trial))?;
            Ok((TrialCost::from(&rec), keep.then_some(rec)))
        })
        .collect();
    let mut costs = Vec::with_capacity(config.trials);
    let mut trajectories = Vec::new();
    for r in results {
        let (cost, rec) = r?;
        costs.push(cost);
        trajectories.extend(rec);
    }
    Ok(MonteCarloOutcome { report: summarize(plan, theta, &costs)?, trajectories })
}

/// [`par_monte_carlo`] on a dedicated pool of `threads` workers.
pub fn par_monte_carlo_with_threads(
    plan: &OfflinePlan,
    config: &SimulationConfig,
    threads: usize,
) -> Result<MonteCarloOutcome, SimulationError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(|| par_monte_carlo(plan, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use qflqg_core::quadrature::QuadratureConfig;
    use qflqg_core::{monte_carlo, scenarios, validate_scenario};

    #[test]
    fn thread_count_does_not_change_the_report() {
        let mut raw = scenarios::example_raw();
        raw.horizon = 8;
        let model = validate_scenario(&raw).unwrap();
        let plan = OfflinePlan::build(&model, &scenarios::example_bank(1, [100.0, 200.0, 300.0]), &QuadratureConfig::default())
            .unwrap();
        let config = SimulationConfig { record_trajectories: true, ..SimulationConfig::new(64, 11) };
        let seq = monte_carlo(&plan, &config).unwrap();
        let one = par_monte_carlo_with_threads(&plan, &config, 1).unwrap();
        let four = par_monte_carlo_with_threads(&plan, &config, 4).unwrap();
        assert_eq!(seq, one);
        assert_eq!(seq, four);
    }
}
