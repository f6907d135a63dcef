//! Seeded closed-loop Monte Carlo.
//!
//! Stage order inside one trial: measure `Y_t`, form `ξ_t`, quantize with
//! `θ_t` and send, deliver the messages due at `t`, update `X̄_t`, apply
//! `U_t = -L_t X̄_t`, then advance the plant. Messages due at or after `T` are
//! paid for but never delivered.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::estimator::{ChannelMessage, EstimatorError, EstimatorState};
use crate::innovation::{self, InnovationError, InnovationStatistics, SensorFilterState};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{ScenarioModel, TrajectoryRecord};
use crate::quadrature::QuadratureConfig;
use crate::quantizer::{self, CellMomentTable, QuantizerBank, QuantizerError};
use crate::selection::{self, C0Breakdown, SelectionError, SelectionSchedule};
use crate::synthesis::{self, RiccatiSolution, SynthesisError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Innovation(#[from] InnovationError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error("bank output dimension {bank} does not match the plant output dimension {plant}")]
    OutputDimension { bank: usize, plant: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("trial {trial}: {source}")]
    Estimator { trial: usize, source: EstimatorError },
    #[error("trial {trial}: {source}")]
    Innovation { trial: usize, source: InnovationError },
    #[error("trial {trial}: {source}")]
    Quantizer { trial: usize, source: QuantizerError },
    #[error(transparent)]
    Schedule(#[from] SelectionError),
    #[error("at least one trial is required")]
    NoTrials,
}

/// Everything computed before the loop runs.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflinePlan {
    pub model: ScenarioModel,
    pub bank: QuantizerBank,
    pub riccati: RiccatiSolution,
    pub stats: InnovationStatistics,
    pub moments: CellMomentTable,
    pub schedule: SelectionSchedule,
    noise: NoiseFactors,
}

/// Symmetric square roots of the noise covariances.
#[derive(Debug, Clone, PartialEq)]
struct NoiseFactors {
    initial: Matrix,
    process: Matrix,
    measurement: Matrix,
}

impl OfflinePlan {
    pub fn build(model: &ScenarioModel, bank: &QuantizerBank, config: &QuadratureConfig) -> Result<Self, PlanError> {
        if bank.output_dim() != model.output_dim() {
            return Err(PlanError::OutputDimension { bank: bank.output_dim(), plant: model.output_dim() });
        }
        let riccati = synthesis::solve_riccati(model)?;
        let stats = innovation::propagate_statistics(model)?;
        let moments = quantizer::build_moment_tables(bank, &stats, config)?;
        Ok(Self::assemble(model.clone(), bank.clone(), riccati, stats, moments))
    }

    /// Combine precomputed tables (for instance loaded from disk).
    pub fn assemble(
        model: ScenarioModel,
        bank: QuantizerBank,
        riccati: RiccatiSolution,
        stats: InnovationStatistics,
        moments: CellMomentTable,
    ) -> Self {
        let schedule = SelectionSchedule::build(&model, &stats, &riccati, &moments, bank.delays(), &bank.prices());
        let noise = NoiseFactors {
            initial: linalg::psd_sqrt(model.sigma_x()),
            process: linalg::psd_sqrt(model.w()),
            measurement: linalg::psd_sqrt(model.v()),
        };
        Self { model, bank, riccati, stats, moments, schedule, noise }
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon()
    }

    /// `J = tr(P_0(Σ_x + μ_0μ_0ᵀ)) + r_0 + C₀(Θ)` for any schedule.
    pub fn theoretical_cost(&self, theta: &[usize]) -> Result<(f64, C0Breakdown), SelectionError> {
        let c0 = selection::evaluate_c0(
            theta,
            &self.stats,
            &self.riccati,
            &self.moments,
            self.bank.delays(),
            &self.bank.prices(),
        )?;
        Ok((self.schedule.control_cost + c0.total(), c0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub trials: usize,
    pub master_seed: u64,
    /// Bank position per stage; `None` uses the optimal schedule.
    pub schedule: Option<Vec<usize>>,
    pub record_trajectories: bool,
}

impl SimulationConfig {
    pub fn new(trials: usize, master_seed: u64) -> Self {
        Self { trials, master_seed, schedule: None, record_trajectories: false }
    }
}

/// Generator for one trial: the master seed picks the key, the trial index
/// the stream, so trials never share random numbers and can run in any order.
pub fn trial_rng(master_seed: u64, trial: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, factor: &Matrix) -> Vector {
    let z = Vector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}

/// Pending messages ordered by arrival time, then origin time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelQueue {
    pending: BTreeMap<(usize, usize), ChannelMessage>,
}

impl ChannelQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: ChannelMessage) {
        self.pending.insert((msg.arrival_time, msg.origin_time), msg);
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Remove and return the messages arriving exactly at `t`, by origin time.
pub fn channel_deliver(queue: &mut ChannelQueue, t: usize) -> Vec<ChannelMessage> {
    let keys: Vec<(usize, usize)> = queue.pending.range((t, 0)..=(t, usize::MAX)).map(|(k, _)| *k).collect();
    keys.into_iter().filter_map(|k| queue.pending.remove(&k)).collect()
}

/// One closed-loop run of `theta` with the given generator.
pub fn run_trial<R: Rng + ?Sized>(
    plan: &OfflinePlan,
    theta: &[usize],
    trial: usize,
    rng: &mut R,
) -> Result<TrajectoryRecord, SimulationError> {
    let model = &plan.model;
    let horizon = model.horizon();
    if theta.len() != horizon {
        return Err(SelectionError::LengthMismatch { expected: horizon, found: theta.len() }.into());
    }
    if let Some((t, &s)) = theta.iter().enumerate().find(|(_, &s)| s >= plan.bank.len()) {
        return Err(SelectionError::UnknownQuantizer { t, selection: s, bank_size: plan.bank.len() }.into());
    }
    let delays = plan.bank.delays();
    let prices = plan.bank.prices();

    let mut rec = TrajectoryRecord {
        states: Vec::with_capacity(horizon + 1),
        inputs: Vec::with_capacity(horizon),
        outputs: Vec::with_capacity(horizon),
        innovations: Vec::with_capacity(horizon),
        estimates: Vec::with_capacity(horizon),
        selections: theta.to_vec(),
        arrivals: Vec::with_capacity(horizon),
        state_cost: 0.0,
        input_cost: 0.0,
        price_cost: 0.0,
        realized_cost: 0.0,
    };
    let mut sensor = SensorFilterState::new(model);
    let mut estimator = EstimatorState::new(model);
    let mut queue = ChannelQueue::new();

    let mut x = model.mu0() + gaussian(rng, &plan.noise.initial);
    for t in 0..horizon {
        let y = model.c() * &x + gaussian(rng, &plan.noise.measurement);
        let u_prev = rec.inputs.last();
        let xi = sensor
            .step(model, &plan.stats, &y, u_prev)
            .map_err(|source| SimulationError::Innovation { trial, source })?;

        let choice = theta[t];
        let cell = plan.bank.quantizers()[choice]
            .quantize(xi.as_slice())
            .map_err(|source| SimulationError::Quantizer { trial, source })?;
        let msg = ChannelMessage::new(choice, cell, t, delays);
        if msg.arrival_time < horizon {
            queue.push(msg);
        }

        let arrivals = channel_deliver(&mut queue, t);
        let xbar = estimator
            .step(model, u_prev, &arrivals, &plan.stats, &plan.moments)
            .map_err(|source| SimulationError::Estimator { trial, source })?
            .clone();
        let u = synthesis::control_gain_apply(&plan.riccati.l[t], &xbar);

        let state_cost = x.dot(&(model.q1() * &x));
        let input_cost = u.dot(&(model.r() * &u));
        rec.state_cost += state_cost;
        rec.input_cost += input_cost;
        rec.price_cost += prices[choice];
        rec.realized_cost += state_cost + input_cost + prices[choice];

        let next = model.a() * &x + model.b() * &u + gaussian(rng, &plan.noise.process);
        rec.states.push(core::mem::replace(&mut x, next));
        rec.inputs.push(u);
        rec.outputs.push(y);
        rec.innovations.push(xi);
        rec.estimates.push(xbar);
        rec.arrivals.push(arrivals.iter().map(|m| m.origin_time).collect());
    }
    let terminal = x.dot(&(model.q2() * &x));
    rec.state_cost += terminal;
    rec.realized_cost += terminal;
    rec.states.push(x);
    Ok(rec)
}

/// Per-trial cost components, in trial order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialCost {
    pub state: f64,
    pub input: f64,
    pub price: f64,
    pub total: f64,
}

impl From<&TrajectoryRecord> for TrialCost {
    fn from(rec: &TrajectoryRecord) -> Self {
        Self { state: rec.state_cost, input: rec.input_cost, price: rec.price_cost, total: rec.realized_cost }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub state: f64,
    pub input: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub trials: usize,
    pub empirical_mean: f64,
    /// Sample standard deviation over `√N`; `None` when `N = 1`.
    pub empirical_stderr: Option<f64>,
    /// `tr(P_0(Σ_x + μ_0μ_0ᵀ)) + r_0 + C₀(Θ)`.
    pub theoretical: f64,
    pub control_cost: f64,
    pub c0: C0Breakdown,
    /// Empirical means of the cost components.
    pub breakdown: CostBreakdown,
    pub schedule: Vec<usize>,
}

impl CostReport {
    /// `|empirical − theoretical| / stderr`.
    pub fn z_score(&self) -> Option<f64> {
        self.empirical_stderr.map(|s| (self.empirical_mean - self.theoretical).abs() / s)
    }
}

fn mean(values: &[f64]) -> f64 {
    linalg::pairwise_sum(values) / values.len() as f64
}

/// Aggregate ordered per-trial costs into a report.
pub fn summarize(plan: &OfflinePlan, theta: &[usize], costs: &[TrialCost]) -> Result<CostReport, SimulationError> {
    if costs.is_empty() {
        return Err(SimulationError::NoTrials);
    }
    let n = costs.len();
    let totals: Vec<f64> = costs.iter().map(|c| c.total).collect();
    let empirical_mean = mean(&totals);
    let empirical_stderr = (n > 1).then(|| {
        let squares: Vec<f64> = totals.iter().map(|v| (v - empirical_mean) * (v - empirical_mean)).collect();
        libm::sqrt(linalg::pairwise_sum(&squares) / (n - 1) as f64 / n as f64)
    });
    let component = |f: fn(&TrialCost) -> f64| mean(&costs.iter().map(f).collect::<Vec<_>>());
    let (theoretical, c0) = plan.theoretical_cost(theta)?;
    Ok(CostReport {
        trials: n,
        empirical_mean,
        empirical_stderr,
        theoretical,
        control_cost: plan.schedule.control_cost,
        c0,
        breakdown: CostBreakdown {
            state: component(|c| c.state),
            input: component(|c| c.input),
            price: component(|c| c.price),
        },
        schedule: theta.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOutcome {
    pub report: CostReport,
    /// Filled only when `record_trajectories` is set.
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Run `config.trials` trials sequentially.
pub fn monte_carlo(plan: &OfflinePlan, config: &SimulationConfig) -> Result<MonteCarloOutcome, SimulationError> {
    if config.trials == 0 {
        return Err(SimulationError::NoTrials);
    }
    let theta = config.schedule.as_deref().unwrap_or(&plan.schedule.theta_star);
    let mut costs = Vec::with_capacity(config.trials);
    let mut trajectories = Vec::new();
    for trial in 0..config.trials {
        let rec = run_trial(plan, theta, trial, &mut trial_rng(config.master_seed, trial))?;
        costs.push(TrialCost::from(&rec));
        if config.record_trajectories {
            trajectories.push(rec);
        }
    }
    Ok(MonteCarloOutcome { report: summarize(plan, theta, &costs)?, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;
    use crate::scenarios;
    use alloc::vec;

    fn plan(horizon: i64) -> OfflinePlan {
        let mut raw = scenarios::example_raw();
        raw.horizon = horizon;
        let model = validate_scenario(&raw).unwrap();
        OfflinePlan::build(&model, &scenarios::example_bank(1, [100.0, 200.0, 300.0]), &QuadratureConfig::default())
            .unwrap()
    }

    #[test]
    fn queue_delivers_by_arrival_then_origin() {
        let mut q = ChannelQueue::new();
        assert!(channel_deliver(&mut q, 0).is_empty());
        for origin in [5, 3] {
            q.push(ChannelMessage { quantizer_index: 0, cell_index: 0, origin_time: origin, arrival_time: 7 });
        }
        q.push(ChannelMessage { quantizer_index: 0, cell_index: 0, origin_time: 6, arrival_time: 8 });
        let got: Vec<usize> = channel_deliver(&mut q, 7).iter().map(|m| m.origin_time).collect();
        assert_eq!(got, [3, 5]);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn noiseless_plant_pays_only_prices() {
        let mut raw = scenarios::example_raw();
        raw.horizon = 6;
        raw.w = Matrix::zeros(2, 2);
        raw.v = Matrix::zeros(2, 2);
        raw.sigma_x = Matrix::zeros(2, 2);
        let model = validate_scenario(&raw).unwrap();
        let p = OfflinePlan::build(&model, &scenarios::example_bank(1, [1.0, 2.0, 3.0]), &QuadratureConfig::default())
            .unwrap();
        let theta = [0, 1, 2, 2, 1, 0];
        let rec = run_trial(&p, &theta, 0, &mut trial_rng(9, 0)).unwrap();
        assert!(rec.states.iter().all(|x| x.amax() == 0.0));
        assert!(rec.inputs.iter().all(|u| u.amax() == 0.0));
        assert_eq!(rec.realized_cost, 12.0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = plan(10);
        let theta = p.schedule.theta_star.clone();
        let a = run_trial(&p, &theta, 3, &mut trial_rng(42, 3)).unwrap();
        let b = run_trial(&p, &theta, 3, &mut trial_rng(42, 3)).unwrap();
        assert_eq!(a, b);
        let c = run_trial(&p, &theta, 4, &mut trial_rng(42, 4)).unwrap();
        assert_ne!(a.states, c.states);
        assert!(a.lengths_match(10));
        assert!(a.is_self_consistent(&p.model, &p.bank.prices()));
    }

    #[test]
    fn single_trial_has_no_stderr() {
        let p = plan(5);
        let out = monte_carlo(&p, &SimulationConfig::new(1, 7)).unwrap();
        assert_eq!(out.report.empirical_stderr, None);
        assert!(out.trajectories.is_empty());
        assert_eq!(monte_carlo(&p, &SimulationConfig::new(0, 7)), Err(SimulationError::NoTrials));
    }

    #[test]
    fn late_messages_are_never_delivered() {
        let p = plan(4);
        let rec = run_trial(&p, &[2, 2, 2, 2], 0, &mut trial_rng(1, 0)).unwrap();
        // d = 3: only the stage-0 message lands inside the horizon
        assert_eq!(rec.arrivals, vec![vec![], vec![], vec![], vec![0]]);
        assert_eq!(rec.price_cost, 1200.0);
    }
}
