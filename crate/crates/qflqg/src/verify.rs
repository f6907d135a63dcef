//! The oracle suite behind `qflqg verify`.
//!
//! Every check compares a production code path against an independent
//! computation from [`crate::oracles`] or against a structural property of
//! the selection problem. Checks report rather than panic, so one run lists
//! every failure.

use std::fmt;

use qflqg_core::estimator::{batch_estimate, ChannelMessage};
use qflqg_core::quadrature::QuadratureConfig;
use qflqg_core::quantizer::QuantizerBank;
use qflqg_core::selection::{
    brute_force_with, evaluate_c0_with, export_milp, linearized_variable_cost, NTildeTable, BRUTE_FORCE_LIMIT,
};
use qflqg_core::simulate::{OfflinePlan, PlanError};
use qflqg_core::{scenarios, validate_scenario, Matrix, ScenarioModel, SimulationError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::oracles::{self, GramOracle};
use crate::parallel::par_trials;

/// Test hooks that deliberately break one input of a check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale every `Ñ` entry seen by the brute-force search by 2.
    NTilde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Trials for the sampling checks.
    pub trials: usize,
    /// Largest `M^T` the brute-force check will enumerate.
    pub max_sequences: f64,
    pub quadrature: QuadratureConfig,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 1, trials: 2000, max_sequences: BRUTE_FORCE_LIMIT, quadrature: QuadratureConfig::default(), fault: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.status == Status::Fail)
    }

    fn record(&mut self, name: &'static str, ok: bool, detail: String) {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.checks.push(CheckResult { name, status, detail });
    }

    fn skip(&mut self, name: &'static str, detail: String) {
        self.checks.push(CheckResult { name, status: Status::Skipped, detail });
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// A small random instance: `n, m ≤ 3`, `p ≤ 2`, three quantizers with
/// delays drawn from `{0, 1, 2, 3}` at bit-rate 1, and prices drawn
/// uniformly from `[0, 1.2 max β]` so that the selection is not trivial.
pub fn random_instance(seed: u64, horizon: usize) -> (ScenarioModel, QuantizerBank) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (n, m, p) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=2));
    let p = p.min(n);
    let model = validate_scenario(&scenarios::random_raw(&mut rng, n, m, p, horizon)).expect("generated scenario is valid");
    let delays: Vec<usize> = (0..3).map(|_| rng.random_range(0..=3)).collect();
    let bank = scenarios::random_bank(&mut rng, p, &delays, 1.0);
    let plan = OfflinePlan::build(&model, &bank, &QuadratureConfig::default()).expect("generated instance is well posed");
    let max_beta = plan.schedule.beta.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let prices: Vec<f64> = (0..bank.len()).map(|_| rng.random_range(0.0..=1.0) * 1.2 * max_beta).collect();
    let bank = bank.with_prices(&prices).expect("prices are finite and nonnegative");
    (model, bank)
}

fn rel_max_abs(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Run all checks on one instance.
pub fn verify(model: &ScenarioModel, bank: &QuantizerBank, options: &VerifyOptions) -> Result<VerifyReport, VerifyError> {
    let plan = OfflinePlan::build(model, bank, &options.quadrature)?;
    let mut report = VerifyReport::default();
    let horizon = model.horizon();
    let delays = plan.bank.delays().to_vec();
    let prices = plan.bank.prices();
    let schedule = &plan.schedule;
    let mut rng = ChaCha12Rng::seed_from_u64(options.seed ^ 0x5eed);

    let (p_or, l_or) = oracles::riccati_oracle(model);
    let err = (0..horizon)
        .map(|k| rel_max_abs(&plan.riccati.p[k], &p_or[k]).max(rel_max_abs(&plan.riccati.l[k], &l_or[k])))
        .fold(0.0, f64::max);
    report.record("riccati-oracle", err <= 1e-10, format!("max relative deviation of P_k, L_k {err:.2e}"));

    let gram = GramOracle::new(model);
    let err = (0..horizon)
        .map(|t| {
            let (m, k) = gram.innovation_covariance_and_gain(t);
            rel_max_abs(&plan.stats.m[t], &m).max(rel_max_abs(&plan.stats.k[t], &k))
        })
        .fold(0.0, f64::max);
    report.record("innovation-oracle", err <= 1e-8, format!("max relative deviation of M_t, K_t {err:.2e}"));

    // cell probabilities at the first and last stage, by sampling
    let samples = options.trials.max(1000) * 5;
    let mut worst = 0.0f64;
    for t in [0, horizon - 1] {
        for (i, spec) in plan.bank.quantizers().iter().enumerate() {
            for (j, cell) in spec.cells.iter().enumerate() {
                let sampled = oracles::sampled_box_moments(&plan.stats.m[t], cell, samples, &mut rng);
                let exact = plan.moments.entries[t][i].cells[j].prob;
                worst = worst.max((sampled.prob - exact).abs() / (5.0 * sampled.prob_se + 1e-3));
            }
        }
    }
    report.record("cell-moment-oracle", worst <= 1.0, format!("worst deviation {worst:.2} of the 5-sigma band"));

    let scale = schedule.c.iter().flatten().fold(1.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-10 * scale * horizon as f64;
    let nt = NTildeTable::build(&plan.stats, &plan.riccati);
    let linear_opt = schedule.optimal_variable_cost();
    let sequences = (delays.len() as f64).powi(horizon as i32);
    if sequences <= options.max_sequences.min(BRUTE_FORCE_LIMIT) {
        let mut searched = nt.clone();
        if options.fault == Some(Fault::NTilde) {
            searched.rows.iter_mut().flatten().for_each(|m| *m *= 2.0);
        }
        let brute = brute_force_with(&searched, &plan.moments, &delays, &prices).expect("within the enumeration limit");
        let diff = (brute.objective - linear_opt).abs();
        report.record(
            "brute-force-schedule",
            diff <= tol,
            format!("{} sequences, exhaustive optimum {} vs stagewise {linear_opt} (diff {diff:.2e})", brute.sequences, brute.objective),
        );
    } else {
        report.skip("brute-force-schedule", format!("{sequences:e} sequences exceed the budget"));
    }

    let lp_text = export_milp(&schedule.c);
    match oracles::parse_lp(&lp_text) {
        Ok(lp) => {
            let at_star = lp.objective_value(&oracles::schedule_assignment(&schedule.theta_star, delays.len()));
            let mut ok = (at_star - linear_opt).abs() <= tol;
            let mut detail = format!("objective at the selected schedule {at_star}");
            match lp.solve_by_enumeration() {
                Ok((_, best)) => {
                    ok &= (best - linear_opt).abs() <= tol;
                    detail.push_str(&format!(", enumerated optimum {best}"));
                }
                Err(oracles::LpError::TooLarge(_)) => detail.push_str(", too many binaries to enumerate"),
                Err(e) => {
                    ok = false;
                    detail.push_str(&format!(", {e}"));
                }
            }
            report.record("milp-export", ok, detail);
        }
        Err(e) => report.record("milp-export", false, e.to_string()),
    }

    // the Π-form and the linearization agree on arbitrary schedules
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let theta: Vec<usize> = (0..horizon).map(|_| rng.random_range(0..delays.len())).collect();
        let pi = evaluate_c0_with(&theta, &plan.stats, &plan.riccati, &nt, &plan.moments, &delays, &prices)
            .expect("schedule is well formed")
            .variable();
        worst = worst.max((pi - linearized_variable_cost(&theta, &schedule.c)).abs());
    }
    report.record("linearization", worst <= tol, format!("max |Π-form − Σ c| over 20 random schedules {worst:.2e}"));

    let tail_ok = (0..horizon).all(|t| {
        (0..delays.len()).all(|i| t + delays[i] < horizon || (schedule.beta[t][i] == 0.0 && schedule.c[t][i] == prices[i]))
    });
    report.record("tail-rule", tail_ok, "c equals the price wherever the message would arrive after the horizon".into());

    let min_beta = schedule.beta.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    report.record("beta-nonnegative", min_beta >= -1e-9 * scale, format!("smallest β {min_beta:.3e}"));

    let records = par_trials(&plan, &schedule.theta_star, options.seed, options.trials)?;

    let mut worst_est = 0.0f64;
    let mut worst_innov = 0.0f64;
    for rec in records.iter().take(20) {
        let mut delivered: Vec<Vec<ChannelMessage>> = vec![Vec::new(); horizon];
        for (t, origins) in rec.arrivals.iter().enumerate() {
            for &k in origins {
                let q = rec.selections[k];
                let cell = plan.bank.quantizers()[q].quantize(rec.innovations[k].as_slice()).expect("cells partition the space");
                delivered[t].push(ChannelMessage::new(q, cell, k, &delays));
            }
        }
        for t in 0..horizon {
            let batch = batch_estimate(model, &plan.stats, &plan.moments, &delivered, &rec.inputs, t).expect("consistent history");
            worst_est = worst_est.max((&batch - &rec.estimates[t]).amax() / batch.amax().max(1.0));
        }
        for (a, b) in gram.batch_innovations(&rec.outputs, &rec.inputs).iter().zip(&rec.innovations) {
            worst_innov = worst_innov.max((a - b).amax() / a.amax().max(1.0));
        }
    }
    report.record("estimator-batch", worst_est <= 1e-12, format!("max relative deviation {worst_est:.2e}"));
    report.record("innovation-batch", worst_innov <= 1e-8, format!("max relative deviation {worst_innov:.2e}"));

    let (white, detail) = whiteness(&plan, &records);
    report.record("innovation-whiteness", white, detail);
    Ok(report)
}

/// Cross moments of distinct stages below `5 max‖M‖∞ / √N`, and per-stage
/// sample covariance within `5√(2/N)` relative Frobenius error.
fn whiteness(plan: &OfflinePlan, records: &[qflqg_core::TrajectoryRecord]) -> (bool, String) {
    let n = records.len() as f64;
    let horizon = plan.horizon();
    let p = plan.stats.m[0].nrows();
    let m_max = plan.stats.m.iter().map(|m| m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max)).fold(0.0, f64::max);
    let cross_tol = 5.0 * m_max / n.sqrt();
    let cov_tol = 5.0 * (2.0 / n).sqrt();
    let mut worst_cross = 0.0f64;
    let mut worst_cov = 0.0f64;
    for t in 0..horizon {
        for s in 0..=t {
            let mut acc = Matrix::zeros(p, p);
            for rec in records {
                acc += &rec.innovations[t] * rec.innovations[s].transpose();
            }
            acc /= n;
            if s == t {
                let m = &plan.stats.m[t];
                worst_cov = worst_cov.max((&acc - m).norm() / m.norm());
            } else {
                worst_cross = worst_cross.max(acc.amax());
            }
        }
    }
    let ok = worst_cross < cross_tol && worst_cov <= cov_tol;
    (ok, format!("max cross moment {worst_cross:.3e} (bound {cross_tol:.3e}), max covariance error {worst_cov:.3} (bound {cov_tol:.3})"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_passes() {
        let (model, bank) = random_instance(1, 5);
        let opts = VerifyOptions { trials: 500, ..VerifyOptions::default() };
        let report = verify(&model, &bank, &opts).unwrap();
        for c in &report.checks {
            println!("{c}");
        }
        assert!(report.passed(), "{:?}", report.first_failure());
    }

    #[test]
    fn corrupted_ntilde_is_caught() {
        let (model, bank) = random_instance(1, 5);
        let opts = VerifyOptions { trials: 200, fault: Some(Fault::NTilde), ..VerifyOptions::default() };
        let report = verify(&model, &bank, &opts).unwrap();
        assert_eq!(report.first_failure().map(|c| c.name), Some("brute-force-schedule"));
    }
}
