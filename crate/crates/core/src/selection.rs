//! Offline quantizer selection.
//!
//! With `Ñ_{k,t} = Ψ(t,k)ᵀN_tΨ(t,k)`, the part of the expected cost that
//! depends on the schedule `Θ` is
//!
//! ```text
//! Σ_t tr(Π_t(Θ) F_t(θ_t)) + λ_{θ_t},    Π_t(Θ) = -Σ_{ℓ=t}^{T-1} ϑ_{t,ℓ} Ñ_{t,ℓ}
//! ```
//!
//! Since `ϑ_{t,ℓ}` depends on `θ_t` only, the objective separates into
//! per-stage terms `c_t^i = λ_i - β_t^i` and the optimum is a per-stage argmin.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::innovation::InnovationStatistics;
use crate::linalg::{self, Matrix};
use crate::model::ScenarioModel;
use crate::quantizer::CellMomentTable;
use crate::synthesis::{self, RiccatiSolution};

/// Largest number of sequences [`brute_force_schedule`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("time index out of range: k={k}, t={t}, horizon {horizon}")]
    IndexOutOfRange { k: usize, t: usize, horizon: usize },
    #[error("{sequences:e} candidate schedules exceed the enumeration limit")]
    InstanceTooLarge { sequences: f64 },
    #[error("schedule length {found} does not match horizon {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("selection {selection} at t={t} is not a quantizer of the bank ({bank_size} available)")]
    UnknownQuantizer { t: usize, selection: usize, bank_size: usize },
}

/// `[Φ]_{ij} = 1` iff `i ≥ d_j`, for rows `i = 0..T-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayMatrix {
    rows: usize,
    delays: Vec<usize>,
}

impl DelayMatrix {
    pub fn new(delays: &[usize], horizon: usize) -> Self {
        Self { rows: horizon, delays: delays.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.delays.len()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        row < self.rows && row >= self.delays[col]
    }

    /// Dense 0/1 form, row-major.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|i| (0..self.cols()).map(|j| self.get(i, j) as u8).collect()).collect()
    }
}

/// `ϑ_{k,t}`: the message sent at `k` has reached the controller by `t`.
pub fn arrival_indicator(theta: &[usize], k: usize, t: usize, delays: &[usize]) -> bool {
    k <= t && delays[theta[k]] <= t - k
}

/// `Ñ_{k,t} = Ψ(t,k)ᵀ N_t Ψ(t,k)` for `k ≤ t < T`.
pub fn n_tilde(
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    k: usize,
    t: usize,
) -> Result<Matrix, SelectionError> {
    let horizon = stats.horizon();
    let psi = stats.psi(t, k).map_err(|_| SelectionError::IndexOutOfRange { k, t, horizon })?;
    Ok(linalg::symmetrized(psi.transpose() * &riccati.n[t] * psi))
}

/// All `Ñ_{k,t}` with `k ≤ t < T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NTildeTable {
    /// `rows[k][t - k] = Ñ_{k,t}`
    pub rows: Vec<Vec<Matrix>>,
}

impl NTildeTable {
    pub fn build(stats: &InnovationStatistics, riccati: &RiccatiSolution) -> Self {
        let horizon = stats.horizon();
        let rows = (0..horizon)
            .map(|k| (k..horizon).map(|t| n_tilde(stats, riccati, k, t).expect("k ≤ t < T")).collect())
            .collect();
        Self { rows }
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    /// `Ñ_{k,t}`; requires `k ≤ t < T`.
    pub fn get(&self, k: usize, t: usize) -> &Matrix {
        &self.rows[k][t - k]
    }
}

/// `β_t^i` from a precomputed `Ñ` table, accumulating `Σ_{ℓ ≥ t+d} Ñ_{t,ℓ}`
/// as suffix sums. Entries with `t + d_i ≥ T` are exactly zero.
pub fn beta_from_ntilde(nt: &NTildeTable, moments: &CellMomentTable, delays: &[usize]) -> Vec<Vec<f64>> {
    let horizon = nt.horizon();
    let mut beta = vec![vec![0.0; delays.len()]; horizon];
    for (t, row) in beta.iter_mut().enumerate() {
        // suffix[j] = Σ_{ℓ = t+j}^{T-1} Ñ_{t,ℓ}
        let span = horizon - t;
        let dim = nt.get(t, t).nrows();
        let mut suffix = vec![Matrix::zeros(dim, dim); span + 1];
        for j in (0..span).rev() {
            suffix[j] = &suffix[j + 1] + nt.get(t, t + j);
        }
        for (i, &d) in delays.iter().enumerate() {
            if d < span {
                row[i] = linalg::trace_product(&suffix[d], moments.f(t, i));
            }
        }
    }
    beta
}

/// `β_t^i = tr((Σ_ℓ [Φ]_{ℓ-t,i} Ñ_{t,ℓ}) F_t^i)`.
pub fn beta_coefficients(
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    delays: &[usize],
    moments: &CellMomentTable,
) -> Vec<Vec<f64>> {
    beta_from_ntilde(&NTildeTable::build(stats, riccati), moments, delays)
}

/// `H(t,d) = Σ_{ℓ=t+d}^{T-1} Ñ_{t,ℓ}`, summed directly.
pub fn constant_delay_h(
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    t: usize,
    d: usize,
) -> Result<Matrix, SelectionError> {
    let horizon = stats.horizon();
    let dim = stats.m.first().map_or(0, Matrix::nrows);
    if t >= horizon {
        return Err(SelectionError::IndexOutOfRange { k: t, t, horizon });
    }
    let mut h = Matrix::zeros(dim, dim);
    // far end first, the order in which the general path accumulates
    for l in ((t + d)..horizon).rev() {
        h += n_tilde(stats, riccati, t, l)?;
    }
    Ok(h)
}

/// `β_t^i = tr(H(t,d) F_t^i)` when every quantizer has the same delay `d`.
pub fn constant_delay_beta(
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    d: usize,
    quantizers: usize,
    moments: &CellMomentTable,
) -> Result<Vec<Vec<f64>>, SelectionError> {
    (0..stats.horizon())
        .map(|t| {
            let h = constant_delay_h(stats, riccati, t, d)?;
            Ok((0..quantizers).map(|i| linalg::trace_product(&h, moments.f(t, i))).collect())
        })
        .collect()
}

/// Full observation (`C = I`, `V = 0`): `Ψ(t,k) = A^{t-k}`, so
/// `Σ_{ℓ ≥ t+d} Ñ_{t,ℓ} = (A^d)ᵀ Υ_{t+d} A^d` and
/// `β_t^i = tr((A^{d_i})ᵀ Υ_{t+d_i} A^{d_i} F_t^i)`, zero once `t + d_i ≥ T`.
pub fn full_observation_beta(
    a: &Matrix,
    riccati: &RiccatiSolution,
    delays: &[usize],
    moments: &CellMomentTable,
) -> Vec<Vec<f64>> {
    let horizon = riccati.horizon();
    let upsilon = synthesis::upsilon_recursion(&riccati.n, a);
    let max_delay = delays.iter().copied().max().unwrap_or(0);
    let a_pow = linalg::powers(a, max_delay);
    (0..horizon)
        .map(|t| {
            delays
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    if t + d >= horizon {
                        return 0.0;
                    }
                    let weight = a_pow[d].transpose() * &upsilon[t + d] * &a_pow[d];
                    linalg::trace_product(&weight, moments.f(t, i))
                })
                .collect()
        })
        .collect()
}

/// Index of the smallest entry; the first one wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// `c_t^i = λ_i - β_t^i` and its per-stage argmin.
pub fn optimal_schedule(beta: &[Vec<f64>], prices: &[f64]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let c: Vec<Vec<f64>> =
        beta.iter().map(|row| row.iter().zip(prices).map(|(b, l)| l - b).collect()).collect();
    let theta = c.iter().map(|row| argmin(row)).collect();
    (theta, c)
}

/// Pieces of the quantization-dependent cost `C₀(Θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C0Breakdown {
    /// `Σ_t tr(Σ_t N_t) + Σ_{k≤t} tr(Ñ_{k,t} M_k)`, independent of `Θ`.
    pub constant: f64,
    /// `Σ_t tr(Π_t(Θ) F_t(θ_t))`, nonpositive.
    pub reduction: f64,
    /// `Σ_t λ_{θ_t}`.
    pub price: f64,
}

impl C0Breakdown {
    pub fn total(&self) -> f64 {
        self.constant + self.reduction + self.price
    }

    /// The part that depends on the schedule.
    pub fn variable(&self) -> f64 {
        self.reduction + self.price
    }
}

/// The schedule-independent part of `C₀`.
pub fn c0_constant(stats: &InnovationStatistics, riccati: &RiccatiSolution, nt: &NTildeTable) -> f64 {
    let horizon = stats.horizon();
    let mut total = 0.0;
    for t in 0..horizon {
        total += linalg::trace_product(&stats.sigma_filt[t], &riccati.n[t]);
        for k in 0..=t {
            total += linalg::trace_product(nt.get(k, t), &stats.m[k]);
        }
    }
    total
}

fn check_schedule(theta: &[usize], horizon: usize, bank_size: usize) -> Result<(), SelectionError> {
    if theta.len() != horizon {
        return Err(SelectionError::LengthMismatch { expected: horizon, found: theta.len() });
    }
    if let Some((t, &s)) = theta.iter().enumerate().find(|(_, &s)| s >= bank_size) {
        return Err(SelectionError::UnknownQuantizer { t, selection: s, bank_size });
    }
    Ok(())
}

/// `Σ_t tr(Π_t(Θ) F_t(θ_t))` with `Π_t` built from the delay matrix.
fn reduction_term(theta: &[usize], nt: &NTildeTable, moments: &CellMomentTable, phi: &DelayMatrix) -> f64 {
    let horizon = theta.len();
    let mut total = 0.0;
    for (t, &i) in theta.iter().enumerate() {
        let dim = nt.get(t, t).nrows();
        let mut pi = Matrix::zeros(dim, dim);
        for l in t..horizon {
            if phi.get(l - t, i) {
                pi -= nt.get(t, l);
            }
        }
        total += linalg::trace_product(&pi, moments.f(t, i));
    }
    total
}

/// `C₀(Θ)` in the Π-form, for any schedule.
pub fn evaluate_c0(
    theta: &[usize],
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    moments: &CellMomentTable,
    delays: &[usize],
    prices: &[f64],
) -> Result<C0Breakdown, SelectionError> {
    let nt = NTildeTable::build(stats, riccati);
    evaluate_c0_with(theta, stats, riccati, &nt, moments, delays, prices)
}

/// [`evaluate_c0`] reusing a precomputed `Ñ` table.
pub fn evaluate_c0_with(
    theta: &[usize],
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    nt: &NTildeTable,
    moments: &CellMomentTable,
    delays: &[usize],
    prices: &[f64],
) -> Result<C0Breakdown, SelectionError> {
    let horizon = stats.horizon();
    check_schedule(theta, horizon, delays.len())?;
    let phi = DelayMatrix::new(delays, horizon);
    Ok(C0Breakdown {
        constant: c0_constant(stats, riccati, nt),
        reduction: reduction_term(theta, nt, moments, &phi),
        price: theta.iter().map(|&i| prices[i]).sum(),
    })
}

/// Schedule-dependent part of `C₀` through the linearization: `Σ_t c_t^{θ_t}`.
pub fn linearized_variable_cost(theta: &[usize], c: &[Vec<f64>]) -> f64 {
    theta.iter().zip(c).map(|(&i, row)| row[i]).sum()
}

/// `E[e_t e_tᵀ]` for the estimation error `e_t = X_t - X̄_t` under `Θ`.
pub fn error_second_moment(
    theta: &[usize],
    stats: &InnovationStatistics,
    moments: &CellMomentTable,
    delays: &[usize],
    t: usize,
) -> Result<Matrix, SelectionError> {
    let horizon = stats.horizon();
    check_schedule(theta, horizon, delays.len())?;
    if t >= horizon {
        return Err(SelectionError::IndexOutOfRange { k: t, t, horizon });
    }
    let mut out = stats.sigma_filt[t].clone();
    for k in 0..=t {
        let psi = stats.psi(t, k).expect("k ≤ t < T");
        let residual = if arrival_indicator(theta, k, t, delays) { moments.mcal(k, theta[k]) } else { &stats.m[k] };
        out += &psi * residual * psi.transpose();
    }
    Ok(linalg::symmetrized(out))
}

/// Offline selection result.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSchedule {
    /// `β_t^i`, `T × M`.
    pub beta: Vec<Vec<f64>>,
    /// `c_t^i = λ_i - β_t^i`, `T × M`.
    pub c: Vec<Vec<f64>>,
    /// Selected bank position per stage.
    pub theta_star: Vec<usize>,
    pub c0: C0Breakdown,
    /// `tr(P_0(Σ_x + μ_0μ_0ᵀ)) + r_0`.
    pub control_cost: f64,
    /// `control_cost + C₀`.
    pub j_star: f64,
}

/// `tr(P_0(Σ_x + μ_0μ_0ᵀ)) + r_0`, the cost with perfect state information
/// apart from `C₀`.
pub fn control_cost(model: &ScenarioModel, riccati: &RiccatiSolution) -> f64 {
    let mu = model.mu0();
    let second = model.sigma_x() + mu * mu.transpose();
    linalg::trace_product(&riccati.p[0], &second) + riccati.r[0]
}

impl SelectionSchedule {
    /// Optimal schedule for the given offline tables.
    pub fn build(
        model: &ScenarioModel,
        stats: &InnovationStatistics,
        riccati: &RiccatiSolution,
        moments: &CellMomentTable,
        delays: &[usize],
        prices: &[f64],
    ) -> Self {
        let nt = NTildeTable::build(stats, riccati);
        let beta = beta_from_ntilde(&nt, moments, delays);
        let (theta_star, c) = optimal_schedule(&beta, prices);
        let constant = c0_constant(stats, riccati, &nt);
        let reduction = theta_star.iter().enumerate().map(|(t, &i)| -beta[t][i]).sum();
        let price = theta_star.iter().map(|&i| prices[i]).sum();
        let c0 = C0Breakdown { constant, reduction, price };
        let control_cost = control_cost(model, riccati);
        Self { beta, c, theta_star, c0, control_cost, j_star: control_cost + c0.total() }
    }

    /// `Σ_t min_i c_t^i`.
    pub fn optimal_variable_cost(&self) -> f64 {
        linearized_variable_cost(&self.theta_star, &self.c)
    }
}

fn fmt_coefficient(out: &mut String, value: f64, first: bool) {
    // `{}` prints the shortest representation that reads back exactly
    match (first, value.is_sign_negative()) {
        (true, false) => write!(out, "{value}"),
        (true, true) => write!(out, "- {}", -value),
        (false, false) => write!(out, " + {value}"),
        (false, true) => write!(out, " - {}", -value),
    }
    .expect("writing to a String");
}

/// The selection problem as a binary program in LP file format.
///
/// Variable `x_t_i` is 1 iff quantizer `i` (1-based bank position) is used at
/// stage `t` (0-based).
pub fn export_milp(c: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str("\\ quantizer selection: min sum_t c_t' theta_t, one quantizer per stage\n");
    out.push_str("Minimize\n obj:");
    let mut first = true;
    let mut on_line = 0;
    for (t, row) in c.iter().enumerate() {
        for (i, &value) in row.iter().enumerate() {
            if on_line == 4 {
                out.push_str("\n    ");
                on_line = 0;
            }
            if first {
                out.push(' ');
            }
            fmt_coefficient(&mut out, value, first);
            out.push_str(&format!(" x_{t}_{}", i + 1));
            first = false;
            on_line += 1;
        }
    }
    if first {
        out.push_str(" 0 x_0_1");
    }
    out.push_str("\nSubject To\n");
    for (t, row) in c.iter().enumerate() {
        let vars: Vec<String> = (1..=row.len()).map(|i| format!("x_{t}_{i}")).collect();
        let _ = writeln!(out, " stage_{t}: {} = 1", vars.join(" + "));
    }
    out.push_str("Binary\n");
    for (t, row) in c.iter().enumerate() {
        let vars: Vec<String> = (1..=row.len()).map(|i| format!("x_{t}_{i}")).collect();
        let _ = writeln!(out, " {}", vars.join(" "));
    }
    out.push_str("End\n");
    out
}

/// Result of exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub theta: Vec<usize>,
    /// Schedule-dependent part of `C₀` (Π-form) at the optimum.
    pub objective: f64,
    pub sequences: usize,
}

/// Exhaustive search over all `M^T` schedules of the Π-form objective.
pub fn brute_force_schedule(
    stats: &InnovationStatistics,
    riccati: &RiccatiSolution,
    moments: &CellMomentTable,
    delays: &[usize],
    prices: &[f64],
) -> Result<BruteForceResult, SelectionError> {
    let nt = NTildeTable::build(stats, riccati);
    brute_force_with(&nt, moments, delays, prices)
}

/// [`brute_force_schedule`] on a given `Ñ` table (which may be perturbed
/// for fault-injection checks).
pub fn brute_force_with(
    nt: &NTildeTable,
    moments: &CellMomentTable,
    delays: &[usize],
    prices: &[f64],
) -> Result<BruteForceResult, SelectionError> {
    let horizon = nt.horizon();
    let bank = delays.len();
    let sequences = libm::pow(bank as f64, horizon as f64);
    if sequences > BRUTE_FORCE_LIMIT {
        return Err(SelectionError::InstanceTooLarge { sequences });
    }
    let phi = DelayMatrix::new(delays, horizon);
    let mut theta = vec![0usize; horizon];
    let mut best = (f64::INFINITY, theta.clone());
    let mut count = 0;
    loop {
        count += 1;
        let value = reduction_term(&theta, nt, moments, &phi) + theta.iter().map(|&i| prices[i]).sum::<f64>();
        if value < best.0 {
            best = (value, theta.clone());
        }
        // odometer over the last stage first, so sequences appear in lexicographic order
        let mut pos = horizon;
        loop {
            if pos == 0 {
                return Ok(BruteForceResult { theta: best.1, objective: best.0, sequences: count });
            }
            pos -= 1;
            theta[pos] += 1;
            if theta[pos] < bank {
                break;
            }
            theta[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovation::propagate_statistics;
    use crate::model::validate_scenario;
    use crate::quadrature::QuadratureConfig;
    use crate::quantizer::{build_moment_tables, QuantizerBank};
    use crate::scenarios;
    use crate::synthesis::solve_riccati;

    struct Tables {
        model: ScenarioModel,
        stats: InnovationStatistics,
        riccati: RiccatiSolution,
        moments: CellMomentTable,
        bank: QuantizerBank,
    }

    fn tables(raw: crate::model::RawScenario, bank: QuantizerBank) -> Tables {
        let model = validate_scenario(&raw).unwrap();
        let stats = propagate_statistics(&model).unwrap();
        let riccati = solve_riccati(&model).unwrap();
        let moments = build_moment_tables(&bank, &stats, &QuadratureConfig::default()).unwrap();
        Tables { model, stats, riccati, moments, bank }
    }

    fn example(bit_rate: u32, horizon: i64) -> Tables {
        let mut raw = scenarios::example_raw();
        raw.horizon = horizon;
        tables(raw, scenarios::example_bank(bit_rate, [100.0, 200.0, 300.0]))
    }

    #[test]
    fn delay_matrix_shape() {
        let phi = DelayMatrix::new(&[1, 2, 3], 5);
        assert_eq!(phi.to_rows()[0], [0, 0, 0]);
        assert_eq!(phi.to_rows()[2], [1, 1, 0]);
        assert_eq!(phi.to_rows()[4], [1, 1, 1]);
        assert!(DelayMatrix::new(&[0, 2], 3).get(0, 0));
    }

    #[test]
    fn arrival_indicator_cases() {
        let delays = [0, 2];
        let theta = [1, 0, 1];
        assert!(!arrival_indicator(&theta, 0, 0, &delays));
        assert!(!arrival_indicator(&theta, 0, 1, &delays));
        assert!(arrival_indicator(&theta, 0, 2, &delays));
        assert!(arrival_indicator(&theta, 1, 1, &delays));
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        let (theta, c) = optimal_schedule(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 1.0]], &[3.0, 2.0, 5.0]);
        assert_eq!(theta, [1, 1]);
        assert_eq!(c[1], [2.0, 0.0, 4.0]);
        let (tie, _) = optimal_schedule(&[vec![0.0, 1.0]], &[2.0, 3.0]);
        assert_eq!(tie, [0]);
    }

    #[test]
    fn n_tilde_diagonal_is_kalman_weighted() {
        let tb = example(1, 10);
        let nt = n_tilde(&tb.stats, &tb.riccati, 3, 3).unwrap();
        let expected = tb.stats.k[3].transpose() * &tb.riccati.n[3] * &tb.stats.k[3];
        assert!((nt - expected).abs().max() < 1e-12);
        assert!(n_tilde(&tb.stats, &tb.riccati, 4, 3).is_err());
    }

    #[test]
    fn beta_tail_is_zero_and_nonnegative() {
        let tb = example(1, 20);
        let beta = beta_coefficients(&tb.stats, &tb.riccati, tb.bank.delays(), &tb.moments);
        for (t, row) in beta.iter().enumerate() {
            for (i, &b) in row.iter().enumerate() {
                if t >= 20 - tb.bank.delays()[i] {
                    assert_eq!(b, 0.0);
                }
                assert!(b >= -1e-9);
            }
        }
    }

    #[test]
    fn constant_delay_matches_general_path() {
        let tb = example(3, 15);
        assert_eq!(tb.bank.delays(), &[1, 1, 1]);
        let general = beta_coefficients(&tb.stats, &tb.riccati, tb.bank.delays(), &tb.moments);
        let h = constant_delay_beta(&tb.stats, &tb.riccati, 1, 3, &tb.moments).unwrap();
        for (g, hh) in general.iter().zip(&h) {
            for (x, y) in g.iter().zip(hh) {
                assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn full_observation_matches_general_path() {
        let mut raw = scenarios::full_observation_raw();
        raw.horizon = 15;
        let tb = tables(raw, scenarios::example_bank(1, [100.0, 200.0, 300.0]));
        let general = beta_coefficients(&tb.stats, &tb.riccati, tb.bank.delays(), &tb.moments);
        let fast = full_observation_beta(tb.model.a(), &tb.riccati, tb.bank.delays(), &tb.moments);
        for (g, f) in general.iter().zip(&fast) {
            for (x, y) in g.iter().zip(f) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pi_form_matches_linearization() {
        let tb = example(1, 8);
        let nt = NTildeTable::build(&tb.stats, &tb.riccati);
        let prices = tb.bank.prices();
        let sched = SelectionSchedule::build(&tb.model, &tb.stats, &tb.riccati, &tb.moments, tb.bank.delays(), &prices);
        for seed in 0..20usize {
            let theta: Vec<usize> = (0..8).map(|t| (seed * 7 + t * t) % 3).collect();
            let pi = evaluate_c0_with(&theta, &tb.stats, &tb.riccati, &nt, &tb.moments, tb.bank.delays(), &prices)
                .unwrap();
            let lin = linearized_variable_cost(&theta, &sched.c);
            assert!((pi.variable() - lin).abs() <= 1e-9 * lin.abs().max(1.0));
        }
        assert!((sched.c0.total()
            - evaluate_c0(&sched.theta_star, &tb.stats, &tb.riccati, &tb.moments, tb.bank.delays(), &prices)
                .unwrap()
                .total())
        .abs()
            < 1e-9);
    }

    #[test]
    fn brute_force_agrees_with_argmin() {
        let tb = example(1, 5);
        let prices = [0.2, 0.5, 0.9];
        let sched = SelectionSchedule::build(&tb.model, &tb.stats, &tb.riccati, &tb.moments, tb.bank.delays(), &prices);
        let bf = brute_force_schedule(&tb.stats, &tb.riccati, &tb.moments, tb.bank.delays(), &prices).unwrap();
        assert_eq!(bf.sequences, 243);
        assert!((bf.objective - sched.optimal_variable_cost()).abs() < 1e-10);
    }

    #[test]
    fn brute_force_guard() {
        let tb = example(1, 13);
        assert!(matches!(
            brute_force_schedule(&tb.stats, &tb.riccati, &tb.moments, tb.bank.delays(), &[1.0; 3]),
            Err(SelectionError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn error_moment_extremes() {
        let tb = example(1, 6);
        let never = vec![2usize; 6];
        let e = error_second_moment(&never, &tb.stats, &tb.moments, tb.bank.delays(), 1).unwrap();
        // d = 3 ⇒ nothing has arrived by t = 1
        let mut open = tb.stats.sigma_filt[1].clone();
        for k in 0..=1 {
            let psi = tb.stats.psi(1, k).unwrap();
            open += &psi * &tb.stats.m[k] * psi.transpose();
        }
        assert!((e - open).abs().max() < 1e-12);
    }

    #[test]
    fn lp_export_layout() {
        let lp = export_milp(&[vec![1.5, -2.0]]);
        assert!(lp.contains("obj: 1.5 x_0_1 - 2 x_0_2"));
        assert!(lp.contains(" stage_0: x_0_1 + x_0_2 = 1"));
        assert!(lp.contains("Binary\n x_0_1 x_0_2\n"));
        assert!(lp.ends_with("End\n"));
    }
}
