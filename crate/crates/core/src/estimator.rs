//! Controller-side estimate `X̄_t = E[X_t | messages delivered by t, U_0..U_{t-1}]`.
//!
//! ```text
//! X̄_t = μ_t + Σ_{k≤t} ϑ_{k,t} Ψ(t,k) ξ̄_k + Σ_{k<t} A^{t-1-k} B U_k
//! ```
//!
//! Because `Ψ(t,k) = A Ψ(t-1,k)` and `μ_t = A μ_{t-1}`, the running form only
//! needs `A X̄_{t-1} + B U_{t-1}` plus one term per newly delivered message.

use alloc::vec;
use alloc::vec::Vec;

use crate::innovation::InnovationStatistics;
use crate::linalg::Vector;
use crate::model::ScenarioModel;
use crate::quantizer::CellMomentTable;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("message from t={origin} delivered twice")]
    DuplicateArrival { origin: usize },
    #[error("message from t={origin} delivered at t={t}, before it was sent")]
    FutureOrigin { origin: usize, t: usize },
    #[error("message from t={origin} is due at t={due} but was delivered at t={t}")]
    WrongArrivalTime { origin: usize, due: usize, t: usize },
    #[error("unknown cell: t={t}, quantizer {quantizer}, cell {cell}")]
    UnknownCell { t: usize, quantizer: usize, cell: usize },
    #[error("estimator at stage {stage} cannot advance: {reason}")]
    Desync { stage: usize, reason: &'static str },
}

/// What travels over the channel: which quantizer, which cell, and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelMessage {
    /// Position in the (delay-sorted) bank.
    pub quantizer_index: usize,
    pub cell_index: usize,
    pub origin_time: usize,
    /// `origin_time + d_i`.
    pub arrival_time: usize,
}

impl ChannelMessage {
    pub fn new(quantizer_index: usize, cell_index: usize, origin_time: usize, delays: &[usize]) -> Self {
        Self { quantizer_index, cell_index, origin_time, arrival_time: origin_time + delays[quantizer_index] }
    }
}

/// `ξ̄_k`, looked up in the offline table.
pub fn decode_message<'a>(msg: &ChannelMessage, moments: &'a CellMomentTable) -> Result<&'a Vector, EstimatorError> {
    moments.conditional_mean(msg.origin_time, msg.quantizer_index, msg.cell_index).map_err(|_| {
        EstimatorError::UnknownCell { t: msg.origin_time, quantizer: msg.quantizer_index, cell: msg.cell_index }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// `X̄_t`; equals `μ_0` before the first step.
    pub xbar: Vector,
    /// Stage of `xbar` once `started`.
    pub t: usize,
    pub started: bool,
    /// `arrived[k]`: the message sent at `k` has been folded in.
    pub arrived: Vec<bool>,
    /// `ξ̄_k` for every arrived `k`.
    pub xi_bar_cache: Vec<Option<Vector>>,
}

impl EstimatorState {
    pub fn new(model: &ScenarioModel) -> Self {
        let horizon = model.horizon();
        Self {
            xbar: model.mu0().clone(),
            t: 0,
            started: false,
            arrived: vec![false; horizon],
            xi_bar_cache: vec![None; horizon],
        }
    }

    /// Stage that the next call to [`step`](Self::step) produces.
    pub fn next_stage(&self) -> usize {
        if self.started {
            self.t + 1
        } else {
            0
        }
    }

    /// Advance to the next stage: propagate with `u_prev` (absent at `t = 0`)
    /// and fold in the messages delivered at that stage.
    pub fn step(
        &mut self,
        model: &ScenarioModel,
        u_prev: Option<&Vector>,
        arrivals: &[ChannelMessage],
        stats: &InnovationStatistics,
        moments: &CellMomentTable,
    ) -> Result<&Vector, EstimatorError> {
        let stage = self.next_stage();
        if stage >= stats.horizon() {
            return Err(EstimatorError::Desync { stage, reason: "horizon exhausted" });
        }
        let mut next = match (self.started, u_prev) {
            (false, None) => self.xbar.clone(),
            (true, Some(u)) => model.a() * &self.xbar + model.b() * u,
            (false, Some(_)) => return Err(EstimatorError::Desync { stage, reason: "no input precedes stage 0" }),
            (true, None) => return Err(EstimatorError::Desync { stage, reason: "missing previous input" }),
        };

        let mut seen: Vec<usize> = Vec::with_capacity(arrivals.len());
        for msg in arrivals {
            let origin = msg.origin_time;
            if origin > stage {
                return Err(EstimatorError::FutureOrigin { origin, t: stage });
            }
            if msg.arrival_time != stage {
                return Err(EstimatorError::WrongArrivalTime { origin, due: msg.arrival_time, t: stage });
            }
            if self.arrived[origin] || seen.contains(&origin) {
                return Err(EstimatorError::DuplicateArrival { origin });
            }
            seen.push(origin);
        }
        for msg in arrivals {
            let xi_bar = decode_message(msg, moments)?;
            let psi = stats.psi(stage, msg.origin_time).expect("origin ≤ stage < T");
            next += psi * xi_bar;
        }
        for msg in arrivals {
            self.arrived[msg.origin_time] = true;
            self.xi_bar_cache[msg.origin_time] = Some(decode_message(msg, moments)?.clone());
        }
        self.xbar = next;
        self.t = stage;
        self.started = true;
        Ok(&self.xbar)
    }
}

/// Free-function form of [`EstimatorState::step`].
pub fn estimator_step(
    state: &mut EstimatorState,
    model: &ScenarioModel,
    u_prev: Option<&Vector>,
    arrivals: &[ChannelMessage],
    stats: &InnovationStatistics,
    moments: &CellMomentTable,
) -> Result<Vector, EstimatorError> {
    state.step(model, u_prev, arrivals, stats, moments).cloned()
}

/// Direct evaluation of `X̄_t` from the full history: `delivered[s]` holds the
/// messages delivered at stage `s` and `inputs[k] = U_k`.
pub fn batch_estimate(
    model: &ScenarioModel,
    stats: &InnovationStatistics,
    moments: &CellMomentTable,
    delivered: &[Vec<ChannelMessage>],
    inputs: &[Vector],
    t: usize,
) -> Result<Vector, EstimatorError> {
    if t >= stats.horizon() || inputs.len() < t || delivered.len() <= t {
        return Err(EstimatorError::Desync { stage: t, reason: "history shorter than requested stage" });
    }
    let mut xbar = &stats.a_powers[t] * model.mu0();
    for msg in delivered[..=t].iter().flatten() {
        if msg.origin_time > t {
            return Err(EstimatorError::FutureOrigin { origin: msg.origin_time, t });
        }
        xbar += stats.psi(t, msg.origin_time).expect("origin ≤ t < T") * decode_message(msg, moments)?;
    }
    for (k, u) in inputs[..t].iter().enumerate() {
        xbar += &stats.a_powers[t - 1 - k] * (model.b() * u);
    }
    Ok(xbar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovation::propagate_statistics;
    use crate::model::validate_scenario;
    use crate::quadrature::QuadratureConfig;
    use crate::quantizer::{build_moment_tables, QuantizerBank};
    use crate::scenarios;

    fn setup(horizon: i64) -> (ScenarioModel, InnovationStatistics, CellMomentTable, QuantizerBank) {
        let mut raw = scenarios::example_raw();
        raw.horizon = horizon;
        let model = validate_scenario(&raw).unwrap();
        let stats = propagate_statistics(&model).unwrap();
        let bank = scenarios::example_bank_with_null(1, [100.0, 200.0, 300.0]);
        let moments = build_moment_tables(&bank, &stats, &QuadratureConfig::default()).unwrap();
        (model, stats, moments, bank)
    }

    #[test]
    fn null_message_decodes_to_zero() {
        let (_, _, moments, bank) = setup(4);
        assert_eq!(bank.delays()[0], 0);
        let msg = ChannelMessage::new(0, 0, 2, bank.delays());
        assert_eq!(msg.arrival_time, 2);
        assert_eq!(decode_message(&msg, &moments).unwrap(), &Vector::zeros(2));
        let bad = ChannelMessage { cell_index: 3, ..msg };
        assert!(matches!(decode_message(&bad, &moments), Err(EstimatorError::UnknownCell { .. })));
    }

    #[test]
    fn open_loop_propagation_without_arrivals() {
        let (model, stats, moments, _) = setup(5);
        let mut est = EstimatorState::new(&model);
        let u = Vector::from_vec(vec![0.3, -0.2]);
        est.step(&model, None, &[], &stats, &moments).unwrap();
        assert_eq!(est.xbar, *model.mu0());
        for _ in 1..5 {
            est.step(&model, Some(&u), &[], &stats, &moments).unwrap();
        }
        let inputs = vec![u.clone(); 4];
        let delivered = vec![Vec::new(); 5];
        let batch = batch_estimate(&model, &stats, &moments, &delivered, &inputs, 4).unwrap();
        assert!((batch - &est.xbar).amax() < 1e-14);
        assert!(est.step(&model, Some(&u), &[], &stats, &moments).is_err());
    }

    #[test]
    fn out_of_order_arrivals() {
        let (model, stats, moments, _) = setup(6);
        // delays 1 and 3 as in the sorted reference bank positions 1 and 3
        let delays = [0, 1, 2, 3];
        let theta = [3, 1, 1, 3, 3, 1];
        let msgs: Vec<ChannelMessage> =
            theta.iter().enumerate().map(|(k, &i)| ChannelMessage::new(i, 0, k, &delays)).collect();
        let due = |t: usize| -> Vec<ChannelMessage> {
            let mut v: Vec<_> = msgs.iter().filter(|m| m.arrival_time == t).copied().collect();
            v.sort_by_key(|m| m.origin_time);
            v
        };
        let origins = |t: usize| due(t).iter().map(|m| m.origin_time).collect::<Vec<_>>();
        assert!(origins(0).is_empty() && origins(1).is_empty());
        assert_eq!(origins(2), [1]);
        assert_eq!(origins(3), [0, 2]);

        let mut est = EstimatorState::new(&model);
        let u = Vector::from_vec(vec![1.0, 0.5]);
        let mut delivered = Vec::new();
        for t in 0..6 {
            let arrivals = due(t);
            est.step(&model, (t > 0).then_some(&u), &arrivals, &stats, &moments).unwrap();
            delivered.push(arrivals);
            let batch = batch_estimate(&model, &stats, &moments, &delivered, &vec![u.clone(); t], t).unwrap();
            assert!((batch - &est.xbar).amax() < 1e-12);
        }
        assert_eq!(est.arrived, [true, true, true, false, false, false]);
    }

    #[test]
    fn duplicate_and_future_messages_rejected() {
        let (model, stats, moments, _) = setup(4);
        let mut est = EstimatorState::new(&model);
        let msg = ChannelMessage { quantizer_index: 0, cell_index: 0, origin_time: 0, arrival_time: 0 };
        assert!(matches!(
            est.clone().step(&model, None, &[msg, msg], &stats, &moments),
            Err(EstimatorError::DuplicateArrival { origin: 0 })
        ));
        est.step(&model, None, &[msg], &stats, &moments).unwrap();
        let u = Vector::zeros(2);
        let again = ChannelMessage { arrival_time: 1, ..msg };
        assert!(matches!(
            est.clone().step(&model, Some(&u), &[again], &stats, &moments),
            Err(EstimatorError::DuplicateArrival { origin: 0 })
        ));
        let future = ChannelMessage { origin_time: 3, arrival_time: 1, ..msg };
        assert!(matches!(
            est.step(&model, Some(&u), &[future], &stats, &moments),
            Err(EstimatorError::FutureOrigin { origin: 3, t: 1 })
        ));
    }
}
