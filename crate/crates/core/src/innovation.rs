//! Innovation statistics and the sensor-side innovation generator.
//!
//! The innovation `ξ_t = Y_t - E[Y_t | Y_0..Y_{t-1}, U_0..U_{t-1}]` is zero-mean
//! Gaussian with covariance `M_t`, white, and independent of the control
//! history. Its covariance sequence comes from the usual forward recursion
//! started at `Σ_{0|-1} = Σ_x`:
//!
//! ```text
//! M_t         = C Σ_{t|t-1} Cᵀ + V
//! K_t         = Σ_{t|t-1} Cᵀ M_t⁻¹
//! Σ_t         = Σ_{t|t-1} - K_t C Σ_{t|t-1}
//! Σ_{t+1|t}   = A Σ_t Aᵀ + W
//! ```
//!
//! A covariance `M_t` that is exactly zero (no noise and no prior
//! uncertainty) is accepted with `K_t = 0`; any other singular `M_t` is an error.

use alloc::vec::Vec;

use crate::linalg::{self, Matrix, Vector};
use crate::model::ScenarioModel;

/// Condition number of `M_t` above which propagation fails.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InnovationError {
    #[error("innovation covariance M_{stage} is numerically singular (condition number {condition:e})")]
    SingularInnovationCovariance { stage: usize, condition: f64 },
    #[error("time index out of range: Ψ({t},{k}) with horizon {horizon}")]
    IndexOutOfRange { t: usize, k: usize, horizon: usize },
    #[error("sensor filter at t={filter} cannot accept stage {expected}")]
    TimeDesync { filter: usize, expected: usize },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension { what: &'static str, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStatistics {
    /// `M_0 .. M_{T-1}`
    pub m: Vec<Matrix>,
    /// `Σ_{0|-1} .. Σ_{T-1|T-2}`
    pub sigma_pred: Vec<Matrix>,
    /// `Σ_0 .. Σ_{T-1}`
    pub sigma_filt: Vec<Matrix>,
    /// `K_0 .. K_{T-1}`
    pub k: Vec<Matrix>,
    /// `A^0 .. A^T`
    pub a_powers: Vec<Matrix>,
}

pub fn propagate_statistics(model: &ScenarioModel) -> Result<InnovationStatistics, InnovationError> {
    let horizon = model.horizon();
    let (a, c) = (model.a(), model.c());
    let ct = c.transpose();
    let mut m = Vec::with_capacity(horizon);
    let mut sigma_pred = Vec::with_capacity(horizon);
    let mut sigma_filt = Vec::with_capacity(horizon);
    let mut k = Vec::with_capacity(horizon);

    let mut pred = model.sigma_x().clone();
    for t in 0..horizon {
        let mt = linalg::symmetrized(c * &pred * &ct + model.v());
        if mt.iter().all(|v| *v == 0.0) {
            // noiseless and already known exactly: ξ_t ≡ 0 and nothing is learned
            let next = linalg::symmetrized(a * &pred * a.transpose() + model.w());
            m.push(mt);
            k.push(Matrix::zeros(model.state_dim(), model.output_dim()));
            sigma_filt.push(pred.clone());
            sigma_pred.push(core::mem::replace(&mut pred, next));
            continue;
        }
        let condition = linalg::sym_condition(&mt);
        if condition > MAX_INNOVATION_CONDITION {
            return Err(InnovationError::SingularInnovationCovariance { stage: t, condition });
        }
        let chol = linalg::cholesky(&mt)
            .ok_or(InnovationError::SingularInnovationCovariance { stage: t, condition })?;
        // K = Σ Cᵀ M⁻¹  ⇔  M Kᵀ = C Σ
        let gain = chol.solve(&(c * &pred)).transpose();
        let filt = linalg::symmetrized(&pred - &gain * c * &pred);
        let next = linalg::symmetrized(a * &filt * a.transpose() + model.w());

        m.push(mt);
        k.push(gain);
        sigma_filt.push(filt);
        sigma_pred.push(core::mem::replace(&mut pred, next));
    }
    Ok(InnovationStatistics {
        m,
        sigma_pred,
        sigma_filt,
        k,
        a_powers: linalg::powers(a, horizon),
    })
}

impl InnovationStatistics {
    pub fn horizon(&self) -> usize {
        self.m.len()
    }

    /// `Ψ(t,k) = A^{t-k} K_k` for `k ≤ t < T`.
    pub fn psi(&self, t: usize, k: usize) -> Result<Matrix, InnovationError> {
        if k > t || t >= self.horizon() {
            return Err(InnovationError::IndexOutOfRange { t, k, horizon: self.horizon() });
        }
        Ok(&self.a_powers[t - k] * &self.k[k])
    }

    /// `A`.
    pub fn transition(&self) -> &Matrix {
        &self.a_powers[1]
    }
}

/// `Ψ(t,k)`; see [`InnovationStatistics::psi`].
pub fn psi_factor(stats: &InnovationStatistics, t: usize, k: usize) -> Result<Matrix, InnovationError> {
    stats.psi(t, k)
}

/// Sensor-side running estimate used to form innovations online.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFilterState {
    pub xhat: Vector,
    pub t: usize,
}

impl SensorFilterState {
    pub fn new(model: &ScenarioModel) -> Self {
        Self { xhat: model.mu0().clone(), t: 0 }
    }

    /// Consume `Y_t` (and `U_{t-1}` for `t > 0`) and return `ξ_t`.
    pub fn step(
        &mut self,
        model: &ScenarioModel,
        stats: &InnovationStatistics,
        y: &Vector,
        u_prev: Option<&Vector>,
    ) -> Result<Vector, InnovationError> {
        if self.t >= stats.horizon() {
            return Err(InnovationError::TimeDesync { filter: self.t, expected: stats.horizon() });
        }
        if y.len() != model.output_dim() {
            return Err(InnovationError::Dimension { what: "output", expected: model.output_dim(), found: y.len() });
        }
        let pred = match (self.t, u_prev) {
            (0, None) => self.xhat.clone(),
            (t, Some(u)) if t > 0 => {
                if u.len() != model.input_dim() {
                    return Err(InnovationError::Dimension {
                        what: "input",
                        expected: model.input_dim(),
                        found: u.len(),
                    });
                }
                model.a() * &self.xhat + model.b() * u
            }
            (t, _) => return Err(InnovationError::TimeDesync { filter: t, expected: t }),
        };
        let xi = y - model.c() * &pred;
        self.xhat = pred + &stats.k[self.t] * &xi;
        self.t += 1;
        Ok(xi)
    }
}

/// Free-function form of [`SensorFilterState::step`].
pub fn sensor_innovation_step(
    state: &mut SensorFilterState,
    model: &ScenarioModel,
    stats: &InnovationStatistics,
    y: &Vector,
    u_prev: Option<&Vector>,
) -> Result<Vector, InnovationError> {
    state.step(model, stats, y, u_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_scenario, RawScenario};

    fn scalar_model(v: f64) -> ScenarioModel {
        let one = Matrix::from_element(1, 1, 1.0);
        validate_scenario(&RawScenario {
            a: one.clone(),
            b: one.clone(),
            c: one.clone(),
            w: one.clone(),
            v: one.clone() * v,
            sigma_x: one.clone(),
            mu0: Vector::zeros(1),
            q1: one.clone(),
            q2: one.clone(),
            r: one,
            horizon: 3,
        })
        .unwrap()
    }

    #[test]
    fn scalar_hand_recursion() {
        let s = propagate_statistics(&scalar_model(1.0)).unwrap();
        assert_eq!(s.m[0][(0, 0)], 2.0);
        assert_eq!(s.sigma_filt[0][(0, 0)], 0.5);
        assert_eq!(s.sigma_pred[1][(0, 0)], 1.5);
        assert_eq!(s.m[1][(0, 0)], 2.5);
        assert_eq!(s.sigma_pred[0][(0, 0)], 1.0);
    }

    #[test]
    fn full_observation_collapses_filter_error() {
        let raw = crate::scenarios::full_observation_raw();
        let model = validate_scenario(&raw).unwrap();
        let s = propagate_statistics(&model).unwrap();
        for t in 0..model.horizon() {
            assert!((&s.m[t] - &s.sigma_pred[t]).abs().max() < 1e-14);
            assert!(s.sigma_filt[t].abs().max() < 1e-14);
            assert!((&s.k[t] - Matrix::identity(2, 2)).abs().max() < 1e-12);
        }
        let psi = s.psi(5, 2).unwrap();
        assert!((psi - &s.a_powers[3]).abs().max() < 1e-12);
    }

    #[test]
    fn psi_identities() {
        let model = validate_scenario(&crate::scenarios::example_raw()).unwrap();
        let s = propagate_statistics(&model).unwrap();
        assert_eq!(s.psi(4, 4).unwrap(), s.k[4]);
        assert!((s.psi(5, 4).unwrap() - model.a() * &s.k[4]).abs().max() < 1e-14);
        assert!(s.psi(3, 4).is_err());
        assert!(s.psi(50, 0).is_err());
    }

    #[test]
    fn singular_innovation_covariance() {
        let mut raw = crate::scenarios::example_raw();
        raw.v = Matrix::zeros(2, 2);
        raw.c = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let model = validate_scenario(&raw).unwrap();
        assert!(matches!(
            propagate_statistics(&model),
            Err(InnovationError::SingularInnovationCovariance { stage: 0, .. })
        ));
    }

    #[test]
    fn filtering_never_increases_covariance() {
        let model = validate_scenario(&crate::scenarios::example_raw()).unwrap();
        let s = propagate_statistics(&model).unwrap();
        for t in 0..model.horizon() {
            assert!(linalg::min_eigenvalue(&(&s.sigma_pred[t] - &s.sigma_filt[t])) >= -1e-12);
            let mt = model.c() * &s.sigma_pred[t] * model.c().transpose() + model.v();
            assert!((mt - &s.m[t]).abs().max() < 1e-12);
        }
    }

    #[test]
    fn prior_measurement_has_zero_innovation() {
        let model = validate_scenario(&crate::scenarios::example_raw()).unwrap();
        let s = propagate_statistics(&model).unwrap();
        let mut sensor = SensorFilterState::new(&model);
        let y = model.c() * model.mu0();
        let xi = sensor.step(&model, &s, &y, None).unwrap();
        assert_eq!(xi, Vector::zeros(2));
        assert_eq!(sensor.t, 1);
        // t = 1 needs the previous input
        assert!(matches!(
            sensor.step(&model, &s, &y, None),
            Err(InnovationError::TimeDesync { .. })
        ));
    }
}
