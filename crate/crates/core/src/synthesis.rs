//! Backward Riccati recursion for the certainty-equivalent controller.
//!
//! The gains depend on the plant and cost weights only; the quantizer bank
//! never enters here.

use alloc::vec::Vec;

use crate::linalg::{self, Matrix, Vector};
use crate::model::ScenarioModel;

/// Condition number of `R + BᵀP_{k+1}B` above which the step is refused.
pub const MAX_INNER_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("R + B'P B is numerically singular at stage {stage} (condition number {condition:e})")]
    SingularInnerMatrix { stage: usize, condition: f64 },
    #[error("stage {stage} out of range (horizon {horizon})")]
    IndexOutOfRange { stage: usize, horizon: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `P_0 .. P_T`, with `P_T = Q₂`.
    pub p: Vec<Matrix>,
    /// `L_0 .. L_{T-1}`.
    pub l: Vec<Matrix>,
    /// `N_k = L_kᵀ(R + BᵀP_{k+1}B)L_k`, `k = 0 .. T-1`.
    pub n: Vec<Matrix>,
    /// `r_0 .. r_T`, with `r_T = 0`.
    pub r: Vec<f64>,
}

pub fn solve_riccati(model: &ScenarioModel) -> Result<RiccatiSolution, SynthesisError> {
    let horizon = model.horizon();
    let (a, b) = (model.a(), model.b());
    let at = a.transpose();
    let bt = b.transpose();

    let mut p = alloc::vec![Matrix::zeros(0, 0); horizon + 1];
    let mut l = alloc::vec![Matrix::zeros(0, 0); horizon];
    let mut n = alloc::vec![Matrix::zeros(0, 0); horizon];
    let mut r = alloc::vec![0.0; horizon + 1];
    p[horizon] = model.q2().clone();

    for k in (0..horizon).rev() {
        let next = &p[k + 1];
        let inner = linalg::symmetrized(model.r() + &bt * next * b);
        let condition = linalg::sym_condition(&inner);
        if condition > MAX_INNER_CONDITION {
            return Err(SynthesisError::SingularInnerMatrix { stage: k, condition });
        }
        let chol = linalg::cholesky(&inner)
            .ok_or(SynthesisError::SingularInnerMatrix { stage: k, condition })?;
        let gain = chol.solve(&(&bt * next * a));
        let reduction = linalg::symmetrized(gain.transpose() * &inner * &gain);
        let mut pk = model.q1() + &at * next * a - &reduction;
        linalg::symmetrize(&mut pk);

        r[k] = r[k + 1] + linalg::trace_product(next, model.w());
        l[k] = gain;
        n[k] = reduction;
        p[k] = pk;
    }
    Ok(RiccatiSolution { p, l, n, r })
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.l.len()
    }

    /// Certainty-equivalent input `U_k = -L_k x̄`.
    pub fn control(&self, stage: usize, xbar: &Vector) -> Result<Vector, SynthesisError> {
        let gain = self
            .l
            .get(stage)
            .ok_or(SynthesisError::IndexOutOfRange { stage, horizon: self.horizon() })?;
        Ok(-(gain * xbar))
    }
}

/// `-L_k x̄`.
pub fn control_gain_apply(gain: &Matrix, xbar: &Vector) -> Vector {
    -(gain * xbar)
}

/// `Υ_T = 0`, `Υ_t = AᵀΥ_{t+1}A + N_t`; returns `Υ_0 .. Υ_T`.
pub fn upsilon_recursion(n: &[Matrix], a: &Matrix) -> Vec<Matrix> {
    let horizon = n.len();
    let dim = a.nrows();
    let at = a.transpose();
    let mut out = alloc::vec![Matrix::zeros(dim, dim); horizon + 1];
    for t in (0..horizon).rev() {
        out[t] = linalg::symmetrized(&at * &out[t + 1] * a + &n[t]);
    }
    out
}
