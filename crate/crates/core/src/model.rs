//! Plant, noise, cost and horizon parameters.
//!
//! The plant is the time-invariant linear system
//!
//! ```text
//! X_{t+1} = A X_t + B U_t + W_t,     W_t ~ N(0, W)
//! Y_t     = C X_t + ν_t,             ν_t ~ N(0, V)
//! X_0 ~ N(μ₀, Σ_x)
//! ```
//!
//! scored over `T` stages by `Σ_{t<T} (XᵀQ₁X + UᵀRU + λ_θ) + X_TᵀQ₂X_T`.
//! The stage weight is sometimes written `Q` and the terminal weight `Q_f`;
//! they are `q1` and `q2` here.

use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{self, Matrix, Vector};

/// Largest tolerated `|m_ij - m_ji|` (relative to `max(1, max|m_ij|)`).
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted for a PSD input before it is rejected.
pub const PSD_TOL: f64 = 1e-10;
/// Negative eigenvalues above this floor (relative) are left untouched; below it
/// they are clamped to zero.
const CLAMP_FLOOR: f64 = 1e-14;

/// Unvalidated scenario, e.g. freshly parsed from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScenario {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub w: Matrix,
    pub v: Matrix,
    pub sigma_x: Matrix,
    pub mu0: Vector,
    pub q1: Matrix,
    pub q2: Matrix,
    pub r: Matrix,
    pub horizon: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NotSymmetric {
        matrix: &'static str,
        asymmetry: f64,
    },
    /// `positive_definite` is set for `R`, which must be strictly PD.
    NotPsd {
        matrix: &'static str,
        min_eigenvalue: f64,
        positive_definite: bool,
    },
    NonpositiveHorizon(i64),
}

impl Violation {
    /// The scenario key the violation refers to.
    pub fn key(&self) -> &'static str {
        match self {
            Violation::DimensionMismatch { matrix, .. }
            | Violation::NotSymmetric { matrix, .. }
            | Violation::NotPsd { matrix, .. } => matrix,
            Violation::NonpositiveHorizon(_) => "T",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { matrix, expected, found } => write!(
                f,
                "{matrix}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Violation::NotSymmetric { matrix, asymmetry } => {
                write!(f, "{matrix}: not symmetric (max |m_ij - m_ji| = {asymmetry:e})")
            }
            Violation::NotPsd { matrix, min_eigenvalue, positive_definite } => {
                let what = if *positive_definite { "positive definite" } else { "positive semidefinite" };
                write!(f, "{matrix}: not {what} (min eigenvalue {min_eigenvalue:e})")
            }
            Violation::NonpositiveHorizon(t) => write!(f, "T: horizon must be >= 1, got {t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl ModelError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::Invalid(v) => v,
            ModelError::Dimension { .. } => &[],
        }
    }
}

fn join(v: &[Violation]) -> alloc::string::String {
    use alloc::string::ToString;
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A validated scenario. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    w: Matrix,
    v: Matrix,
    sigma_x: Matrix,
    mu0: Vector,
    q1: Matrix,
    q2: Matrix,
    r: Matrix,
    horizon: usize,
}

fn check_shape(
    out: &mut Vec<Violation>,
    matrix: &'static str,
    m: &Matrix,
    expected: (usize, usize),
) -> bool {
    if m.shape() != expected {
        out.push(Violation::DimensionMismatch { matrix, expected, found: m.shape() });
        false
    } else {
        true
    }
}

/// Symmetry and (semi)definiteness check; returns the cleaned matrix.
fn check_psd(
    out: &mut Vec<Violation>,
    matrix: &'static str,
    m: &Matrix,
    positive_definite: bool,
) -> Option<Matrix> {
    let scale = linalg::max_abs(m).max(1.0);
    let asym = linalg::asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        out.push(Violation::NotSymmetric { matrix, asymmetry: asym });
        return None;
    }
    let sym = linalg::symmetrized(m.clone());
    let min_eig = linalg::min_eigenvalue(&sym);
    if positive_definite {
        if min_eig <= 0.0 || linalg::cholesky(&sym).is_none() {
            out.push(Violation::NotPsd { matrix, min_eigenvalue: min_eig, positive_definite });
            return None;
        }
        return Some(sym);
    }
    if min_eig < -PSD_TOL {
        out.push(Violation::NotPsd { matrix, min_eigenvalue: min_eig, positive_definite });
        return None;
    }
    if min_eig < -CLAMP_FLOOR * scale {
        Some(linalg::clamp_psd(&sym))
    } else {
        Some(sym)
    }
}

pub fn validate_scenario(raw: &RawScenario) -> Result<ScenarioModel, ModelError> {
    let mut errs = Vec::new();
    let n = raw.a.nrows();
    let m = raw.b.ncols();
    let p = raw.c.nrows();

    check_shape(&mut errs, "A", &raw.a, (n, n));
    check_shape(&mut errs, "B", &raw.b, (n, m));
    check_shape(&mut errs, "C", &raw.c, (p, n));
    if raw.mu0.len() != n {
        errs.push(Violation::DimensionMismatch {
            matrix: "mu0",
            expected: (n, 1),
            found: (raw.mu0.len(), 1),
        });
    }
    for (name, mat, empty) in [("A", &raw.a, n == 0), ("B", &raw.b, m == 0), ("C", &raw.c, p == 0)] {
        if empty {
            let found = mat.shape();
            errs.push(Violation::DimensionMismatch {
                matrix: name,
                expected: (found.0.max(1), found.1.max(1)),
                found,
            });
        }
    }

    let square = [
        ("W", &raw.w, n, false),
        ("V", &raw.v, p, false),
        ("Sigma_x", &raw.sigma_x, n, false),
        ("Q1", &raw.q1, n, false),
        ("Q2", &raw.q2, n, false),
        ("R", &raw.r, m, true),
    ];
    let mut cleaned: Vec<Option<Matrix>> = Vec::with_capacity(square.len());
    for (name, mat, dim, pd) in square {
        if check_shape(&mut errs, name, mat, (dim, dim)) {
            cleaned.push(check_psd(&mut errs, name, mat, pd));
        } else {
            cleaned.push(None);
        }
    }
    if raw.horizon < 1 {
        errs.push(Violation::NonpositiveHorizon(raw.horizon));
    }
    if !errs.is_empty() {
        return Err(ModelError::Invalid(errs));
    }
    let mut it = cleaned.into_iter().map(|c| c.expect("checked above"));
    Ok(ScenarioModel {
        a: raw.a.clone(),
        b: raw.b.clone(),
        c: raw.c.clone(),
        w: it.next().unwrap(),
        v: it.next().unwrap(),
        sigma_x: it.next().unwrap(),
        mu0: raw.mu0.clone(),
        q1: it.next().unwrap(),
        q2: it.next().unwrap(),
        r: it.next().unwrap(),
        horizon: raw.horizon as usize,
    })
}

impl ScenarioModel {
    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    /// Process-noise covariance.
    pub fn w(&self) -> &Matrix {
        &self.w
    }
    /// Measurement-noise covariance.
    pub fn v(&self) -> &Matrix {
        &self.v
    }
    pub fn sigma_x(&self) -> &Matrix {
        &self.sigma_x
    }
    pub fn mu0(&self) -> &Vector {
        &self.mu0
    }
    pub fn q1(&self) -> &Matrix {
        &self.q1
    }
    pub fn q2(&self) -> &Matrix {
        &self.q2
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn to_raw(&self) -> RawScenario {
        RawScenario {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            w: self.w.clone(),
            v: self.v.clone(),
            sigma_x: self.sigma_x.clone(),
            mu0: self.mu0.clone(),
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            r: self.r.clone(),
            horizon: self.horizon as i64,
        }
    }

    /// Same scenario with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<ScenarioModel, ModelError> {
        if horizon == 0 {
            return Err(ModelError::Invalid(alloc::vec![Violation::NonpositiveHorizon(0)]));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    /// `xᵀQ₁x + uᵀRu + price`.
    pub fn stage_cost(&self, x: &Vector, u: &Vector, price: f64) -> Result<f64, ModelError> {
        self.check_state(x)?;
        if u.len() != self.input_dim() {
            return Err(ModelError::Dimension { what: "input", expected: self.input_dim(), found: u.len() });
        }
        Ok(x.dot(&(&self.q1 * x)) + u.dot(&(&self.r * u)) + price)
    }

    /// `xᵀQ₂x`.
    pub fn terminal_cost(&self, x: &Vector) -> Result<f64, ModelError> {
        self.check_state(x)?;
        Ok(x.dot(&(&self.q2 * x)))
    }

    fn check_state(&self, x: &Vector) -> Result<(), ModelError> {
        if x.len() != self.state_dim() {
            return Err(ModelError::Dimension { what: "state", expected: self.state_dim(), found: x.len() });
        }
        Ok(())
    }
}

/// One closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// `X_0 .. X_T`
    pub states: Vec<Vector>,
    /// `U_0 .. U_{T-1}`
    pub inputs: Vec<Vector>,
    /// `Y_0 .. Y_{T-1}`
    pub outputs: Vec<Vector>,
    /// `ξ_0 .. ξ_{T-1}`
    pub innovations: Vec<Vector>,
    /// Controller-side estimates `X̄_0 .. X̄_{T-1}`.
    pub estimates: Vec<Vector>,
    /// Quantizer position chosen at each stage.
    pub selections: Vec<usize>,
    /// Origin times of the messages delivered at each stage.
    pub arrivals: Vec<Vec<usize>>,
    pub state_cost: f64,
    pub input_cost: f64,
    pub price_cost: f64,
    pub realized_cost: f64,
}

impl TrajectoryRecord {
    pub fn lengths_match(&self, horizon: usize) -> bool {
        self.states.len() == horizon + 1
            && self.inputs.len() == horizon
            && self.outputs.len() == horizon
            && self.innovations.len() == horizon
            && self.estimates.len() == horizon
            && self.selections.len() == horizon
            && self.arrivals.len() == horizon
    }

    /// Re-evaluate the quadratic criterion from the stored trajectory.
    pub fn recompute_cost(&self, model: &ScenarioModel, prices: &[f64]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for t in 0..self.inputs.len() {
            total += model.stage_cost(&self.states[t], &self.inputs[t], prices[self.selections[t]])?;
        }
        total += model.terminal_cost(self.states.last().expect("non-empty"))?;
        Ok(total)
    }

    /// `realized_cost` agrees with a fresh evaluation to `1e-9` relative.
    pub fn is_self_consistent(&self, model: &ScenarioModel, prices: &[f64]) -> bool {
        match self.recompute_cost(model, prices) {
            Ok(c) => (c - self.realized_cost).abs() <= 1e-9 * c.abs().max(1.0),
            Err(_) => false,
        }
    }
}
