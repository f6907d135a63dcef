//! Independent reference computations used to cross-check the main code paths.
//!
//! Each oracle takes a different route to the same quantity: the Riccati
//! oracle recovers the stage Hessian from scalar cost evaluations, the
//! innovation oracle projects onto the whole output history at once, the
//! moment oracle samples, and the LP oracle reads the exported text back and
//! enumerates it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use qflqg_core::quantizer::Cell;
use qflqg_core::{Matrix, ScenarioModel, Vector};
use rand::Rng;
use rand_distr::StandardNormal;

/// `P_0..P_T` and `L_0..L_{T-1}` by value iteration on the quadratic
/// cost-to-go, minimizing over `u` by completing the square in the stage
/// Hessian. The Hessian is read off the scalar stage cost by polarization,
/// so no matrix formula of the Riccati step is reused.
pub fn riccati_oracle(model: &ScenarioModel) -> (Vec<Matrix>, Vec<Matrix>) {
    let (n, m) = (model.state_dim(), model.input_dim());
    let horizon = model.horizon();
    let mut p = vec![Matrix::zeros(n, n); horizon + 1];
    let mut l = vec![Matrix::zeros(m, n); horizon];
    p[horizon] = model.q2().clone();
    for k in (0..horizon).rev() {
        let next = p[k + 1].clone();
        let q = |z: &DVector<f64>| -> f64 {
            let x = z.rows(0, n).into_owned();
            let u = z.rows(n, m).into_owned();
            let x1 = model.a() * &x + model.b() * &u;
            x.dot(&(model.q1() * &x)) + u.dot(&(model.r() * &u)) + x1.dot(&(&next * &x1))
        };
        let dim = n + m;
        let basis = |i: usize| DVector::from_fn(dim, |r, _| if r == i { 1.0 } else { 0.0 });
        let h = DMatrix::from_fn(dim, dim, |i, j| 0.25 * (q(&(basis(i) + basis(j))) - q(&(basis(i) - basis(j)))));
        let hxx = h.view((0, 0), (n, n)).into_owned();
        let hxu = h.view((0, n), (n, m)).into_owned();
        let hux = h.view((n, 0), (m, n)).into_owned();
        let huu = h.view((n, n), (m, m)).into_owned();
        let gain = huu.clone().lu().solve(&hux).expect("stage Hessian block is invertible");
        let pk = &hxx - &hxu * &gain;
        p[k] = 0.5 * (&pk + pk.transpose());
        l[k] = gain;
    }
    (p, l)
}

/// Covariance of the state at stages `t` and `s` with all inputs zero.
fn state_cross_covariance(model: &ScenarioModel, powers: &[Matrix], t: usize, s: usize) -> Matrix {
    let mut out = &powers[t] * model.sigma_x() * powers[s].transpose();
    for j in 0..t.min(s) {
        out += &powers[t - 1 - j] * model.w() * powers[s - 1 - j].transpose();
    }
    out
}

/// Joint second-order description of `(X_t, Y_t)` over the horizon.
pub struct GramOracle<'a> {
    model: &'a ScenarioModel,
    powers: Vec<Matrix>,
}

impl<'a> GramOracle<'a> {
    pub fn new(model: &'a ScenarioModel) -> Self {
        let mut powers = vec![Matrix::identity(model.state_dim(), model.state_dim())];
        for t in 1..=model.horizon() {
            powers.push(model.a() * &powers[t - 1]);
        }
        Self { model, powers }
    }

    fn cov_y(&self, t: usize, s: usize) -> Matrix {
        let c = self.model.c();
        let mut out = c * state_cross_covariance(self.model, &self.powers, t, s) * c.transpose();
        if t == s {
            out += self.model.v();
        }
        out
    }

    /// Covariance of `(Y_0 .. Y_{t-1})` and its cross-covariance with `Y_t` and `X_t`.
    fn past(&self, t: usize) -> (Matrix, Matrix, Matrix) {
        let p = self.model.output_dim();
        let n = self.model.state_dim();
        let mut g = Matrix::zeros(p * t, p * t);
        let mut cy = Matrix::zeros(p * t, p);
        let mut cx = Matrix::zeros(p * t, n);
        for a in 0..t {
            for b in 0..t {
                g.view_mut((a * p, b * p), (p, p)).copy_from(&self.cov_y(a, b));
            }
            cy.view_mut((a * p, 0), (p, p)).copy_from(&self.cov_y(a, t));
            let sx = state_cross_covariance(self.model, &self.powers, a, t);
            cx.view_mut((a * p, 0), (p, n)).copy_from(&(self.model.c() * sx));
        }
        (g, cy, cx)
    }

    /// `M_t` and `K_t` as the residual covariance of `Y_t` after projecting on
    /// all earlier outputs, and the regression of `X_t` on that residual.
    pub fn innovation_covariance_and_gain(&self, t: usize) -> (Matrix, Matrix) {
        let c = self.model.c();
        let sxx = state_cross_covariance(self.model, &self.powers, t, t);
        let cov_xy = &sxx * c.transpose();
        let (m, cov_x_xi) = if t == 0 {
            (self.cov_y(0, 0), cov_xy)
        } else {
            let (g, cy, cx) = self.past(t);
            let lu = g.lu();
            let m = self.cov_y(t, t) - cy.transpose() * lu.solve(&cy).expect("past outputs are nondegenerate");
            let cov = cov_xy - cx.transpose() * lu.solve(&cy).expect("past outputs are nondegenerate");
            (m, cov)
        };
        let gain = m.clone().lu().solve(&cov_x_xi.transpose()).expect("M_t invertible").transpose();
        (0.5 * (&m + m.transpose()), gain)
    }

    /// Innovations of a realized output sequence under known inputs, computed
    /// by projecting each `Y_t` onto the whole past at once.
    pub fn batch_innovations(&self, outputs: &[Vector], inputs: &[Vector]) -> Vec<Vector> {
        let p = self.model.output_dim();
        let model = self.model;
        let mean_x = |t: usize| -> Vector {
            let mut x = &self.powers[t] * model.mu0();
            for (j, u) in inputs.iter().enumerate().take(t) {
                x += &self.powers[t - 1 - j] * (model.b() * u);
            }
            x
        };
        let centered: Vec<Vector> = outputs.iter().enumerate().map(|(t, y)| y - model.c() * mean_x(t)).collect();
        (0..outputs.len())
            .map(|t| {
                if t == 0 {
                    return centered[0].clone();
                }
                let (g, cy, _) = self.past(t);
                let mut stacked = Vector::zeros(p * t);
                for (a, v) in centered.iter().enumerate().take(t) {
                    stacked.rows_mut(a * p, p).copy_from(v);
                }
                let coef = g.lu().solve(&stacked).expect("past outputs are nondegenerate");
                &centered[t] - cy.transpose() * coef
            })
            .collect()
    }
}

/// Sampled probability and conditional mean of a box, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMoments {
    pub prob: f64,
    pub prob_se: f64,
    pub mean: Vector,
    /// Per component; infinite when fewer than two samples hit the box.
    pub mean_se: Vector,
}

/// Rejection-sampling estimate of the moments of a box under `N(0, m)`.
pub fn sampled_box_moments<R: Rng + ?Sized>(m: &Matrix, cell: &Cell, samples: usize, rng: &mut R) -> SampledMoments {
    let dim = m.nrows();
    let chol = m.clone().cholesky().expect("positive definite").l();
    let mut hits = 0usize;
    let mut sum = Vector::zeros(dim);
    let mut sum_sq = Vector::zeros(dim);
    for _ in 0..samples {
        let z = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &chol * z;
        if cell.contains(x.as_slice()) {
            hits += 1;
            sum_sq += x.component_mul(&x);
            sum += x;
        }
    }
    let prob = hits as f64 / samples as f64;
    let h = hits as f64;
    let mean = if hits > 0 { &sum / h } else { Vector::zeros(dim) };
    let mean_se = Vector::from_fn(dim, |d, _| {
        if hits < 2 {
            return f64::INFINITY;
        }
        let var = (sum_sq[d] - h * mean[d] * mean[d]) / (h - 1.0);
        (var.max(0.0) / h).sqrt()
    });
    SampledMoments { prob, prob_se: (prob * (1.0 - prob) / samples as f64).sqrt(), mean, mean_se }
}

/// A binary program read back from LP text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpModel {
    pub objective: BTreeMap<String, f64>,
    /// `(coefficients, sense, right-hand side)`
    pub constraints: Vec<(BTreeMap<String, f64>, String, f64)>,
    pub binaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("malformed LP text: {0}")]
    Parse(String),
    #[error("{0} binaries are too many to enumerate")]
    TooLarge(usize),
    #[error("no feasible assignment")]
    Infeasible,
}

fn parse_terms(tokens: &[&str]) -> Result<BTreeMap<String, f64>, LpError> {
    let mut out = BTreeMap::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for tok in tokens {
        match *tok {
            "+" => sign = 1.0,
            "-" => sign = -sign,
            t => match t.parse::<f64>() {
                Ok(v) => coef = Some(v),
                Err(_) => {
                    *out.entry(t.to_string()).or_insert(0.0) += sign * coef.unwrap_or(1.0);
                    sign = 1.0;
                    coef = None;
                }
            },
        }
    }
    if coef.is_some() {
        return Err(LpError::Parse("dangling coefficient".into()));
    }
    Ok(out)
}

/// Parse the subset of the LP format written by the exporter.
pub fn parse_lp(text: &str) -> Result<LpModel, LpError> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Objective,
        Constraints,
        Binary,
        End,
    }
    let mut model = LpModel::default();
    let mut section = Section::None;
    let mut objective_tokens: Vec<String> = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" | "minimise" | "min" => {
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." => {
                section = Section::Constraints;
                continue;
            }
            "binary" | "binaries" | "bin" => {
                section = Section::Binary;
                continue;
            }
            "end" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        let body = line.split_once(':').map_or(line, |(_, rest)| rest);
        match section {
            Section::Objective => objective_tokens.extend(body.split_whitespace().map(String::from)),
            Section::Constraints => {
                let (lhs, sense, rhs) = ["<=", ">=", "="]
                    .iter()
                    .find_map(|op| body.split_once(op).map(|(l, r)| (l, *op, r)))
                    .ok_or_else(|| LpError::Parse(format!("constraint without relation: {line}")))?;
                let rhs: f64 = rhs.trim().parse().map_err(|_| LpError::Parse(format!("bad right-hand side: {line}")))?;
                let tokens: Vec<&str> = lhs.split_whitespace().collect();
                model.constraints.push((parse_terms(&tokens)?, sense.to_string(), rhs));
            }
            Section::Binary => model.binaries.extend(body.split_whitespace().map(String::from)),
            Section::None | Section::End => return Err(LpError::Parse(format!("unexpected line: {line}"))),
        }
    }
    let tokens: Vec<&str> = objective_tokens.iter().map(String::as_str).collect();
    model.objective = parse_terms(&tokens)?;
    Ok(model)
}

impl LpModel {
    pub fn objective_value(&self, assignment: &BTreeMap<String, f64>) -> f64 {
        self.objective.iter().map(|(v, c)| c * assignment.get(v).copied().unwrap_or(0.0)).sum()
    }

    pub fn feasible(&self, assignment: &BTreeMap<String, f64>) -> bool {
        self.constraints.iter().all(|(terms, sense, rhs)| {
            let lhs: f64 = terms.iter().map(|(v, c)| c * assignment.get(v).copied().unwrap_or(0.0)).sum();
            match sense.as_str() {
                "<=" => lhs <= rhs + 1e-12,
                ">=" => lhs >= rhs - 1e-12,
                _ => (lhs - rhs).abs() <= 1e-12,
            }
        })
    }

    /// Exhaustive minimization over all 0/1 assignments of the binaries.
    pub fn solve_by_enumeration(&self) -> Result<(BTreeMap<String, f64>, f64), LpError> {
        let n = self.binaries.len();
        if n > 24 {
            return Err(LpError::TooLarge(n));
        }
        let mut best: Option<(BTreeMap<String, f64>, f64)> = None;
        for mask in 0u64..(1u64 << n) {
            let assignment: BTreeMap<String, f64> =
                self.binaries.iter().enumerate().map(|(i, v)| (v.clone(), ((mask >> i) & 1) as f64)).collect();
            if !self.feasible(&assignment) {
                continue;
            }
            let value = self.objective_value(&assignment);
            if best.as_ref().is_none_or(|(_, b)| value < *b) {
                best = Some((assignment, value));
            }
        }
        best.ok_or(LpError::Infeasible)
    }
}

/// The `x_t_i` assignment encoding a schedule (0-based bank positions).
pub fn schedule_assignment(theta: &[usize], quantizers: usize) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (t, &sel) in theta.iter().enumerate() {
        for i in 0..quantizers {
            out.insert(format!("x_{t}_{}", i + 1), if i == sel { 1.0 } else { 0.0 });
        }
    }
    out
}

/// Schedule encoded by an assignment, if it selects exactly one quantizer per stage.
pub fn assignment_schedule(assignment: &BTreeMap<String, f64>, horizon: usize, quantizers: usize) -> Option<Vec<usize>> {
    (0..horizon)
        .map(|t| {
            let chosen: Vec<usize> = (0..quantizers)
                .filter(|i| assignment.get(&format!("x_{t}_{}", i + 1)).copied().unwrap_or(0.0) > 0.5)
                .collect();
            (chosen.len() == 1).then(|| chosen[0])
        })
        .collect()
}
