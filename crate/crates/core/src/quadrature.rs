//! Probability and first moment of a centered Gaussian restricted to a box.
//!
//! With `M = LLᵀ` and `ξ = Lz`, the box `a ≤ ξ < b` becomes a sequence of
//! conditional intervals for `z_1, z_2, ...`. The innermost coordinate is
//! integrated in closed form through `erfc`; the outer ones (at most two, as
//! `p ≤ 3`) use composite Gauss–Legendre panels, doubling the node count
//! until two successive estimates agree.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::linalg::{Matrix, Vector};

pub const MAX_DIMENSION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Relative agreement required between successive refinements.
    pub rel_tol: f64,
    /// Absolute floor added to the relative tolerance.
    pub abs_tol: f64,
    /// Node cap per integrated dimension.
    pub max_nodes: usize,
    /// Gauss–Legendre order used inside each panel.
    pub panel_order: usize,
    /// Infinite outer bounds are clipped at this many standard deviations.
    pub clip_sigmas: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-9, abs_tol: 1e-15, max_nodes: 1 << 10, panel_order: 8, clip_sigmas: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge (last refinement changed the estimate by {achieved:e})")]
    NotConverged { achieved: f64 },
    #[error("dimension {0} is not supported (at most {MAX_DIMENSION})")]
    UnsupportedDimension(usize),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
}

/// `P(a ≤ ξ < b)` and `E[ξ | a ≤ ξ < b]` for `ξ ~ N(0, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMoments {
    pub prob: f64,
    pub mean: Vector,
}

pub fn normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `Φ(hi) - Φ(lo)` without cancellation in the upper tail.
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo > 0.0 {
        0.5 * (libm::erfc(lo * FRAC_1_SQRT_2) - libm::erfc(hi * FRAC_1_SQRT_2))
    } else {
        normal_cdf(hi) - normal_cdf(lo)
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = libm::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            deriv = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / deriv;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * deriv * deriv);
    }
    (nodes, weights)
}

struct Integrator<'a> {
    chol: &'a Matrix,
    lo: &'a [f64],
    hi: &'a [f64],
    cfg: &'a QuadratureConfig,
    rule: (Vec<f64>, Vec<f64>),
}

impl Integrator<'_> {
    /// Conditional bounds of `z_level` given the outer coordinates `prefix`.
    fn bounds(&self, level: usize, prefix: &[f64]) -> (f64, f64) {
        let shift: f64 = prefix.iter().enumerate().map(|(j, z)| self.chol[(level, j)] * z).sum();
        let d = self.chol[(level, level)];
        ((self.lo[level] - shift) / d, (self.hi[level] - shift) / d)
    }

    /// Returns `[P, E[z_level 1], ..., E[z_{p-1} 1]]` conditional on `prefix`.
    fn integrate(&self, level: usize, prefix: &mut Vec<f64>) -> Result<Vec<f64>, QuadratureError> {
        let dim = self.lo.len();
        let (alpha, beta) = self.bounds(level, prefix);
        if level + 1 == dim {
            if beta <= alpha {
                return Ok(vec![0.0, 0.0]);
            }
            return Ok(vec![normal_interval(alpha, beta), normal_pdf(alpha) - normal_pdf(beta)]);
        }
        let clip = self.cfg.clip_sigmas;
        let (a, b) = (alpha.max(-clip), beta.min(clip));
        let width = dim - level + 1;
        if b <= a {
            return Ok(vec![0.0; width]);
        }

        let order = self.rule.0.len();
        let mut previous: Option<Vec<f64>> = None;
        let mut panels = 1;
        let mut last_change = f64::INFINITY;
        while panels * order <= self.cfg.max_nodes {
            let mut acc = vec![0.0; width];
            let h = (b - a) / panels as f64;
            for panel in 0..panels {
                let left = a + h * panel as f64;
                for (x, w) in self.rule.0.iter().zip(&self.rule.1) {
                    let z = left + 0.5 * h * (x + 1.0);
                    let weight = 0.5 * h * w * normal_pdf(z);
                    prefix.push(z);
                    let inner = self.integrate(level + 1, prefix)?;
                    prefix.pop();
                    acc[0] += weight * inner[0];
                    acc[1] += weight * z * inner[0];
                    for (slot, value) in acc[2..].iter_mut().zip(&inner[1..]) {
                        *slot += weight * value;
                    }
                }
            }
            if let Some(prev) = &previous {
                let mut converged = true;
                last_change = 0.0;
                for (new, old) in acc.iter().zip(prev) {
                    let change = (new - old).abs();
                    last_change = last_change.max(change);
                    if change > self.cfg.rel_tol * new.abs() + self.cfg.abs_tol {
                        converged = false;
                    }
                }
                if converged {
                    return Ok(acc);
                }
            }
            previous = Some(acc);
            panels *= 2;
        }
        Err(QuadratureError::NotConverged { achieved: last_change })
    }
}

/// Moments of `N(0, m)` restricted to the box `lo ≤ ξ < hi` (bounds may be infinite).
pub fn box_moments(
    m: &Matrix,
    lo: &[f64],
    hi: &[f64],
    cfg: &QuadratureConfig,
) -> Result<BoxMoments, QuadratureError> {
    let dim = m.nrows();
    if dim == 0 || dim > MAX_DIMENSION {
        return Err(QuadratureError::UnsupportedDimension(dim));
    }
    if lo.iter().chain(hi).all(|v| v.is_infinite()) && lo.iter().all(|v| *v < 0.0) && hi.iter().all(|v| *v > 0.0) {
        return Ok(BoxMoments { prob: 1.0, mean: Vector::zeros(dim) });
    }
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or(QuadratureError::NotPositiveDefinite)?.unpack();
    let integrator = Integrator { chol: &chol, lo, hi, cfg, rule: gauss_legendre(cfg.panel_order) };
    let raw = integrator.integrate(0, &mut Vec::with_capacity(dim))?;
    let prob = raw[0];
    let z_moment = Vector::from_column_slice(&raw[1..]);
    let mean = if prob > 0.0 { (&chol * z_moment) / prob } else { Vector::zeros(dim) };
    Ok(BoxMoments { prob, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_2_PI;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((integral - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn half_line_closed_form() {
        let sigma2 = 2.5;
        let m = Matrix::from_element(1, 1, sigma2);
        let cfg = QuadratureConfig::default();
        let pos = box_moments(&m, &[0.0], &[f64::INFINITY], &cfg).unwrap();
        let neg = box_moments(&m, &[f64::NEG_INFINITY], &[0.0], &cfg).unwrap();
        let half_mean = libm::sqrt(sigma2 * FRAC_2_PI);
        assert!((pos.prob - 0.5).abs() < 1e-15 && (neg.prob - 0.5).abs() < 1e-15);
        assert!((pos.mean[0] - half_mean).abs() < 1e-12);
        assert!((neg.mean[0] + half_mean).abs() < 1e-12);
    }

    #[test]
    fn orthant_probability() {
        let cfg = QuadratureConfig::default();
        for rho in [0.0, 0.5, -0.5, 0.9, -0.9] {
            let m = Matrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
            let inf = f64::INFINITY;
            let got = box_moments(&m, &[0.0, 0.0], &[inf, inf], &cfg).unwrap();
            let expected = 0.25 + libm::asin(rho) / (2.0 * PI);
            assert!((got.prob - expected).abs() < 1e-9, "rho={rho}: {} vs {expected}", got.prob);
        }
    }

    #[test]
    fn trivariate_orthant() {
        // P(all positive) = 1/8 + (asin ρ12 + asin ρ13 + asin ρ23) / (4π)
        let m = Matrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 1.0, -0.4, 0.2, -0.4, 1.0]);
        let inf = f64::INFINITY;
        let got = box_moments(&m, &[0.0; 3], &[inf; 3], &QuadratureConfig::default()).unwrap();
        let expected = 0.125 + (libm::asin(0.3) + libm::asin(0.2) + libm::asin(-0.4)) / (4.0 * PI);
        assert!((got.prob - expected).abs() < 1e-9);
    }

    #[test]
    fn whole_space_is_exact() {
        let m = Matrix::identity(2, 2);
        let inf = f64::INFINITY;
        let got = box_moments(&m, &[-inf, -inf], &[inf, inf], &QuadratureConfig::default()).unwrap();
        assert_eq!(got.prob, 1.0);
        assert_eq!(got.mean, Vector::zeros(2));
    }

    #[test]
    fn four_dimensions_rejected() {
        let m = Matrix::identity(4, 4);
        assert_eq!(
            box_moments(&m, &[0.0; 4], &[1.0; 4], &QuadratureConfig::default()),
            Err(QuadratureError::UnsupportedDimension(4))
        );
    }

    #[test]
    fn tiny_node_cap_reports_non_convergence() {
        let cfg = QuadratureConfig { max_nodes: 16, rel_tol: 1e-15, abs_tol: 0.0, ..Default::default() };
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        assert!(matches!(
            box_moments(&m, &[0.0, 0.0], &[f64::INFINITY, 0.3], &cfg),
            Err(QuadratureError::NotConverged { .. })
        ));
    }
}
