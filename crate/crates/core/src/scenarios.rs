//! Reference scenarios and random instance generators.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::{self, Matrix, Vector};
use crate::model::RawScenario;
use crate::quantizer::{Cell, Interval, QuantizerBank, QuantizerSpec};

/// Two-state plant with a coupled output map, `T = 50`.
pub fn example_raw() -> RawScenario {
    let half = Matrix::identity(2, 2) * 0.5;
    RawScenario {
        a: Matrix::from_row_slice(2, 2, &[1.01, 0.5, 0.0, 1.1]),
        b: Matrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.15]),
        c: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
        w: half.clone(),
        v: Matrix::identity(2, 2) * 0.25,
        sigma_x: Matrix::identity(2, 2),
        mu0: Vector::zeros(2),
        q1: half.clone(),
        q2: half.clone(),
        r: half,
        horizon: 50,
    }
}

/// [`example_raw`] with `C = I`, `V = 0` and `Σ_x = W`, so the innovations are
/// i.i.d. `N(0, W)`.
pub fn full_observation_raw() -> RawScenario {
    let mut raw = example_raw();
    raw.c = Matrix::identity(2, 2);
    raw.v = Matrix::zeros(2, 2);
    raw.sigma_x = raw.w.clone();
    raw
}

fn cell2(x: Interval, y: Interval) -> Cell {
    Cell::new(vec![x, y])
}

/// The three nested planar quantizers with 2, 4 and 8 levels.
pub fn example_quantizers(prices: [f64; 3]) -> Vec<QuantizerSpec> {
    use Interval as I;
    let (pos, neg) = (I::NONNEGATIVE, I::NEGATIVE);
    let q1 = vec![cell2(pos, I::REAL_LINE), cell2(neg, I::REAL_LINE)];
    let q2 = vec![cell2(pos, pos), cell2(pos, neg), cell2(neg, pos), cell2(neg, neg)];
    let (a, b) = (I::new(0.0, 1.0), I::new(1.0, f64::INFINITY));
    let (c, d) = (I::new(-1.0, 0.0), I::new(f64::NEG_INFINITY, -1.0));
    let q3 = vec![
        cell2(a, pos),
        cell2(b, pos),
        cell2(a, neg),
        cell2(b, neg),
        cell2(c, pos),
        cell2(d, pos),
        cell2(c, neg),
        cell2(d, neg),
    ];
    vec![
        QuantizerSpec::new(0, q1, prices[0]),
        QuantizerSpec::new(1, q2, prices[1]),
        QuantizerSpec::new(2, q3, prices[2]),
    ]
}

pub fn example_bank(bit_rate: u32, prices: [f64; 3]) -> QuantizerBank {
    QuantizerBank::new(example_quantizers(prices), bit_rate).expect("reference bank is valid")
}

/// Reference bank plus the single-cell quantizer at price 0.
pub fn example_bank_with_null(bit_rate: u32, prices: [f64; 3]) -> QuantizerBank {
    let mut qs = example_quantizers(prices);
    qs.push(QuantizerSpec::null(3, 2, 0.0));
    QuantizerBank::new(qs, bit_rate).expect("reference bank is valid")
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize, floor: f64) -> Matrix {
    let g = uniform_matrix(rng, dim, dim);
    linalg::symmetrized(&g * g.transpose() + Matrix::identity(dim, dim) * floor)
}

/// Random well-posed scenario; `‖A‖_∞ ≤ 1.2`.
pub fn random_raw<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, p: usize, horizon: usize) -> RawScenario {
    let mut a = uniform_matrix(rng, n, n);
    let norm = linalg::inf_norm(&a);
    if norm > 1.2 {
        a *= 1.2 / norm;
    }
    RawScenario {
        a,
        b: uniform_matrix(rng, n, m),
        c: uniform_matrix(rng, p, n) + Matrix::identity(p, n),
        w: random_psd(rng, n, 0.1),
        v: random_psd(rng, p, 0.1),
        sigma_x: random_psd(rng, n, 0.1),
        mu0: Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        q1: random_psd(rng, n, 0.0),
        q2: random_psd(rng, n, 0.0),
        r: random_psd(rng, m, 0.5),
        horizon: horizon as i64,
    }
}

/// Random box partition of `ℝ^dim` with `levels` cells, built by repeatedly
/// splitting a random cell along a random axis.
pub fn random_quantizer<R: Rng + ?Sized>(
    rng: &mut R,
    index: usize,
    dim: usize,
    levels: usize,
    price: f64,
) -> QuantizerSpec {
    let mut cells = vec![Cell::whole_space(dim)];
    while cells.len() < levels {
        let j = rng.random_range(0..cells.len());
        let d = rng.random_range(0..dim);
        let iv = cells[j].bounds[d];
        let cut = match (iv.lo.is_finite(), iv.hi.is_finite()) {
            (true, true) => iv.lo + (iv.hi - iv.lo) * rng.random_range(0.2..0.8),
            (true, false) => iv.lo + rng.random_range(0.1..1.5),
            (false, true) => iv.hi - rng.random_range(0.1..1.5),
            (false, false) => rng.random_range(-0.8..0.8),
        };
        let mut upper = cells[j].clone();
        cells[j].bounds[d].hi = cut;
        upper.bounds[d].lo = cut;
        cells.push(upper);
    }
    QuantizerSpec::new(index, cells, price)
}

/// Bank whose delays (at bit-rate 1) are the given values: a delay `d`
/// quantizer has `2^d` levels.
pub fn random_bank<R: Rng + ?Sized>(rng: &mut R, dim: usize, delays: &[usize], max_price: f64) -> QuantizerBank {
    let mut qs = Vec::with_capacity(delays.len());
    for (i, &d) in delays.iter().enumerate() {
        let price = rng.random_range(0.0..max_price);
        qs.push(random_quantizer(rng, i, dim, 1 << d, price));
    }
    QuantizerBank::new(qs, 1).expect("generated partitions are valid")
}
