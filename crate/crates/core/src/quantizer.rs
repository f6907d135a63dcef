//! Quantizer bank: partitions, prices, transmission delays, and the cell
//! moment tables the decoder and the scheduler rely on.
//!
//! Cells are axis-aligned boxes, each side a half-open interval `[lo, hi)`.
//! Only the cell index travels over the channel; the decoder replaces it by
//! the conditional mean of the innovation over that cell.

use alloc::vec::Vec;

use crate::innovation::InnovationStatistics;
use crate::linalg::{self, Matrix, Vector};
use crate::quadrature::{self, QuadratureConfig, QuadratureError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantizerError {
    #[error("bank is empty")]
    EmptyBank,
    #[error("channel bit-rate must be >= 1")]
    ZeroBitRate,
    #[error("quantizer {quantizer} has no cells")]
    NoCells { quantizer: usize },
    #[error("quantizer {quantizer}, cell {cell}: expected {expected} intervals, found {found}")]
    DimensionMismatch { quantizer: usize, cell: usize, expected: usize, found: usize },
    #[error("quantizer {quantizer}, cell {cell}: empty or malformed interval in dimension {dim}")]
    BadInterval { quantizer: usize, cell: usize, dim: usize },
    #[error("quantizer {quantizer}: price must be finite and >= 0, got {price}")]
    BadPrice { quantizer: usize, price: f64 },
    #[error("quantizer {quantizer}: cells do not partition the space ({covering} cells cover the point {point:?})")]
    NotAPartition { quantizer: usize, covering: usize, point: Vec<f64> },
    #[error("output dimension {0} is not supported (at most 3)")]
    UnsupportedDimension(usize),
    #[error("no cell contains the point")]
    NoCellFound,
    #[error("quadrature failed at t={t}, quantizer {quantizer}, cell {cell}: {source}")]
    Quadrature { t: usize, quantizer: usize, cell: usize, source: QuadratureError },
    #[error("unknown cell: t={t}, quantizer {quantizer}, cell {cell}")]
    UnknownCell { t: usize, quantizer: usize, cell: usize },
}

/// Half-open interval `[lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    /// `[0, ∞)`
    pub const NONNEGATIVE: Interval = Interval { lo: 0.0, hi: f64::INFINITY };
    /// `(-∞, 0)`
    pub const NEGATIVE: Interval = Interval { lo: f64::NEG_INFINITY, hi: 0.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub bounds: Vec<Interval>,
}

impl Cell {
    pub fn new(bounds: Vec<Interval>) -> Self {
        Self { bounds }
    }

    pub fn whole_space(dim: usize) -> Self {
        Self { bounds: alloc::vec![Interval::REAL_LINE; dim] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.iter().zip(x).all(|(iv, v)| iv.contains(*v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    /// Position of this quantizer in the bank as supplied (before delay sorting).
    pub index: usize,
    pub cells: Vec<Cell>,
    pub price: f64,
}

impl QuantizerSpec {
    pub fn new(index: usize, cells: Vec<Cell>, price: f64) -> Self {
        Self { index, cells, price }
    }

    /// Single-cell quantizer: selecting it sends nothing useful.
    pub fn null(index: usize, dim: usize, price: f64) -> Self {
        Self { index, cells: alloc::vec![Cell::whole_space(dim)], price }
    }

    pub fn levels(&self) -> usize {
        self.cells.len()
    }

    pub fn dim(&self) -> usize {
        self.cells.first().map_or(0, |c| c.bounds.len())
    }

    /// Index of the cell containing `xi`.
    pub fn quantize(&self, xi: &[f64]) -> Result<usize, QuantizerError> {
        self.cells.iter().position(|c| c.contains(xi)).ok_or(QuantizerError::NoCellFound)
    }

    /// Exact check that the boxes tile `ℝ^p`: every elementary box of the grid
    /// spanned by all cell boundaries lies in exactly one cell.
    fn check_partition(&self) -> Result<(), QuantizerError> {
        let dim = self.dim();
        let mut reps: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut cuts: Vec<f64> = self
                .cells
                .iter()
                .flat_map(|c| [c.bounds[d].lo, c.bounds[d].hi])
                .filter(|v| v.is_finite())
                .collect();
            cuts.sort_by(|a, b| a.total_cmp(b));
            cuts.dedup();
            let mut pts = Vec::with_capacity(cuts.len() + 1);
            match (cuts.first(), cuts.last()) {
                (Some(&first), Some(&last)) => {
                    pts.push(first - 1.0);
                    pts.extend(cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
                    pts.push(last);
                }
                _ => pts.push(0.0),
            }
            reps.push(pts);
        }
        let mut idx = alloc::vec![0usize; dim];
        let mut point = alloc::vec![0.0; dim];
        loop {
            for d in 0..dim {
                point[d] = reps[d][idx[d]];
            }
            let covering = self.cells.iter().filter(|c| c.contains(&point)).count();
            if covering != 1 {
                return Err(QuantizerError::NotAPartition { quantizer: self.index, covering, point });
            }
            let mut d = 0;
            loop {
                if d == dim {
                    return Ok(());
                }
                idx[d] += 1;
                if idx[d] < reps[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }
}

/// `⌈⌈log₂ ℓ⌉ / r_b⌉` for each level count; a single-level quantizer has zero delay.
pub fn compute_delays(levels: &[usize], bit_rate: u32) -> Vec<usize> {
    let rate = bit_rate.max(1) as usize;
    levels
        .iter()
        .map(|&l| {
            let bits = if l <= 1 { 0 } else { (usize::BITS - (l - 1).leading_zeros()) as usize };
            bits.div_ceil(rate)
        })
        .collect()
}

/// Validated bank, ordered by nondecreasing delay.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerBank {
    quantizers: Vec<QuantizerSpec>,
    bit_rate: u32,
    delays: Vec<usize>,
}

impl QuantizerBank {
    /// Validate the bank and reorder it by delay (stable, so ties keep their
    /// supplied order). `QuantizerSpec::index` still names the supplied position.
    pub fn new(quantizers: Vec<QuantizerSpec>, bit_rate: u32) -> Result<Self, QuantizerError> {
        if quantizers.is_empty() {
            return Err(QuantizerError::EmptyBank);
        }
        if bit_rate == 0 {
            return Err(QuantizerError::ZeroBitRate);
        }
        let dim = quantizers[0].dim();
        if dim > quadrature::MAX_DIMENSION {
            return Err(QuantizerError::UnsupportedDimension(dim));
        }
        for q in &quantizers {
            if q.cells.is_empty() {
                return Err(QuantizerError::NoCells { quantizer: q.index });
            }
            if !(q.price.is_finite() && q.price >= 0.0) {
                return Err(QuantizerError::BadPrice { quantizer: q.index, price: q.price });
            }
            for (j, cell) in q.cells.iter().enumerate() {
                if cell.bounds.len() != dim || dim == 0 {
                    return Err(QuantizerError::DimensionMismatch {
                        quantizer: q.index,
                        cell: j,
                        expected: dim,
                        found: cell.bounds.len(),
                    });
                }
                for (d, iv) in cell.bounds.iter().enumerate() {
                    if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo >= iv.hi || iv.lo == f64::INFINITY {
                        return Err(QuantizerError::BadInterval { quantizer: q.index, cell: j, dim: d });
                    }
                }
            }
            q.check_partition()?;
        }
        let levels: Vec<usize> = quantizers.iter().map(QuantizerSpec::levels).collect();
        let raw_delays = compute_delays(&levels, bit_rate);
        let mut order: Vec<usize> = (0..quantizers.len()).collect();
        order.sort_by_key(|&i| raw_delays[i]);
        let delays = order.iter().map(|&i| raw_delays[i]).collect();
        let mut slots: Vec<Option<QuantizerSpec>> = quantizers.into_iter().map(Some).collect();
        let quantizers = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
        Ok(Self { quantizers, bit_rate, delays })
    }

    pub fn quantizers(&self) -> &[QuantizerSpec] {
        &self.quantizers
    }

    pub fn len(&self) -> usize {
        self.quantizers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quantizers.is_empty()
    }

    pub fn bit_rate(&self) -> u32 {
        self.bit_rate
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn prices(&self) -> Vec<f64> {
        self.quantizers.iter().map(|q| q.price).collect()
    }

    pub fn output_dim(&self) -> usize {
        self.quantizers[0].dim()
    }

    /// Same partitions and prices, different channel.
    pub fn with_bit_rate(&self, bit_rate: u32) -> Result<Self, QuantizerError> {
        let mut qs = self.quantizers.clone();
        qs.sort_by_key(|q| q.index);
        Self::new(qs, bit_rate)
    }

    /// Same partitions and delays, different prices (given in bank order).
    pub fn with_prices(&self, prices: &[f64]) -> Result<Self, QuantizerError> {
        let mut qs = self.quantizers.clone();
        for (q, &p) in qs.iter_mut().zip(prices) {
            q.price = p;
        }
        qs.sort_by_key(|q| q.index);
        Self::new(qs, self.bit_rate)
    }
}

/// Probability and conditional mean of one cell at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMoment {
    pub prob: f64,
    pub mean: Vector,
}

/// Cell moments of one quantizer at one stage, with the covariance of the
/// decoded innovation `F` and the residual `ℳ = M_t - F`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerMoments {
    pub cells: Vec<CellMoment>,
    pub f: Matrix,
    pub mcal: Matrix,
}

pub fn cell_moments(
    m: &Matrix,
    cells: &[Cell],
    config: &QuadratureConfig,
) -> Result<Vec<CellMoment>, (usize, QuadratureError)> {
    if m.iter().all(|v| *v == 0.0) {
        // point mass at the origin
        let origin = alloc::vec![0.0; m.nrows()];
        return Ok(cells
            .iter()
            .map(|cell| CellMoment {
                prob: if cell.contains(&origin) { 1.0 } else { 0.0 },
                mean: Vector::zeros(m.nrows()),
            })
            .collect());
    }
    cells
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            let lo: Vec<f64> = cell.bounds.iter().map(|iv| iv.lo).collect();
            let hi: Vec<f64> = cell.bounds.iter().map(|iv| iv.hi).collect();
            quadrature::box_moments(m, &lo, &hi, config)
                .map(|b| CellMoment { prob: b.prob, mean: b.mean })
                .map_err(|e| (j, e))
        })
        .collect()
}

/// `F = Σ_j P_j · mean_j mean_jᵀ`.
pub fn reduction_covariance(cells: &[CellMoment]) -> Matrix {
    let dim = cells.first().map_or(0, |c| c.mean.len());
    let mut f = Matrix::zeros(dim, dim);
    for c in cells {
        f += c.prob * &c.mean * c.mean.transpose();
    }
    linalg::symmetrized(f)
}

/// Offline table over stage × quantizer × cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMomentTable {
    /// `entries[t][i]`
    pub entries: Vec<Vec<QuantizerMoments>>,
}

pub fn build_moment_tables(
    bank: &QuantizerBank,
    stats: &InnovationStatistics,
    config: &QuadratureConfig,
) -> Result<CellMomentTable, QuantizerError> {
    if bank.output_dim() != stats.m[0].nrows() {
        return Err(QuantizerError::DimensionMismatch {
            quantizer: bank.quantizers[0].index,
            cell: 0,
            expected: stats.m[0].nrows(),
            found: bank.output_dim(),
        });
    }
    let mut entries = Vec::with_capacity(stats.horizon());
    for (t, mt) in stats.m.iter().enumerate() {
        let mut row = Vec::with_capacity(bank.len());
        for (i, q) in bank.quantizers.iter().enumerate() {
            let cells = cell_moments(mt, &q.cells, config)
                .map_err(|(cell, source)| QuantizerError::Quadrature { t, quantizer: i, cell, source })?;
            let f = reduction_covariance(&cells);
            let mcal = linalg::symmetrized(mt - &f);
            row.push(QuantizerMoments { cells, f, mcal });
        }
        entries.push(row);
    }
    Ok(CellMomentTable { entries })
}

impl CellMomentTable {
    pub fn horizon(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, t: usize, quantizer: usize) -> Option<&QuantizerMoments> {
        self.entries.get(t).and_then(|row| row.get(quantizer))
    }

    /// `F_t^i`.
    pub fn f(&self, t: usize, quantizer: usize) -> &Matrix {
        &self.entries[t][quantizer].f
    }

    /// `ℳ_t^i = M_t - F_t^i`.
    pub fn mcal(&self, t: usize, quantizer: usize) -> &Matrix {
        &self.entries[t][quantizer].mcal
    }

    /// `E[ξ_t | ξ_t ∈ cell]` for the given quantizer.
    pub fn conditional_mean(&self, t: usize, quantizer: usize, cell: usize) -> Result<&Vector, QuantizerError> {
        self.get(t, quantizer)
            .and_then(|q| q.cells.get(cell))
            .map(|c| &c.mean)
            .ok_or(QuantizerError::UnknownCell { t, quantizer, cell })
    }
}
