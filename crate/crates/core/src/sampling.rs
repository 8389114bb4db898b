//! Sampling distributions over entry indices and the observation sample.
//!
//! Indices are zero-based throughout the library; the observation CSV format
//! is one-based (see [`crate::io`]).

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::matops::{operator_norm, Matrix};

/// A probability table `π` over the entries of an `m1 × m2` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingScheme {
    pi: Matrix,
    /// Row-major cumulative sums of `π`.
    cumulative: Vec<f64>,
}

const SUM_TOL: f64 = 1e-12;

impl SamplingScheme {
    pub fn uniform(m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(invalid("scheme dimensions must be positive"));
        }
        let p = 1.0 / (m1 * m2) as f64;
        Self::from_table(Matrix::from_element(m1, m2, p))
    }

    /// Wraps an already normalized table.
    pub fn from_table(pi: Matrix) -> Result<Self> {
        if pi.is_empty() {
            return Err(invalid("scheme dimensions must be positive"));
        }
        if pi.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self::build(pi))
    }

    /// Normalizes a nonnegative weight table.
    pub fn from_weights(weights: Matrix) -> Result<Self> {
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("weights must have a positive sum"));
        }
        Self::from_table(weights / total)
    }

    /// `π_{k,l} ∝ a_k b_l`.
    pub fn product(row_weights: &[f64], col_weights: &[f64]) -> Result<Self> {
        let w = Matrix::from_fn(row_weights.len(), col_weights.len(), |k, l| row_weights[k] * col_weights[l]);
        Self::from_weights(w)
    }

    fn build(pi: Matrix) -> Self {
        let (m1, m2) = pi.shape();
        let mut cumulative = Vec::with_capacity(m1 * m2);
        let mut acc = 0.0;
        for k in 0..m1 {
            for l in 0..m2 {
                acc += pi[(k, l)];
                cumulative.push(acc);
            }
        }
        // Pin the tail to 1 from the last cell carrying mass so rounding can
        // never route a draw into trailing zero-probability cells.
        if let Some(last) = pi.transpose().iter().rposition(|&p| p > 0.0) {
            for c in &mut cumulative[last..] {
                *c = 1.0;
            }
        }
        Self { pi, cumulative }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pi.shape()
    }

    pub fn table(&self) -> &Matrix {
        &self.pi
    }

    pub fn prob(&self, k: usize, l: usize) -> f64 {
        self.pi[(k, l)]
    }

    pub fn row_marginals(&self) -> Vec<f64> {
        self.pi.row_iter().map(|r| r.sum()).collect()
    }

    pub fn col_marginals(&self) -> Vec<f64> {
        self.pi.column_iter().map(|c| c.sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::build(self.pi.transpose())
    }

    /// `μ = 1 / (m1 m2 min π)`; fails when some entry is never sampled.
    pub fn mu_constant(&self) -> Result<f64> {
        let (m1, m2) = self.dims();
        let (mut min, mut at) = (f64::INFINITY, (0, 0));
        for k in 0..m1 {
            for l in 0..m2 {
                if self.pi[(k, l)] < min {
                    min = self.pi[(k, l)];
                    at = (k, l);
                }
            }
        }
        if min <= 0.0 {
            return Err(Error::ZeroProbability { row: at.0, col: at.1 });
        }
        Ok(1.0 / ((m1 * m2) as f64 * min))
    }

    /// `ν = (m1 ∧ m2) · max(R_k, C_l)`.
    pub fn nu_constant(&self) -> f64 {
        let (m1, m2) = self.dims();
        let max = self
            .row_marginals()
            .into_iter()
            .chain(self.col_marginals())
            .fold(0.0, f64::max);
        m1.min(m2) as f64 * max
    }

    pub fn max_prob(&self) -> f64 {
        self.pi.iter().copied().fold(0.0, f64::max)
    }

    pub fn draw_one<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random();
        // First cell whose cumulative mass exceeds `u`; zero-mass cells repeat
        // their predecessor's value and are never selected.
        let idx = self.cumulative.partition_point(|&c| c <= u);
        let m2 = self.dims().1;
        (idx / m2, idx % m2)
    }

    /// `n` i.i.d. indices by inverse-CDF lookup.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
        if n == 0 {
            return Err(invalid("sample size must be >= 1"));
        }
        Ok((0..n).map(|_| self.draw_one(rng)).collect())
    }

    /// `Σ π_{k,l} A_{k,l}²`.
    pub fn weighted_sq_norm(&self, a: &Matrix) -> Result<f64> {
        if a.shape() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: a.shape(),
            });
        }
        Ok(self.pi.iter().zip(a.iter()).map(|(p, v)| p * v * v).sum())
    }
}

/// Per-replicate operator norms `‖Σ_R‖_{σ,∞}` of the Rademacher average
/// `Σ_R = n⁻¹ Σ εᵢ Eᵢ`.
pub fn rademacher_norm_samples<R: Rng + ?Sized>(
    scheme: &SamplingScheme,
    n: usize,
    reps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(invalid("reps must be >= 1"));
    }
    let (m1, m2) = scheme.dims();
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let idx = scheme.draw(n, rng)?;
        let mut acc = Matrix::zeros(m1, m2);
        for (k, l) in idx {
            acc[(k, l)] += if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        acc /= n as f64;
        out.push(operator_norm(&acc)?);
    }
    Ok(out)
}

/// Monte-Carlo estimate of `E‖Σ_R‖_{σ,∞}`.
pub fn rademacher_norm_estimate<R: Rng + ?Sized>(
    scheme: &SamplingScheme,
    n: usize,
    reps: usize,
    rng: &mut R,
) -> Result<f64> {
    let s = rademacher_norm_samples(scheme, n, reps, rng)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// The observed sample `(ωᵢ, Yᵢ)`, `i = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    m1: usize,
    m2: usize,
    omegas: Vec<(usize, usize)>,
    ys: Vec<f64>,
}

/// Observation counts and response sums per entry.
#[derive(Debug, Clone)]
pub struct EntryStats {
    pub counts: Matrix,
    pub sums: Matrix,
}

impl ObservationSet {
    pub fn new(m1: usize, m2: usize, omegas: Vec<(usize, usize)>, ys: Vec<f64>) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(invalid("observation dimensions must be positive"));
        }
        if omegas.is_empty() {
            return Err(invalid("at least one observation is required"));
        }
        if omegas.len() != ys.len() {
            return Err(invalid(format!(
                "{} indices but {} responses",
                omegas.len(),
                ys.len()
            )));
        }
        if let Some(&(k, l)) = omegas.iter().find(|&&(k, l)| k >= m1 || l >= m2) {
            return Err(invalid(format!("index ({k}, {l}) outside {m1}x{m2}")));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Self { m1, m2, omegas, ys })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn omegas(&self) -> &[(usize, usize)] {
        &self.omegas
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.omegas.iter().copied().zip(self.ys.iter().copied())
    }

    pub fn entry_stats(&self) -> EntryStats {
        let mut counts = Matrix::zeros(self.m1, self.m2);
        let mut sums = Matrix::zeros(self.m1, self.m2);
        for ((k, l), y) in self.iter() {
            counts[(k, l)] += 1.0;
            sums[(k, l)] += y;
        }
        EntryStats { counts, sums }
    }
}
