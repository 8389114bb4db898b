//! Dense matrix primitives: Schatten norms, singular value thresholding,
//! box projection, the nuclear-norm-plus-box proximal operator and the
//! singular-span projections `P_X` / `P_X^⊥`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::expfam::ParameterBox;

pub type Matrix = DMatrix<f64>;

/// Singular values below `RANK_CUTOFF · σ_max` count as zero.
pub const RANK_CUTOFF: f64 = 1e-9;

/// Thin SVD `A = U diag(s) Vᵀ` with singular values in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: DVector<f64>,
    pub v_t: Matrix,
}

pub fn ensure_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("matrix entry"))
    }
}

fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

// nalgebra's bidiagonal SVD returns wrong factors for some rank-deficient
// inputs, so the decomposition goes through faer.
pub fn svd(a: &Matrix) -> Result<Svd> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd { u: Matrix::zeros(m, 0), s: DVector::zeros(0), v_t: Matrix::zeros(0, n) });
    }
    let d = to_faer(a).thin_svd().map_err(|_| invalid("SVD did not converge"))?;
    let (u, s, v) = (d.U(), d.S().column_vector(), d.V());
    Ok(Svd {
        u: Matrix::from_fn(m, k, |i, l| u[(i, l)]),
        s: DVector::from_fn(k, |l, _| s[l]),
        v_t: Matrix::from_fn(k, n, |l, j| v[(j, l)]),
    })
}

pub fn singular_values(a: &Matrix) -> Result<DVector<f64>> {
    ensure_finite(a)?;
    if a.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let s = to_faer(a).singular_values().map_err(|_| invalid("SVD did not converge"))?;
    Ok(DVector::from_vec(s))
}

/// Schatten `q`-norm; pass `f64::INFINITY` for the operator norm.
pub fn schatten_norm(a: &Matrix, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid(format!("Schatten index must be >= 1, got {q}")));
    }
    let s = singular_values(a)?;
    Ok(schatten_of(s.as_slice(), q))
}

fn schatten_of(s: &[f64], q: f64) -> f64 {
    if q == f64::INFINITY {
        s.iter().copied().fold(0.0, f64::max)
    } else if q == 1.0 {
        s.iter().sum()
    } else {
        s.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    schatten_norm(a, 1.0)
}

pub fn operator_norm(a: &Matrix) -> Result<f64> {
    schatten_norm(a, f64::INFINITY)
}

/// Number of singular values above `RANK_CUTOFF · σ_max`.
pub fn numerical_rank(a: &Matrix) -> Result<usize> {
    let s = singular_values(a)?;
    Ok(rank_of(s.as_slice()))
}

fn rank_of(s: &[f64]) -> usize {
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > RANK_CUTOFF * smax).count()
}

fn reconstruct(d: &Svd, s: impl Fn(f64) -> f64) -> Matrix {
    let mut us = d.u.clone();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= s(d.s[j]);
    }
    us * &d.v_t
}

/// Singular value soft-thresholding: the proximal map of `τ‖·‖_{σ,1}`.
pub fn svt(a: &Matrix, tau: f64) -> Result<Matrix> {
    svt_with_norm(a, tau).map(|(m, _)| m)
}

/// As [`svt`], also returning the nuclear norm of the result.
fn svt_with_norm(a: &Matrix, tau: f64) -> Result<(Matrix, f64)> {
    if !(tau >= 0.0) {
        return Err(invalid(format!("threshold must be >= 0, got {tau}")));
    }
    if a.is_empty() {
        return Ok((a.clone(), 0.0));
    }
    let d = svd(a)?;
    let norm = d.s.iter().map(|s| (s - tau).max(0.0)).sum();
    Ok((reconstruct(&d, |s| (s - tau).max(0.0)), norm))
}

/// Best rank-`k` approximation in Frobenius norm.
pub fn truncate_rank(a: &Matrix, k: usize) -> Result<Matrix> {
    let d = svd(a)?;
    let kept = k.min(d.s.len());
    let mut s = d.s.clone();
    for v in s.iter_mut().skip(kept) {
        *v = 0.0;
    }
    let d = Svd { s, ..d };
    Ok(reconstruct(&d, |s| s))
}

/// Entrywise clamp into the box, i.e. the Euclidean projection onto it.
pub fn box_clip(a: &Matrix, bx: &ParameterBox) -> Matrix {
    a.map(|v| bx.clamp(v))
}

pub fn within_box(a: &Matrix, bx: &ParameterBox) -> bool {
    a.iter().all(|&v| bx.contains(v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub matrix: Matrix,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius change between the last two iterates.
    pub residual: f64,
    /// Nuclear norm of `matrix` when it fell out of the computation.
    pub nuclear_norm: Option<f64>,
}

/// Proximal map of `τ‖·‖_{σ,1} + ι_box` by Dykstra-type alternation
/// between singular value thresholding and box clipping.
///
/// The returned matrix always comes from the clipping step and is therefore
/// feasible. If thresholding alone lands inside the box it is already the
/// exact answer and is returned after a single SVD.
pub fn combined_prox(a: &Matrix, tau: f64, bx: &ParameterBox, cfg: &ProxConfig) -> Result<ProxOutcome> {
    let (first, norm) = svt_with_norm(a, tau)?;
    if within_box(&first, bx) {
        return Ok(ProxOutcome {
            matrix: first,
            iterations: 1,
            converged: true,
            residual: 0.0,
            nuclear_norm: Some(norm),
        });
    }
    if tau == 0.0 {
        return Ok(ProxOutcome {
            matrix: box_clip(a, bx),
            iterations: 1,
            converged: true,
            residual: 0.0,
            nuclear_norm: None,
        });
    }

    let (r, c) = a.shape();
    let mut p = Matrix::zeros(r, c);
    let mut q = Matrix::zeros(r, c);
    let mut x = a.clone();
    let mut y = first;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iters.max(1) {
        if it > 1 {
            y = svt(&(&x + &p), tau)?;
        }
        p = &x + &p - &y;
        let next = box_clip(&(&y + &q), bx);
        q = &y + &q - &next;
        residual = (&next - &x).norm();
        x = next;
        if residual < cfg.tol {
            return Ok(ProxOutcome {
                matrix: x,
                iterations: it,
                converged: true,
                residual,
                nuclear_norm: None,
            });
        }
    }
    Ok(ProxOutcome {
        matrix: x,
        iterations: cfg.max_iters,
        converged: false,
        residual,
        nuclear_norm: None,
    })
}

/// Orthogonal projectors onto the singular spans of a reference matrix.
///
/// `proj_perp(Ã) = P_{S₁⊥} Ã P_{S₂⊥}` and `proj_onto(Ã) = Ã − proj_perp(Ã)`.
#[derive(Debug, Clone)]
pub struct SpanProjector {
    left: Matrix,
    right: Matrix,
    rank: usize,
    shape: (usize, usize),
}

impl SpanProjector {
    pub fn new(x_ref: &Matrix) -> Result<Self> {
        let d = svd(x_ref)?;
        let rank = rank_of(d.s.as_slice());
        let left = d.u.columns(0, rank).into_owned();
        let right = d.v_t.rows(0, rank).transpose();
        Ok(Self {
            left,
            right,
            rank,
            shape: x_ref.shape(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn proj_perp(&self, a: &Matrix) -> Result<Matrix> {
        if a.shape() != self.shape {
            return Err(Error::DimensionMismatch {
                expected: self.shape,
                got: a.shape(),
            });
        }
        // (I − UUᵀ) A (I − VVᵀ) without forming the square projectors.
        let left = a - &self.left * (self.left.transpose() * a);
        Ok(&left - (&left * &self.right) * self.right.transpose())
    }

    pub fn proj_onto(&self, a: &Matrix) -> Result<Matrix> {
        Ok(a - self.proj_perp(a)?)
    }
}

pub fn proj_perp(x_ref: &Matrix, a: &Matrix) -> Result<Matrix> {
    SpanProjector::new(x_ref)?.proj_perp(a)
}

pub fn proj_onto(x_ref: &Matrix, a: &Matrix) -> Result<Matrix> {
    SpanProjector::new(x_ref)?.proj_onto(a)
}
