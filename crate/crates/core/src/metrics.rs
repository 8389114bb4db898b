//! Prediction risks, divergences and the upper/lower bound expressions they
//! are compared against.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::expfam::{ExponentialFamily, ParameterBox};
use crate::matops::{nuclear_norm, numerical_rank, within_box, Matrix};
use crate::sampling::{ObservationSet, SamplingScheme};

fn same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.shape(),
            got: b.shape(),
        });
    }
    Ok(())
}

/// `‖X̂ − X̄‖²_{σ,2} / (m1 m2)`.
pub fn frobenius_risk(x_hat: &Matrix, x_bar: &Matrix) -> Result<f64> {
    same_shape(x_hat, x_bar)?;
    Ok((x_hat - x_bar).norm_squared() / x_bar.len() as f64)
}

/// `(1/n) Σᵢ d_G(X¹_ωᵢ, X²_ωᵢ)`.
pub fn bregman_empirical(f: &ExponentialFamily, obs: &ObservationSet, x1: &Matrix, x2: &Matrix) -> Result<f64> {
    same_shape(x1, x2)?;
    if x1.shape() != obs.dims() {
        return Err(Error::DimensionMismatch {
            expected: obs.dims(),
            got: x1.shape(),
        });
    }
    let mut total = 0.0;
    for &(k, l) in obs.omegas() {
        total += f.bregman(x1[(k, l)], x2[(k, l)])?;
    }
    Ok(total / obs.len() as f64)
}

/// `Σ π_{k,l} d_G(X¹_{k,l}, X²_{k,l})`, the KL divergence between the
/// observation laws.
pub fn bregman_integrated(f: &ExponentialFamily, s: &SamplingScheme, x1: &Matrix, x2: &Matrix) -> Result<f64> {
    same_shape(x1, x2)?;
    if x1.shape() != s.dims() {
        return Err(Error::DimensionMismatch {
            expected: s.dims(),
            got: x1.shape(),
        });
    }
    let mut total = 0.0;
    for ((&p, &a), &b) in s.table().iter().zip(x1.iter()).zip(x2.iter()) {
        if p > 0.0 {
            total += p * f.bregman(a, b)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub frob_risk: f64,
    pub kl_integrated: f64,
    pub kl_empirical: f64,
    pub rank_bar: usize,
    pub bound_values: BTreeMap<String, f64>,
}

impl RiskReport {
    pub fn compute(
        f: &ExponentialFamily,
        s: &SamplingScheme,
        obs: &ObservationSet,
        x_hat: &Matrix,
        x_bar: &Matrix,
    ) -> Result<Self> {
        Ok(Self {
            frob_risk: frobenius_risk(x_hat, x_bar)?,
            kl_integrated: bregman_integrated(f, s, x_hat, x_bar)?,
            kl_empirical: bregman_empirical(f, obs, x_hat, x_bar)?,
            rank_bar: numerical_rank(x_bar)?,
            bound_values: BTreeMap::new(),
        })
    }
}

/// Named bound expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Likelihood estimator with `λ ≥ 2‖∇Lik(X̄)‖`:
    /// `C μ² max(m1 m2 r (λ²/σ̲⁴ + (E‖Σ_R‖)²), (γ²/μ)√(log d / n))`.
    ThBase,
    /// Likelihood estimator at the prescribed λ:
    /// `C̄ μ² max((c_γ σ̄²/σ̲⁴ + 1) ν r M log d / n, (γ²/μ)√(log d / n))`.
    ThBis,
    /// Known-sampling estimator:
    /// `μ² min(((1+√2)²/2)(m1 m2/σ̲⁴) λ² r, (4/(μ σ̲²)) λ ‖X̄‖_{σ,1})`.
    OracleUp,
    /// Known-sampling estimator at the prescribed λ:
    /// `C̃ ((c_γ σ̄ + L_γ)/σ̲²)² r M log d / n`.
    OracleProbUp,
    /// Minimax lower bound `c min(γ², M r / (n σ̄²))`.
    ThLow,
}

impl Bound {
    pub const ALL: [Bound; 5] = [Bound::ThBase, Bound::ThBis, Bound::OracleUp, Bound::OracleProbUp, Bound::ThLow];

    pub fn name(&self) -> &'static str {
        match self {
            Bound::ThBase => "th_base",
            Bound::ThBis => "th_bis",
            Bound::OracleUp => "oracle_up",
            Bound::OracleProbUp => "oracle_prob_up",
            Bound::ThLow => "th_low",
        }
    }
}

/// Inputs for [`bound_value`]. Quantities a bound needs must be set; the
/// abstract numerical constants default to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub m1: usize,
    pub m2: usize,
    pub n: usize,
    pub rank: usize,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub sigma_lo_sq: Option<f64>,
    pub sigma_hi_sq: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub l_gamma: Option<f64>,
    pub c_gamma: f64,
    pub sigma_r_mean: Option<f64>,
    pub nuclear_norm_bar: Option<f64>,
    /// `C` of the base likelihood bound.
    pub c_base: f64,
    /// `C̄`.
    pub c_bis: f64,
    /// `C̃`.
    pub c_tilde: f64,
    /// `c` of the lower bound.
    pub c_low: f64,
}

impl BoundInputs {
    pub fn new(m1: usize, m2: usize, n: usize, rank: usize) -> Self {
        Self {
            m1,
            m2,
            n,
            rank,
            mu: None,
            nu: None,
            sigma_lo_sq: None,
            sigma_hi_sq: None,
            lambda: None,
            gamma: None,
            l_gamma: None,
            c_gamma: 1.0,
            sigma_r_mean: None,
            nuclear_norm_bar: None,
            c_base: 1.0,
            c_bis: 1.0,
            c_tilde: 1.0,
            c_low: 1.0,
        }
    }

    fn d(&self) -> f64 {
        (self.m1 + self.m2) as f64
    }

    fn big_m(&self) -> f64 {
        self.m1.max(self.m2) as f64
    }
}

fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
    v.ok_or(Error::MissingConstant(name))
}

/// A bound's value and the branches of its max/min.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundEvaluation {
    pub value: f64,
    pub branches: Vec<f64>,
}

pub fn bound_value(which: Bound, inp: &BoundInputs) -> Result<BoundEvaluation> {
    if inp.n == 0 || inp.m1 == 0 || inp.m2 == 0 {
        return Err(invalid("bound evaluation needs positive n, m1, m2"));
    }
    let n = inp.n as f64;
    let r = inp.rank as f64;
    let (m1, m2) = (inp.m1 as f64, inp.m2 as f64);
    let ln_d = inp.d().ln();
    let eval = |value: f64, branches: Vec<f64>| BoundEvaluation { value, branches };
    Ok(match which {
        Bound::ThBase => {
            let mu = need(inp.mu, "mu")?;
            let s4 = need(inp.sigma_lo_sq, "sigma_lo_sq")?.powi(2);
            let lambda = need(inp.lambda, "lambda")?;
            let sr = need(inp.sigma_r_mean, "sigma_r_mean")?;
            let gamma = need(inp.gamma, "gamma")?;
            let a = m1 * m2 * r * (lambda * lambda / s4 + sr * sr);
            let b = gamma * gamma / mu * (ln_d / n).sqrt();
            eval(inp.c_base * mu * mu * a.max(b), vec![a, b])
        }
        Bound::ThBis => {
            let mu = need(inp.mu, "mu")?;
            let nu = need(inp.nu, "nu")?;
            let lo = need(inp.sigma_lo_sq, "sigma_lo_sq")?;
            let hi = need(inp.sigma_hi_sq, "sigma_hi_sq")?;
            let gamma = need(inp.gamma, "gamma")?;
            let a = (inp.c_gamma * hi / (lo * lo) + 1.0) * nu * r * inp.big_m() * ln_d / n;
            let b = gamma * gamma / mu * (ln_d / n).sqrt();
            eval(inp.c_bis * mu * mu * a.max(b), vec![a, b])
        }
        Bound::OracleUp => {
            let mu = need(inp.mu, "mu")?;
            let lo = need(inp.sigma_lo_sq, "sigma_lo_sq")?;
            let lambda = need(inp.lambda, "lambda")?;
            let nuc = need(inp.nuclear_norm_bar, "nuclear_norm_bar")?;
            let c = (1.0 + 2f64.sqrt()).powi(2) / 2.0;
            let a = mu * mu * c * m1 * m2 / (lo * lo) * lambda * lambda * r;
            let b = mu * mu * 4.0 / (mu * lo) * lambda * nuc;
            eval(a.min(b), vec![a, b])
        }
        Bound::OracleProbUp => {
            let lo = need(inp.sigma_lo_sq, "sigma_lo_sq")?;
            let hi = need(inp.sigma_hi_sq, "sigma_hi_sq")?;
            let l_gamma = need(inp.l_gamma, "l_gamma")?;
            let k = (inp.c_gamma * hi.sqrt() + l_gamma) / lo;
            let v = inp.c_tilde * k * k * r * inp.big_m() * ln_d / n;
            eval(v, vec![v])
        }
        Bound::ThLow => {
            let gamma = need(inp.gamma, "gamma")?;
            let hi = need(inp.sigma_hi_sq, "sigma_hi_sq")?;
            let a = gamma * gamma;
            let b = inp.big_m() * r / (n * hi);
            eval(inp.c_low * a.min(b), vec![a, b])
        }
    })
}

/// Inputs for [`oracle_inequality_check`].
#[derive(Debug, Clone)]
pub struct OracleCheckInput<'a> {
    pub family: &'a ExponentialFamily,
    pub scheme: &'a SamplingScheme,
    pub bx: &'a ParameterBox,
    pub x_check: &'a Matrix,
    pub x_bar: &'a Matrix,
    pub lambda: f64,
    /// `‖∇Lik^Π(X̄)‖_{σ,∞}`; the inequalities need `λ` at least this.
    pub lambda_required: f64,
    pub mu: f64,
    pub sigma_lo_sq: f64,
    pub candidates: &'a [(String, Matrix)],
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateMargin {
    pub name: String,
    /// Candidates outside the box are outside the infimum and only reported.
    pub feasible: bool,
    pub rank: usize,
    /// `D^Π(X, X̄) + 2λ‖X‖_{σ,1}`.
    pub rhs_nuclear: f64,
    /// `D^Π(X, X̄) + ((1+√2)/2)² (μ/σ̲²) m1 m2 λ² rank(X)`.
    pub rhs_rank: f64,
    pub margin_nuclear: f64,
    pub margin_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub applicable: bool,
    pub lhs: f64,
    pub candidates: Vec<CandidateMargin>,
    pub best_rhs_nuclear: f64,
    pub best_rhs_rank: f64,
    pub slack: f64,
}

impl OracleReport {
    /// Smallest margin over feasible candidates and both inequalities.
    pub fn worst_margin(&self) -> f64 {
        self.candidates
            .iter()
            .filter(|c| c.feasible)
            .flat_map(|c| [c.margin_nuclear, c.margin_rank])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self) -> bool {
        self.applicable && self.worst_margin() >= -self.slack
    }
}

/// Evaluates both sides of the two oracle inequalities satisfied by the
/// known-sampling estimator, for each candidate matrix.
pub fn oracle_inequality_check(inp: &OracleCheckInput<'_>) -> Result<OracleReport> {
    let lhs = bregman_integrated(inp.family, inp.scheme, inp.x_check, inp.x_bar)?;
    let (m1, m2) = inp.x_bar.shape();
    let rank_coef = ((1.0 + 2f64.sqrt()) / 2.0).powi(2) * inp.mu / inp.sigma_lo_sq
        * (m1 * m2) as f64
        * inp.lambda
        * inp.lambda;
    let mut rows = Vec::with_capacity(inp.candidates.len());
    for (name, x) in inp.candidates {
        let feasible = within_box(x, inp.bx);
        let div = bregman_integrated(inp.family, inp.scheme, x, inp.x_bar)?;
        let rank = numerical_rank(x)?;
        let rhs_nuclear = div + 2.0 * inp.lambda * nuclear_norm(x)?;
        let rhs_rank = div + rank_coef * rank as f64;
        rows.push(CandidateMargin {
            name: name.clone(),
            feasible,
            rank,
            rhs_nuclear,
            rhs_rank,
            margin_nuclear: rhs_nuclear - lhs,
            margin_rank: rhs_rank - lhs,
        });
    }
    let best = |f: fn(&CandidateMargin) -> f64| {
        rows.iter()
            .filter(|c| c.feasible)
            .map(f)
            .fold(f64::INFINITY, f64::min)
    };
    Ok(OracleReport {
        applicable: inp.lambda >= inp.lambda_required,
        lhs,
        best_rhs_nuclear: best(|c| c.rhs_nuclear),
        best_rhs_rank: best(|c| c.rhs_rank),
        candidates: rows,
        slack: inp.slack,
    })
}
