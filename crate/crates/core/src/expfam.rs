//! Natural exponential-family noise models.
//!
//! A family is described by its log-partition function `G`. For an
//! observation `Y` drawn at natural parameter `x` we have `E[Y] = G'(x)` and
//! `Var[Y] = G''(x)`. The base measure `h` never enters an objective other
//! than as an additive constant, so it is not represented here.
//!
//! | family      | `G(x)`           | domain    |
//! |-------------|------------------|-----------|
//! | gaussian    | `σ² x² / 2`      | ℝ         |
//! | binomial    | `N log(1 + eˣ)`  | ℝ         |
//! | poisson     | `eˣ`             | ℝ         |
//! | exponential | `−log(−x)`       | `(−∞, 0)` |

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};

/// A natural exponential family with its hyperparameters.
///
/// Serialized as `{"family": "gaussian", "sigma": 1.0}`,
/// `{"family": "binomial", "trials": 5}`, `{"family": "poisson"}` or
/// `{"family": "exponential"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ExponentialFamily {
    Gaussian { sigma: f64 },
    Binomial { trials: u32 },
    Poisson,
    Exponential,
}

impl ExponentialFamily {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let f = Self::Gaussian { sigma };
        f.validate()?;
        Ok(f)
    }

    pub fn binomial(trials: u32) -> Result<Self> {
        let f = Self::Binomial { trials };
        f.validate()?;
        Ok(f)
    }

    /// Checks hyperparameters; needed after deserialization.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                Err(invalid(format!("gaussian sigma must be positive, got {sigma}")))
            }
            Self::Binomial { trials: 0 } => Err(invalid("binomial trial count must be >= 1")),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Binomial { .. } => "binomial",
            Self::Poisson => "poisson",
            Self::Exponential => "exponential",
        }
    }

    /// Open interval of admissible natural parameters.
    pub fn natural_domain(&self) -> (f64, f64) {
        match self {
            Self::Exponential => (f64::NEG_INFINITY, 0.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        let (lo, hi) = self.natural_domain();
        x.is_finite() && x > lo && x < hi
    }

    pub fn check_domain(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                family: self.name(),
                x,
            })
        }
    }

    pub fn log_partition(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.g(x))
    }

    pub fn mean(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.g1(x))
    }

    pub fn variance(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.g2(x))
    }

    /// Bregman divergence `G(x) − G(x_ref) − G'(x_ref)(x − x_ref)`.
    ///
    /// Equals `KL(P_{x_ref} ‖ P_x)` between the two family members.
    pub fn bregman(&self, x: f64, x_ref: f64) -> Result<f64> {
        self.check_domain(x)?;
        self.check_domain(x_ref)?;
        Ok(self.bregman_unchecked(x, x_ref))
    }

    /// Draws one observation with mean `G'(x)` and variance `G''(x)`.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        self.check_domain(x)?;
        let y = match *self {
            Self::Gaussian { sigma } => {
                let w = sigma * sigma;
                Normal::new(w * x, sigma)
                    .map_err(|e| invalid(e.to_string()))?
                    .sample(rng)
            }
            Self::Binomial { trials } => Binomial::new(u64::from(trials), sigmoid(x))
                .map_err(|e| invalid(e.to_string()))?
                .sample(rng) as f64,
            Self::Poisson => {
                let rate = x.exp();
                Poisson::new(rate)
                    .map_err(|e| invalid(format!("poisson rate {rate}: {e}")))?
                    .sample(rng)
            }
            Self::Exponential => Exp::new(-x)
                .map_err(|e| invalid(e.to_string()))?
                .sample(rng),
        };
        Ok(y)
    }

    // Unchecked evaluations. Callers guarantee `in_domain(x)`.

    pub(crate) fn g(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { sigma } => 0.5 * sigma * sigma * x * x,
            Self::Binomial { trials } => f64::from(trials) * softplus(x),
            Self::Poisson => x.exp(),
            Self::Exponential => -(-x).ln(),
        }
    }

    pub(crate) fn g1(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma * sigma * x,
            Self::Binomial { trials } => f64::from(trials) * sigmoid(x),
            Self::Poisson => x.exp(),
            Self::Exponential => -1.0 / x,
        }
    }

    pub(crate) fn g2(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma * sigma,
            Self::Binomial { trials } => {
                let s = sigmoid(x);
                f64::from(trials) * s * (1.0 - s)
            }
            Self::Poisson => x.exp(),
            Self::Exponential => 1.0 / (x * x),
        }
    }

    pub(crate) fn bregman_unchecked(&self, x: f64, x_ref: f64) -> f64 {
        match *self {
            // Exact form avoids cancellation in the quadratic case.
            Self::Gaussian { sigma } => 0.5 * sigma * sigma * (x - x_ref) * (x - x_ref),
            _ => self.g(x) - self.g(x_ref) - self.g1(x_ref) * (x - x_ref),
        }
    }

    /// `log E[exp(|Y − G'(x)| / δ)]`, or `+∞` once it clearly exceeds 1.
    fn log_orlicz(&self, x: f64, delta: f64) -> f64 {
        const CUTOFF: f64 = 10.0;
        let t = 1.0 / delta;
        match *self {
            Self::Gaussian { sigma } => {
                // |Z| for Z ~ N(0, s²): E exp(t|Z|) = 2 exp(s²t²/2) Φ(st).
                let a = sigma * t;
                std::f64::consts::LN_2 + 0.5 * a * a + (0.5 * erfc(-a / std::f64::consts::SQRT_2)).ln()
            }
            Self::Binomial { trials } => {
                let n = trials as usize;
                let p = sigmoid(x);
                let mean = f64::from(trials) * p;
                let (lp, lq) = (log_sigmoid(x), log_sigmoid(-x));
                let mut ln_choose = 0.0;
                let mut acc = LogSumExp::default();
                for k in 0..=n {
                    if k > 0 {
                        ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
                    }
                    let kf = k as f64;
                    acc.push(ln_choose + kf * lp + (n - k) as f64 * lq + (kf - mean).abs() * t);
                    if acc.value() > CUTOFF {
                        return f64::INFINITY;
                    }
                }
                acc.value()
            }
            Self::Poisson => {
                let rate = x.exp();
                let ln_rate = x;
                let mut acc = LogSumExp::default();
                let mut ln_fact = 0.0;
                let mut k = 0usize;
                loop {
                    let kf = k as f64;
                    if k > 0 {
                        ln_fact += kf.ln();
                    }
                    let term = -rate + kf * ln_rate - ln_fact + (kf - rate).abs() * t;
                    acc.push(term);
                    if acc.value() > CUTOFF {
                        return f64::INFINITY;
                    }
                    // Past the mode the ratio of successive terms is
                    // rate·e^t/(k+1); once below 1/2 the tail is bounded by
                    // the current term.
                    let ratio_ln = ln_rate + t - (kf + 1.0).ln();
                    if kf > rate && ratio_ln < -std::f64::consts::LN_2 && term < acc.value() - 40.0 {
                        break;
                    }
                    k += 1;
                }
                acc.value()
            }
            Self::Exponential => {
                // Y ~ Exp(θ), θ = −x, mean 1/θ; with u = t/θ the expectation
                // is e^u (1 − e^{−1−u})/(1+u) + e^{−1}/(1−u) for u < 1.
                let u = t / (-x);
                if u >= 1.0 {
                    return f64::INFINITY;
                }
                let v = u.exp() * (1.0 - (-1.0 - u).exp()) / (1.0 + u) + (-1.0f64).exp() / (1.0 - u);
                v.ln()
            }
        }
    }

    /// `E[exp(|Y − G'(x)| / δ)]` evaluated in closed form or as an exact
    /// series for the discrete families.
    pub fn orlicz_moment(&self, x: f64, delta: f64) -> Result<f64> {
        self.check_domain(x)?;
        if !(delta > 0.0) {
            return Err(invalid("delta must be positive"));
        }
        Ok(self.log_orlicz(x, delta).exp())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Default)]
struct LogSumExp {
    max: Option<f64>,
    sum: f64,
}

impl LogSumExp {
    fn push(&mut self, v: f64) {
        match self.max {
            None => {
                self.max = Some(v);
                self.sum = 1.0;
            }
            Some(m) if v > m => {
                self.sum = self.sum * (m - v).exp() + 1.0;
                self.max = Some(v);
            }
            Some(m) => self.sum += (v - m).exp(),
        }
    }

    fn value(&self) -> f64 {
        self.max.map_or(f64::NEG_INFINITY, |m| m + self.sum.ln())
    }
}

/// Closed interval `[lo, hi]` constraining every entry of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lo: f64,
    pub hi: f64,
}

impl ParameterBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || lo.is_nan() || hi.is_nan() {
            return Err(invalid(format!("box requires lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// The `‖X‖_∞ ≤ γ` box.
    pub fn symmetric(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        Self::new(-gamma, gamma)
    }

    /// Largest absolute entry admitted by the box.
    pub fn radius(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Checks the box is finite and sits strictly inside the family domain.
    pub fn validate_for(&self, family: &ExponentialFamily) -> Result<()> {
        Self::new(self.lo, self.hi)?;
        if !family.in_domain(self.lo) || !family.in_domain(self.hi) {
            return Err(Error::NonFinite("interval constants: box leaves the natural domain"));
        }
        Ok(())
    }
}

/// Curvature, sub-exponential and mean bounds of a family over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalConstants {
    /// `min G''` over the box.
    pub sigma_lo_sq: f64,
    /// `max G''` over the box.
    pub sigma_hi_sq: f64,
    /// Sub-exponential (Orlicz ψ₁) scale of the centred noise.
    pub delta_gamma: f64,
    /// `sup |G'|` over the box.
    pub l_gamma: f64,
}

/// Numerical settings for the sub-exponential constant search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsConfig {
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub bisection_iters: usize,
    pub grid_points: usize,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            delta_lo: 1e-6,
            delta_hi: 1e6,
            bisection_iters: 60,
            grid_points: 101,
        }
    }
}

/// `(min G'', max G'')` over the box.
pub fn curvature_bounds(family: &ExponentialFamily, bx: &ParameterBox) -> Result<(f64, f64)> {
    bx.validate_for(family)?;
    let (lo, hi) = (bx.lo, bx.hi);
    // G'' is constant, monotone or unimodal-at-zero for every family here.
    let bounds = match family {
        ExponentialFamily::Binomial { .. } => {
            let peak = family.g2(0.0f64.clamp(lo, hi));
            (family.g2(lo).min(family.g2(hi)), peak)
        }
        _ => {
            let (a, b) = (family.g2(lo), family.g2(hi));
            (a.min(b), a.max(b))
        }
    };
    Ok(bounds)
}

pub fn interval_constants(
    family: &ExponentialFamily,
    bx: &ParameterBox,
    cfg: &ConstantsConfig,
) -> Result<IntervalConstants> {
    family.validate()?;
    bx.validate_for(family)?;
    let (lo, hi) = (bx.lo, bx.hi);

    let (sigma_lo_sq, sigma_hi_sq) = curvature_bounds(family, bx)?;
    // G' is monotone, so |G'| peaks at an endpoint.
    let l_gamma = family.g1(lo).abs().max(family.g1(hi).abs());

    let grid: Vec<f64> = if cfg.grid_points <= 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..cfg.grid_points)
            .map(|i| lo + (hi - lo) * i as f64 / (cfg.grid_points - 1) as f64)
            .collect()
    };
    let feasible = |delta: f64| grid.iter().all(|&x| family.log_orlicz(x, delta) <= 1.0);

    let (mut a, mut b) = (cfg.delta_lo, cfg.delta_hi);
    if !feasible(b) {
        return Err(Error::NonFinite("sub-exponential constant over the box"));
    }
    let delta_gamma = if feasible(a) {
        a
    } else {
        for _ in 0..cfg.bisection_iters {
            let mid = 0.5 * (a + b);
            if feasible(mid) {
                b = mid;
            } else {
                a = mid;
            }
        }
        b
    };

    let consts = IntervalConstants {
        sigma_lo_sq,
        sigma_hi_sq,
        delta_gamma,
        l_gamma,
    };
    for v in [sigma_lo_sq, sigma_hi_sq, delta_gamma, l_gamma] {
        if !v.is_finite() {
            return Err(Error::NonFinite("interval constant"));
        }
    }
    Ok(consts)
}
