//! Nuclear-norm-penalized estimators and their solver.
//!
//! Two data-fitting terms are supported:
//!
//! * the normalized negative log-likelihood
//!   `(1/n) Σᵢ (G(X_ωᵢ) − X_ωᵢ Yᵢ)` (base measure dropped), and
//! * the known-sampling variant `Σ π_{k,l} G(X_{k,l}) − (1/n) Σᵢ X_ωᵢ Yᵢ`.
//!
//! Both are minimized together with `λ‖X‖_{σ,1}` over a box by accelerated
//! proximal gradient with adaptive restart.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expfam::{curvature_bounds, ExponentialFamily, IntervalConstants, ParameterBox};
use crate::matops::{box_clip, combined_prox, nuclear_norm, operator_norm, Matrix, ProxConfig};
use crate::sampling::{ObservationSet, SamplingScheme};

/// Which data-fitting term the estimator minimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Likelihood,
    KnownSampling(SamplingScheme),
}

#[derive(Debug, Clone)]
pub struct CompletionProblem {
    obs: ObservationSet,
    family: ExponentialFamily,
    bx: ParameterBox,
    lambda: f64,
    objective: Objective,
    counts: Matrix,
    sums: Matrix,
}

impl CompletionProblem {
    pub fn new(
        obs: ObservationSet,
        family: ExponentialFamily,
        bx: ParameterBox,
        lambda: f64,
        objective: Objective,
    ) -> Result<Self> {
        family.validate()?;
        bx.validate_for(&family)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if let Objective::KnownSampling(s) = &objective {
            if s.dims() != obs.dims() {
                return Err(Error::DimensionMismatch {
                    expected: obs.dims(),
                    got: s.dims(),
                });
            }
        }
        let stats = obs.entry_stats();
        Ok(Self {
            obs,
            family,
            bx,
            lambda,
            objective,
            counts: stats.counts,
            sums: stats.sums,
        })
    }

    pub fn likelihood(obs: ObservationSet, family: ExponentialFamily, bx: ParameterBox, lambda: f64) -> Result<Self> {
        Self::new(obs, family, bx, lambda, Objective::Likelihood)
    }

    pub fn known_sampling(
        obs: ObservationSet,
        family: ExponentialFamily,
        bx: ParameterBox,
        lambda: f64,
        scheme: SamplingScheme,
    ) -> Result<Self> {
        Self::new(obs, family, bx, lambda, Objective::KnownSampling(scheme))
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn obs(&self) -> &ObservationSet {
        &self.obs
    }

    pub fn family(&self) -> &ExponentialFamily {
        &self.family
    }

    pub fn parameter_box(&self) -> &ParameterBox {
        &self.bx
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn objective_kind(&self) -> &Objective {
        &self.objective
    }

    pub fn dims(&self) -> (usize, usize) {
        self.obs.dims()
    }

    fn n(&self) -> f64 {
        self.obs.len() as f64
    }

    fn check_shape(&self, x: &Matrix) -> Result<()> {
        if x.shape() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// Weight of `G(X_{k,l})` in the data term.
    fn curvature_weights(&self) -> Matrix {
        match &self.objective {
            Objective::Likelihood => &self.counts / self.n(),
            Objective::KnownSampling(s) => s.table().clone(),
        }
    }

    fn check_domain(&self, x: &Matrix, weights: &Matrix) -> Result<()> {
        for ((&v, &w), &c) in x.iter().zip(weights.iter()).zip(self.counts.iter()) {
            if w > 0.0 || c > 0.0 {
                self.family.check_domain(v)?;
            }
        }
        Ok(())
    }

    /// Data-fitting term (negative log-likelihood up to the base-measure
    /// constant, or its known-sampling counterpart).
    pub fn neg_loglik(&self, x: &Matrix) -> Result<f64> {
        self.check_shape(x)?;
        let w = self.curvature_weights();
        self.check_domain(x, &w)?;
        let n = self.n();
        let mut total = 0.0;
        for ((&v, &wk), &s) in x.iter().zip(w.iter()).zip(self.sums.iter()) {
            if wk > 0.0 {
                total += wk * self.family.g(v);
            }
            total -= v * s / n;
        }
        Ok(total)
    }

    pub fn gradient(&self, x: &Matrix) -> Result<Matrix> {
        self.check_shape(x)?;
        let w = self.curvature_weights();
        self.check_domain(x, &w)?;
        let n = self.n();
        let (m1, m2) = self.dims();
        Ok(Matrix::from_fn(m1, m2, |k, l| {
            let wk = w[(k, l)];
            let fit = if wk > 0.0 { wk * self.family.g1(x[(k, l)]) } else { 0.0 };
            fit - self.sums[(k, l)] / n
        }))
    }

    /// Penalized objective `data term + λ‖X‖_{σ,1}`.
    pub fn objective(&self, x: &Matrix) -> Result<f64> {
        Ok(self.neg_loglik(x)? + self.lambda * nuclear_norm(x)?)
    }

    /// Lipschitz constant of the gradient over the box.
    pub fn smoothness(&self) -> Result<f64> {
        let (_, hi) = curvature_bounds(&self.family, &self.bx)?;
        let peak = match &self.objective {
            Objective::Likelihood => self.counts.max() / self.n(),
            Objective::KnownSampling(s) => s.max_prob(),
        };
        Ok(hi * peak)
    }

    /// Smallest λ for which the upper-bound theorems apply, computed from
    /// the true parameter: `2‖∇Lik(X̄)‖` for the likelihood estimator,
    /// `‖∇Lik^Π(X̄)‖` for the known-sampling one.
    pub fn oracle_lambda(&self, x_bar: &Matrix) -> Result<f64> {
        let g = operator_norm(&self.gradient(x_bar)?)?;
        Ok(match self.objective {
            Objective::Likelihood => 2.0 * g,
            Objective::KnownSampling(_) => g,
        })
    }
}

/// λ levels prescribed by the high-probability upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremLambda {
    /// `2 c_γ σ̄_γ √(2ν log d / (m n))`.
    ThBis,
    /// `(c_γ σ̄_γ + c* L_γ) √(2 log d / (m n))`.
    OracleProbUp,
}

pub fn theorem_lambda(
    which: TheoremLambda,
    consts: &IntervalConstants,
    scheme: &SamplingScheme,
    n: usize,
    c_gamma: f64,
    c_star: f64,
) -> Result<f64> {
    if n == 0 {
        return Err(invalid("sample size must be >= 1"));
    }
    let (m1, m2) = scheme.dims();
    let d = (m1 + m2) as f64;
    let m = m1.min(m2) as f64;
    let n = n as f64;
    let sigma_hi = consts.sigma_hi_sq.sqrt();
    Ok(match which {
        TheoremLambda::ThBis => {
            2.0 * c_gamma * sigma_hi * (2.0 * scheme.nu_constant() * d.ln() / (m * n)).sqrt()
        }
        TheoremLambda::OracleProbUp => {
            (c_gamma * sigma_hi + c_star * consts.l_gamma) * (2.0 * d.ln() / (m * n)).sqrt()
        }
    })
}

/// Minimum sample size under which the theorem-prescribed λ dominates the
/// score with high probability. The solver does not enforce it.
pub fn theorem_sample_threshold(
    which: TheoremLambda,
    consts: &IntervalConstants,
    scheme: &SamplingScheme,
) -> f64 {
    let (m1, m2) = scheme.dims();
    let d = (m1 + m2) as f64;
    let m = m1.min(m2) as f64;
    let delta = consts.delta_gamma;
    let log_term = (delta * (m / consts.sigma_lo_sq).sqrt()).ln();
    let tail = delta * delta / consts.sigma_hi_sq * log_term * log_term;
    match which {
        TheoremLambda::ThBis => 2.0 * d.ln() * m / scheme.nu_constant() * tail.max(1.0 / 9.0),
        TheoremLambda::OracleProbUp => 2.0 * d.ln() * m * tail.max(8.0 / 9.0),
    }
}

fn default_tol() -> f64 {
    1e-9
}
fn default_max_iters() -> usize {
    5000
}
fn default_dykstra_iters() -> usize {
    200
}
fn default_dykstra_tol() -> f64 {
    1e-10
}
fn default_c_gamma() -> f64 {
    1.0
}
fn default_c_star() -> f64 {
    1.0 + 3f64.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_dykstra_iters")]
    pub dykstra_iters: usize,
    #[serde(default = "default_dykstra_tol")]
    pub dykstra_tol: f64,
    #[serde(default = "default_c_gamma")]
    pub c_gamma: f64,
    #[serde(default = "default_c_star")]
    pub c_star: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iters: default_max_iters(),
            dykstra_iters: default_dykstra_iters(),
            dykstra_tol: default_dykstra_tol(),
            c_gamma: default_c_gamma(),
            c_star: default_c_star(),
        }
    }
}

impl SolverConfig {
    fn prox(&self) -> ProxConfig {
        ProxConfig {
            max_iters: self.dykstra_iters,
            tol: self.dykstra_tol,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub x_hat: Matrix,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x̂ − prox(x̂ − η∇f(x̂))‖_{σ,2} / η` at the final step size.
    pub prox_residual: f64,
    pub lambda_used: f64,
    pub step_size: f64,
    /// Some combined-prox evaluation hit its iteration cap.
    pub prox_warning: bool,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts with the initial objective")
    }
}

const MAX_HALVINGS: usize = 60;
/// Convergence also requires the prox-gradient residual below this
/// multiple of the objective tolerance.
const RESIDUAL_FACTOR: f64 = 10.0;

struct Step {
    x: Matrix,
    total: f64,
}

/// Minimizes the penalized objective over the box.
pub fn fit(p: &CompletionProblem, cfg: &SolverConfig, init: Option<&Matrix>) -> Result<FitResult> {
    let (m1, m2) = p.dims();
    let bx = *p.parameter_box();
    let lambda = p.lambda();
    let prox_cfg = cfg.prox();

    let start = match init {
        Some(x0) => {
            p.check_shape(x0)?;
            box_clip(x0, &bx)
        }
        None => box_clip(&Matrix::zeros(m1, m2), &bx),
    };
    let lip = p.smoothness()?;
    if !(lip > 0.0 && lip.is_finite()) {
        return Err(Error::NonFinite("smoothness constant"));
    }
    let mut eta = 1.0 / lip;
    let mut prox_warning = false;

    let mut x = start;
    let mut fx = p.objective(&x)?;
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let momentum = t > 1.0;
        // Extrapolated points may leave the family domain; fall back to the
        // current iterate.
        let (fy, gy) = match (p.neg_loglik(&y), p.gradient(&y)) {
            (Ok(f), Ok(g)) if f.is_finite() => (f, g),
            _ => {
                y = x.clone();
                t = 1.0;
                (p.neg_loglik(&y)?, p.gradient(&y)?)
            }
        };

        let mut step = None;
        for _ in 0..MAX_HALVINGS {
            let out = combined_prox(&(&y - &gy * eta), eta * lambda, &bx, &prox_cfg)?;
            prox_warning |= !out.converged;
            let cand = out.matrix;
            let data = match p.neg_loglik(&cand) {
                Ok(v) if v.is_finite() => v,
                _ => {
                    eta *= 0.5;
                    continue;
                }
            };
            let d = &cand - &y;
            let model = fy + gy.dot(&d) + d.norm_squared() / (2.0 * eta);
            if data <= model + 1e-14 * fy.abs().max(1.0) {
                let nuc = match out.nuclear_norm {
                    Some(v) => v,
                    None => nuclear_norm(&cand)?,
                };
                step = Some(Step {
                    total: data + lambda * nuc,
                    x: cand,
                });
                break;
            }
            eta *= 0.5;
        }
        let Some(step) = step else {
            break;
        };

        if step.total > fx {
            if momentum {
                y = x.clone();
                t = 1.0;
                continue;
            }
            // A plain proximal step from the current iterate made no
            // progress: stationary up to the accuracy of the prox.
            converged = true;
            break;
        }

        let change = (fx - step.total).abs() / fx.abs().max(f64::MIN_POSITIVE);
        // Momentum can produce near-flat steps far from the optimum, so the
        // objective test is paired with the gradient-mapping norm at `y`.
        let mapping = (&step.x - &y).norm() / eta;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &step.x + (&step.x - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = step.x;
        fx = step.total;
        trace.push(fx);
        if change < cfg.tol && mapping <= RESIDUAL_FACTOR * cfg.tol {
            converged = true;
            break;
        }
    }

    let prox_residual = prox_residual(p, &x, eta, &prox_cfg)?;
    Ok(FitResult {
        x_hat: x,
        objective_trace: trace,
        iterations,
        converged,
        prox_residual,
        lambda_used: lambda,
        step_size: eta,
        prox_warning,
    })
}

/// Fixed-point residual of the proximal-gradient map at `x`.
pub fn prox_residual(p: &CompletionProblem, x: &Matrix, eta: f64, prox_cfg: &ProxConfig) -> Result<f64> {
    let g = p.gradient(x)?;
    let next = combined_prox(&(x - &g * eta), eta * p.lambda(), p.parameter_box(), prox_cfg)?;
    Ok((x - next.matrix).norm() / eta)
}
