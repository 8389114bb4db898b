//! Synthetic experiments: ground-truth generation, simulation, and the sweeps
//! comparing empirical risks with the predicted rates.
//!
//! Every replicate draws from its own ChaCha8 stream derived from the
//! configured seed, so results do not depend on scheduling and the parallel
//! and sequential paths produce identical output.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimator::{fit, theorem_lambda, CompletionProblem, FitResult, SolverConfig, TheoremLambda};
use crate::expfam::{interval_constants, ConstantsConfig, ExponentialFamily, IntervalConstants, ParameterBox};
use crate::lowerbound::{build_packing, verify_conditions, PackingReport, PackingSet, PackingSpec};
use crate::matops::{nuclear_norm, operator_norm, truncate_rank, Matrix};
use crate::metrics::{
    bound_value, frobenius_risk, oracle_inequality_check, Bound, BoundInputs, OracleCheckInput, OracleReport,
    RiskReport,
};
use crate::sampling::{rademacher_norm_samples, ObservationSet, SamplingScheme};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingSpec {
    #[default]
    Uniform,
    /// `π_{k,l} ∝ row_weights[k] · col_weights[l]`.
    Product {
        row_weights: Vec<f64>,
        col_weights: Vec<f64>,
    },
    /// Unnormalized weights, one inner vector per row.
    Table { weights: Vec<Vec<f64>> },
}

impl SamplingSpec {
    pub fn build(&self, m1: usize, m2: usize) -> Result<SamplingScheme> {
        let s = match self {
            SamplingSpec::Uniform => SamplingScheme::uniform(m1, m2)?,
            SamplingSpec::Product { row_weights, col_weights } => SamplingScheme::product(row_weights, col_weights)?,
            SamplingSpec::Table { weights } => {
                if weights.len() != m1 || weights.iter().any(|r| r.len() != m2) {
                    return Err(invalid(format!("sampling table must be {m1}x{m2}")));
                }
                let flat: Vec<f64> = weights.iter().flatten().copied().collect();
                SamplingScheme::from_weights(Matrix::from_row_slice(m1, m2, &flat))?
            }
        };
        if s.dims() != (m1, m2) {
            return Err(Error::DimensionMismatch {
                expected: (m1, m2),
                got: s.dims(),
            });
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Likelihood,
    KnownSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    TheoremThBis,
    TheoremOracle,
    /// Twice (likelihood) or once (known sampling) the score norm at the
    /// true matrix: simulation-only knowledge.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaMode {
    Rule(LambdaRule),
    Fixed(f64),
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Rule(LambdaRule::Oracle)
    }
}

/// Oracle λ is floored here so that noiseless runs keep a positive penalty.
pub const LAMBDA_FLOOR: f64 = 1e-12;

fn default_replicates() -> usize {
    1
}
fn default_alpha() -> f64 {
    0.1
}
fn default_packing_cap() -> usize {
    crate::lowerbound::DEFAULT_CARDINALITY_CAP
}
fn default_packing_attempts() -> usize {
    100_000
}
fn default_mc_reps() -> usize {
    200
}
fn default_bound_mc_reps() -> usize {
    50
}
fn default_c_gamma_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub noise: ExponentialFamily,
    #[serde(default)]
    pub sampling: SamplingSpec,
    pub m1: usize,
    pub m2: usize,
    pub rank: usize,
    pub gamma: f64,
    /// Defaults to `[−γ, γ]`, or `[−γ, −γ/5]` for the exponential family.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub parameter_box: Option<ParameterBox>,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub lambda: LambdaMode,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Observations equal `G'(X̄_ω)` exactly.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_packing_cap")]
    pub packing_cap: usize,
    #[serde(default = "default_packing_attempts")]
    pub packing_attempts: usize,
    /// Monte Carlo repetitions for the concentration check.
    #[serde(default = "default_mc_reps")]
    pub mc_reps: usize,
    /// Monte Carlo repetitions for `E‖Σ_R‖` inside the rate-sweep bounds.
    #[serde(default = "default_bound_mc_reps")]
    pub bound_mc_reps: usize,
    #[serde(default = "default_c_gamma_grid")]
    pub c_gamma_grid: Vec<f64>,
    /// Numerical constant `c` of the lower-bound value.
    #[serde(default = "default_one")]
    pub lower_c: f64,
    /// Scheduling only; excluded from the serialized form and the hash.
    #[serde(default = "default_true", skip_serializing)]
    pub parallel: bool,
    /// Inputs for `fit`; generated from the config when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.m1 == 0 || self.m2 == 0 {
            return Err(invalid("dimensions must be positive"));
        }
        if self.rank == 0 || self.rank > self.m1.min(self.m2) {
            return Err(invalid(format!("rank {} outside 1..={}", self.rank, self.m1.min(self.m2))));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma must be positive"));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n_grid must be nonempty, positive and strictly increasing"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be >= 1"));
        }
        if let LambdaMode::Fixed(v) = self.lambda {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid("fixed lambda must be positive"));
            }
        }
        if self.mc_reps == 0 || self.bound_mc_reps == 0 {
            return Err(invalid("Monte Carlo repetitions must be >= 1"));
        }
        self.resolved_box()?.validate_for(&self.noise)?;
        Ok(())
    }

    pub fn resolved_box(&self) -> Result<ParameterBox> {
        match self.parameter_box {
            Some(b) => ParameterBox::new(b.lo, b.hi),
            None => default_box(&self.noise, self.gamma),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
    }
}

pub fn default_box(family: &ExponentialFamily, gamma: f64) -> Result<ParameterBox> {
    match family {
        ExponentialFamily::Exponential => ParameterBox::new(-gamma, -gamma / 5.0),
        _ => ParameterBox::symmetric(gamma),
    }
}

/// A member of the class of rank-`r` matrices bounded by `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_bar: Matrix,
    pub r: usize,
    pub gamma: f64,
}

/// `X̄ = A Bᵀ` with `A` (`m1 × r`) and `B` (`m2 × r`) random, rescaled so
/// that `‖X̄‖_∞ = 0.95 γ`, inside [`default_box`].
///
/// For the exponential family the factors are uniform on `[1, 2]` and the
/// product is negated, which keeps every entry within `[−γ, −γ/5]` without
/// shifting (a shift would raise the rank).
pub fn gen_truth<R: Rng + ?Sized>(
    m1: usize,
    m2: usize,
    r: usize,
    gamma: f64,
    family: &ExponentialFamily,
    rng: &mut R,
) -> Result<GroundTruth> {
    if r == 0 || r > m1.min(m2) {
        return Err(invalid(format!("rank {r} outside 1..={}", m1.min(m2))));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma must be positive"));
    }
    let exponential = matches!(family, ExponentialFamily::Exponential);
    let mut factor = |rows: usize| -> Matrix {
        Matrix::from_fn(rows, r, |_, _| {
            if exponential {
                rng.random_range(1.0..2.0)
            } else {
                rng.sample(StandardNormal)
            }
        })
    };
    let a = factor(m1);
    let b = factor(m2);
    let mut x = &a * b.transpose();
    let peak = x.amax();
    if !(peak > 0.0) {
        return Err(Error::NonFinite("ground-truth scale"));
    }
    let sign = if exponential { -1.0 } else { 1.0 };
    x *= sign * 0.95 * gamma / peak;
    Ok(GroundTruth { x_bar: x, r, gamma })
}

/// Draws `n` indices from the scheme, then `Y_i` from the family at
/// `X̄_{ω_i}` (or `G'(X̄_{ω_i})` when noiseless).
pub fn simulate<R: Rng + ?Sized>(
    x_bar: &Matrix,
    family: &ExponentialFamily,
    scheme: &SamplingScheme,
    n: usize,
    noiseless: bool,
    rng: &mut R,
) -> Result<ObservationSet> {
    if x_bar.shape() != scheme.dims() {
        return Err(Error::DimensionMismatch {
            expected: scheme.dims(),
            got: x_bar.shape(),
        });
    }
    let omegas = scheme.draw(n, rng)?;
    let ys = omegas
        .iter()
        .map(|&(k, l)| {
            let x = x_bar[(k, l)];
            if noiseless {
                family.mean(x)
            } else {
                family.sample(x, rng)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (m1, m2) = scheme.dims();
    ObservationSet::new(m1, m2, omegas, ys)
}

/// Stream identifiers for [`job_rng`].
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Truth = 1,
    Data = 2,
    Rademacher = 3,
    Gradient = 4,
    Packing = 5,
    PackingData = 6,
}

fn job_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) ^ (a << 32) ^ b);
    rng
}

fn par_map<T, U, F>(parallel: bool, items: Vec<T>, f: F) -> Result<Vec<U>>
where
    T: Send,
    U: Send,
    F: Fn(T) -> Result<U> + Sync + Send,
{
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

/// Configuration resolved into the objects every experiment needs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub scheme: SamplingScheme,
    pub bx: ParameterBox,
    pub consts: IntervalConstants,
    pub hash: String,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let scheme = cfg.sampling.build(cfg.m1, cfg.m2)?;
        let bx = cfg.resolved_box()?;
        let consts = interval_constants(&cfg.noise, &bx, &ConstantsConfig::default())?;
        let hash = cfg.hash()?;
        Ok(Self {
            cfg,
            scheme,
            bx,
            consts,
            hash,
        })
    }

    pub fn family(&self) -> &ExponentialFamily {
        &self.cfg.noise
    }

    /// Ground truth of replicate `rep`, shared by every sample size.
    pub fn truth(&self, rep: usize) -> Result<GroundTruth> {
        let c = &self.cfg;
        let mut rng = job_rng(c.seed, Stream::Truth, 0, rep as u64);
        gen_truth(c.m1, c.m2, c.rank, c.gamma, &c.noise, &mut rng)
    }

    pub fn simulate(&self, x_bar: &Matrix, n_idx: usize, rep: usize) -> Result<ObservationSet> {
        let mut rng = job_rng(self.cfg.seed, Stream::Data, n_idx as u64, rep as u64);
        simulate(x_bar, &self.cfg.noise, &self.scheme, self.cfg.n_grid[n_idx], self.cfg.noiseless, &mut rng)
    }

    pub fn problem(&self, obs: ObservationSet, kind: EstimatorKind) -> Result<CompletionProblem> {
        match kind {
            EstimatorKind::Likelihood => CompletionProblem::likelihood(obs, self.cfg.noise, self.bx, 0.0),
            EstimatorKind::KnownSampling => {
                CompletionProblem::known_sampling(obs, self.cfg.noise, self.bx, 0.0, self.scheme.clone())
            }
        }
    }

    /// λ for the configured mode. `x_bar` is required by the oracle rule.
    pub fn lambda_for(&self, p: &CompletionProblem, x_bar: Option<&Matrix>) -> Result<f64> {
        let s = &self.cfg.solver;
        let n = p.obs().len();
        match self.cfg.lambda {
            LambdaMode::Fixed(v) => Ok(v),
            LambdaMode::Rule(LambdaRule::TheoremThBis) => {
                theorem_lambda(TheoremLambda::ThBis, &self.consts, &self.scheme, n, s.c_gamma, s.c_star)
            }
            LambdaMode::Rule(LambdaRule::TheoremOracle) => {
                theorem_lambda(TheoremLambda::OracleProbUp, &self.consts, &self.scheme, n, s.c_gamma, s.c_star)
            }
            LambdaMode::Rule(LambdaRule::Oracle) => {
                let x = x_bar.ok_or_else(|| invalid("oracle lambda needs the true matrix"))?;
                Ok(p.oracle_lambda(x)?.max(LAMBDA_FLOOR))
            }
        }
    }

    /// Builds the problem, picks λ and fits.
    pub fn fit(&self, obs: ObservationSet, x_bar: Option<&Matrix>) -> Result<(CompletionProblem, FitResult)> {
        let p = self.problem(obs, self.cfg.estimator)?;
        let lambda = self.lambda_for(&p, x_bar)?;
        let p = p.with_lambda(lambda)?;
        let r = fit(&p, &self.cfg.solver, None)?;
        Ok((p, r))
    }

    fn bound_inputs(&self, n: usize, lambda: f64, sigma_r_mean: f64, x_bar: &Matrix) -> Result<BoundInputs> {
        let c = &self.cfg;
        let mut inp = BoundInputs::new(c.m1, c.m2, n, c.rank);
        inp.mu = Some(self.scheme.mu_constant()?);
        inp.nu = Some(self.scheme.nu_constant());
        inp.sigma_lo_sq = Some(self.consts.sigma_lo_sq);
        inp.sigma_hi_sq = Some(self.consts.sigma_hi_sq);
        inp.lambda = Some(lambda);
        inp.gamma = Some(c.gamma);
        inp.l_gamma = Some(self.consts.l_gamma);
        inp.c_gamma = c.solver.c_gamma;
        inp.sigma_r_mean = Some(sigma_r_mean);
        inp.nuclear_norm_bar = Some(nuclear_norm(x_bar)?);
        Ok(inp)
    }
}

/// `M r log d / n`.
pub fn rate_predictor(m1: usize, m2: usize, r: usize, n: usize) -> f64 {
    (m1.max(m2) * r) as f64 * ((m1 + m2) as f64).ln() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub config_hash: String,
    pub family: &'static str,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub replicate: usize,
    pub frob_risk: f64,
    pub kl_integrated: f64,
    pub kl_empirical: f64,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub predictor: f64,
    pub th_base: f64,
    pub th_bis: f64,
    pub oracle_up: f64,
    pub oracle_prob_up: f64,
    pub th_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianPoint {
    pub n: usize,
    pub predictor: f64,
    pub median_frob_risk: f64,
    pub converged_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSweep {
    pub config_hash: String,
    pub points: Vec<MedianPoint>,
    /// Least-squares slope of log median risk against log predictor.
    pub slope: f64,
    pub intercept: f64,
    #[serde(skip)]
    pub rows: Vec<RateRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Ordinary least-squares `(slope, intercept)` of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let k = x.len() as f64;
    if x.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn rate_sweep(cfg: &ExperimentConfig) -> Result<RateSweep> {
    let setup = Setup::new(cfg.clone())?;
    let c = &setup.cfg;
    let truths = (0..c.replicates).map(|r| setup.truth(r)).collect::<Result<Vec<_>>>()?;
    let sigma_r: Vec<f64> = c
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = job_rng(c.seed, Stream::Rademacher, i as u64, 0);
            let v = rademacher_norm_samples(&setup.scheme, n, c.bound_mc_reps, &mut rng)?;
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..c.n_grid.len())
        .flat_map(|i| (0..c.replicates).map(move |r| (i, r)))
        .collect();
    let rows = par_map(c.parallel, jobs, |(i, rep)| {
        let n = c.n_grid[i];
        let x_bar = &truths[rep].x_bar;
        let obs = setup.simulate(x_bar, i, rep)?;
        let (p, res) = setup.fit(obs, Some(x_bar))?;
        let risk = RiskReport::compute(&c.noise, &setup.scheme, p.obs(), &res.x_hat, x_bar)?;
        let inp = setup.bound_inputs(n, res.lambda_used, sigma_r[i], x_bar)?;
        let b = |which| bound_value(which, &inp).map(|e| e.value);
        Ok(RateRow {
            config_hash: setup.hash.clone(),
            family: c.noise.name(),
            estimator: c.estimator,
            n,
            replicate: rep,
            frob_risk: risk.frob_risk,
            kl_integrated: risk.kl_integrated,
            kl_empirical: risk.kl_empirical,
            lambda: res.lambda_used,
            converged: res.converged,
            iterations: res.iterations,
            predictor: rate_predictor(c.m1, c.m2, c.rank, n),
            th_base: b(Bound::ThBase)?,
            th_bis: b(Bound::ThBis)?,
            oracle_up: b(Bound::OracleUp)?,
            oracle_prob_up: b(Bound::OracleProbUp)?,
            th_low: b(Bound::ThLow)?,
        })
    })?;

    let points: Vec<MedianPoint> = c
        .n_grid
        .iter()
        .map(|&n| {
            let risks: Vec<f64> = rows.iter().filter(|r| r.n == n && r.converged).map(|r| r.frob_risk).collect();
            MedianPoint {
                n,
                predictor: rate_predictor(c.m1, c.m2, c.rank, n),
                converged_runs: risks.len(),
                median_frob_risk: median(risks),
            }
        })
        .collect();
    let usable: Vec<&MedianPoint> = points.iter().filter(|p| p.median_frob_risk > 0.0).collect();
    let lx: Vec<f64> = usable.iter().map(|p| p.predictor.ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|p| p.median_frob_risk.ln()).collect();
    let (slope, intercept) = linear_fit(&lx, &ly);
    Ok(RateSweep {
        config_hash: setup.hash,
        points,
        slope,
        intercept,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub config_hash: String,
    pub family: &'static str,
    pub n: usize,
    pub replicate: usize,
    pub lambda: f64,
    pub lambda_required: f64,
    pub lhs: f64,
    pub candidate: String,
    pub feasible: bool,
    pub rank: usize,
    pub rhs_nuclear: f64,
    pub rhs_rank: f64,
    pub margin_nuclear: f64,
    pub margin_rank: f64,
    pub replicate_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRun {
    pub n: usize,
    pub replicate: usize,
    pub lambda: f64,
    pub lambda_required: f64,
    pub converged: bool,
    pub report: OracleReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub config_hash: String,
    pub runs: Vec<OracleRun>,
    #[serde(skip)]
    pub rows: Vec<OracleRow>,
}

impl OracleCheck {
    pub fn all_pass(&self) -> bool {
        self.runs.iter().all(|r| r.report.passes())
    }
}

/// Fits the known-sampling estimator with `λ = max(oracle level, mode λ)`
/// and evaluates both oracle inequalities against `{X̄, 0, rank-k
/// truncations of X̄}` with slack `10 · tol`.
pub fn oracle_check(cfg: &ExperimentConfig) -> Result<OracleCheck> {
    if cfg.estimator != EstimatorKind::KnownSampling {
        return Err(Error::Inapplicable("oracle check needs estimator = known_sampling".into()));
    }
    let setup = Setup::new(cfg.clone())?;
    let c = &setup.cfg;
    let mu = setup.scheme.mu_constant()?;
    let truths = (0..c.replicates).map(|r| setup.truth(r)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..c.n_grid.len())
        .flat_map(|i| (0..c.replicates).map(move |r| (i, r)))
        .collect();
    let results = par_map(c.parallel, jobs, |(i, rep)| {
        let x_bar = &truths[rep].x_bar;
        let obs = setup.simulate(x_bar, i, rep)?;
        let p = setup.problem(obs, EstimatorKind::KnownSampling)?;
        let required = p.oracle_lambda(x_bar)?;
        let lambda = setup.lambda_for(&p, Some(x_bar))?.max(required);
        let p = p.with_lambda(lambda)?;
        let res = fit(&p, &c.solver, None)?;
        let mut cands = vec![("x_bar".to_string(), x_bar.clone()), ("zero".to_string(), Matrix::zeros(c.m1, c.m2))];
        for k in 1..=c.rank {
            cands.push((format!("rank_{k}"), truncate_rank(x_bar, k)?));
        }
        let report = oracle_inequality_check(&OracleCheckInput {
            family: &c.noise,
            scheme: &setup.scheme,
            bx: &setup.bx,
            x_check: &res.x_hat,
            x_bar,
            lambda,
            lambda_required: required,
            mu,
            sigma_lo_sq: setup.consts.sigma_lo_sq,
            candidates: &cands,
            slack: 10.0 * c.solver.tol,
        })?;
        Ok(OracleRun {
            n: c.n_grid[i],
            replicate: rep,
            lambda,
            lambda_required: required,
            converged: res.converged,
            report,
        })
    })?;
    let mut rows = Vec::new();
    for run in &results {
        let pass = run.report.passes();
        for cand in &run.report.candidates {
            rows.push(OracleRow {
                config_hash: setup.hash.clone(),
                family: c.noise.name(),
                n: run.n,
                replicate: run.replicate,
                lambda: run.lambda,
                lambda_required: run.lambda_required,
                lhs: run.report.lhs,
                candidate: cand.name.clone(),
                feasible: cand.feasible,
                rank: cand.rank,
                rhs_nuclear: cand.rhs_nuclear,
                rhs_rank: cand.rhs_rank,
                margin_nuclear: cand.margin_nuclear,
                margin_rank: cand.margin_rank,
                replicate_pass: pass,
            });
        }
    }
    Ok(OracleCheck {
        config_hash: setup.hash,
        runs: results,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub config_hash: String,
    pub n: usize,
    pub reps: usize,
    pub sigma_r_mean: f64,
    pub sigma_r_sd: f64,
    /// `c* σ_Z √(2e log d / n)` with `σ_Z² = ν / m`.
    pub concentration_bound: f64,
    pub applicable: bool,
    pub grad_norm_mean: f64,
    pub c_gamma: f64,
    pub theorem_lambda: f64,
    /// Fraction of repetitions with `2‖∇Lik(X̄)‖ > λ`.
    pub exceed_freq: f64,
    /// `1/d`.
    pub target_freq: f64,
}

/// Monte Carlo check of the Rademacher concentration bound and of how often
/// the score at the truth exceeds half the prescribed λ.
pub fn concentration_check(cfg: &ExperimentConfig) -> Result<Vec<ConcentrationRow>> {
    let setup = Setup::new(cfg.clone())?;
    let c = &setup.cfg;
    let (m1, m2) = (c.m1, c.m2);
    let d = (m1 + m2) as f64;
    let m = m1.min(m2) as f64;
    let nu = setup.scheme.nu_constant();
    let truth = setup.truth(0)?;
    let mut rows = Vec::new();
    for (i, &n) in c.n_grid.iter().enumerate() {
        let mut rng = job_rng(c.seed, Stream::Rademacher, i as u64, 0);
        let samples = rademacher_norm_samples(&setup.scheme, n, c.mc_reps, &mut rng)?;
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let sd = if samples.len() > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let concentration_bound = c.solver.c_star * (nu / m).sqrt() * (2.0 * std::f64::consts::E * d.ln() / n as f64).sqrt();
        let applicable = n as f64 >= m * d.ln() / (9.0 * nu);

        let grads = par_map(c.parallel, (0..c.mc_reps).collect(), |rep| {
            let mut rng = job_rng(c.seed, Stream::Gradient, i as u64, rep as u64);
            let obs = simulate(&truth.x_bar, &c.noise, &setup.scheme, n, c.noiseless, &mut rng)?;
            let p = setup.problem(obs, EstimatorKind::Likelihood)?;
            operator_norm(&p.gradient(&truth.x_bar)?)
        })?;
        let grad_mean = grads.iter().sum::<f64>() / grads.len() as f64;
        for &cg in &c.c_gamma_grid {
            let lam = theorem_lambda(TheoremLambda::ThBis, &setup.consts, &setup.scheme, n, cg, c.solver.c_star)?;
            let exceed = grads.iter().filter(|&&g| 2.0 * g > lam).count() as f64 / grads.len() as f64;
            rows.push(ConcentrationRow {
                config_hash: setup.hash.clone(),
                n,
                reps: c.mc_reps,
                sigma_r_mean: mean,
                sigma_r_sd: sd,
                concentration_bound,
                applicable,
                grad_norm_mean: grad_mean,
                c_gamma: cg,
                theorem_lambda: lam,
                exceed_freq: exceed,
                target_freq: 1.0 / d,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundRow {
    pub config_hash: String,
    pub family: &'static str,
    pub n: usize,
    pub replicate: usize,
    pub cardinality: usize,
    pub kappa: f64,
    pub min_sq_distance: f64,
    pub distance_threshold: f64,
    pub distance_ok: bool,
    pub membership_ok: bool,
    pub avg_kl: f64,
    pub kl_threshold: f64,
    pub kl_ok: bool,
    pub delta: f64,
    pub lower_value: f64,
    pub max_frob_risk: f64,
    pub risk_at_least_lower: bool,
}

#[derive(Debug, Clone)]
pub struct LowerBoundRun {
    pub rows: Vec<LowerBoundRow>,
    pub reports: Vec<PackingReport>,
    pub packings: Vec<PackingSet>,
}

/// Builds a packing per `(n, replicate)`, verifies its conditions, and fits
/// the estimator on data simulated from every member.
pub fn lowerbound_run(cfg: &ExperimentConfig) -> Result<LowerBoundRun> {
    let setup = Setup::new(cfg.clone())?;
    let c = &setup.cfg;
    if !c.noise.in_domain(0.0) {
        return Err(Error::Inapplicable(format!(
            "{} family: the null packing member is outside the natural domain",
            c.noise.name()
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..c.n_grid.len())
        .flat_map(|i| (0..c.replicates).map(move |r| (i, r)))
        .collect();
    let out = par_map(c.parallel, jobs, |(i, rep)| {
        let n = c.n_grid[i];
        let spec = PackingSpec {
            m1: c.m1,
            m2: c.m2,
            r: c.rank,
            gamma: c.gamma,
            alpha: c.alpha,
            sigma_hi_sq: setup.consts.sigma_hi_sq,
            n,
            max_attempts: c.packing_attempts,
            cap: c.packing_cap,
        };
        let mut rng = job_rng(c.seed, Stream::Packing, i as u64, rep as u64);
        let mut packing = build_packing(&spec, &mut rng)?;
        packing.seed = Some(c.seed);
        let report = verify_conditions(&packing, &c.noise, &setup.scheme, c.lower_c)?;
        let mut max_risk: f64 = 0.0;
        for (j, member) in packing.members.iter().enumerate() {
            let mut rng = job_rng(c.seed, Stream::PackingData, i as u64, ((rep as u64) << 16) | j as u64);
            let obs = simulate(member, &c.noise, &setup.scheme, n, c.noiseless, &mut rng)?;
            let (_, res) = setup.fit(obs, Some(member))?;
            max_risk = max_risk.max(frobenius_risk(&res.x_hat, member)?);
        }
        let row = LowerBoundRow {
            config_hash: setup.hash.clone(),
            family: c.noise.name(),
            n,
            replicate: rep,
            cardinality: report.cardinality,
            kappa: packing.kappa,
            min_sq_distance: report.min_sq_distance,
            distance_threshold: report.distance_threshold,
            distance_ok: report.distance_ok,
            membership_ok: report.membership_ok,
            avg_kl: report.avg_kl,
            kl_threshold: report.kl_threshold,
            kl_ok: report.kl_ok,
            delta: report.delta,
            lower_value: report.lower_value,
            max_frob_risk: max_risk,
            risk_at_least_lower: max_risk >= report.lower_value,
        };
        Ok((row, report, packing))
    })?;
    let mut run = LowerBoundRun {
        rows: Vec::new(),
        reports: Vec::new(),
        packings: Vec::new(),
    };
    for (row, rep, pk) in out {
        run.rows.push(row);
        run.reports.push(rep);
        run.packings.push(pk);
    }
    Ok(run)
}
