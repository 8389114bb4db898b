//! Packing construction behind the minimax lower bound.
//!
//! Members are `m1 × m2` block matrices `(L|…|L|O)` where `L` is an
//! `m1 × r` block with entries in `{0, κγ}` and `O` pads the remaining
//! `m2 − r⌊m2/r⌋` columns with zeros. The first member is the null matrix.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expfam::ExponentialFamily;
use crate::io;
use crate::matops::{numerical_rank, Matrix};
use crate::sampling::SamplingScheme;

pub const DEFAULT_CARDINALITY_CAP: usize = 257;

/// `κ = min(1/2, √(α m1 r) / (2 γ σ̄² √n))`.
pub fn kappa(alpha: f64, m1: usize, r: usize, gamma: f64, sigma_hi_sq: f64, n: usize) -> f64 {
    let v = (alpha * (m1 * r) as f64).sqrt() / (2.0 * gamma * sigma_hi_sq * (n as f64).sqrt());
    v.min(0.5)
}

/// `δ(α, M) = (1 − 2α − ½√(α/(rM log 2))) / (1 + 2^{−rM/16})`.
pub fn delta_alpha_m(alpha: f64, r: usize, big_m: usize) -> f64 {
    let rm = (r * big_m) as f64;
    (1.0 - 2.0 * alpha - 0.5 * (alpha / (rm * std::f64::consts::LN_2)).sqrt()) / (1.0 + (-rm / 16.0).exp2())
}

/// Cardinality guaranteed by the Varshamov-Gilbert bound,
/// `2^{⌈r m1 / 8⌉} + 1`, saturating.
pub fn cardinality_target(m1: usize, r: usize) -> usize {
    let e = (r * m1).div_ceil(8);
    if e >= usize::BITS as usize - 1 {
        usize::MAX
    } else {
        (1usize << e) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSet {
    pub alpha: f64,
    pub kappa: f64,
    pub r: usize,
    pub gamma: f64,
    pub m1: usize,
    pub m2: usize,
    pub n: usize,
    pub sigma_hi_sq: f64,
    pub seed: Option<u64>,
    /// Cardinality the construction aimed for after capping.
    pub target: usize,
    #[serde(skip)]
    pub members: Vec<Matrix>,
}

impl PackingSet {
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }

    /// Level `κγ` taken by the nonzero entries.
    pub fn level(&self) -> f64 {
        self.kappa * self.gamma
    }

    /// `m1 m2 κ² γ² / 16`.
    pub fn distance_threshold(&self) -> f64 {
        (self.m1 * self.m2) as f64 * self.level().powi(2) / 16.0
    }

    /// Writes `manifest.json` and `member_XXXX.csv` files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct Manifest<'a> {
            #[serde(flatten)]
            packing: &'a PackingSet,
            members: Vec<String>,
        }
        let names: Vec<String> = (0..self.members.len()).map(|i| format!("member_{i:04}.csv")).collect();
        for (m, name) in self.members.iter().zip(&names) {
            io::save_matrix(dir.join(name), m)?;
        }
        io::save_json(
            dir.join("manifest.json"),
            &Manifest {
                packing: self,
                members: names,
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        #[derive(Deserialize)]
        struct Manifest {
            #[serde(flatten)]
            packing: PackingSet,
            members: Vec<String>,
        }
        let man: Manifest = io::load_json(dir.join("manifest.json"))?;
        let mut p = man.packing;
        p.members = man
            .members
            .iter()
            .map(|name| io::load_matrix(dir.join(name)))
            .collect::<Result<_>>()?;
        for m in &p.members {
            if m.shape() != (p.m1, p.m2) {
                return Err(Error::DimensionMismatch {
                    expected: (p.m1, p.m2),
                    got: m.shape(),
                });
            }
        }
        Ok(p)
    }
}

/// Parameters of [`build_packing`].
#[derive(Debug, Clone, PartialEq)]
pub struct PackingSpec {
    pub m1: usize,
    pub m2: usize,
    pub r: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub sigma_hi_sq: f64,
    pub n: usize,
    pub max_attempts: usize,
    pub cap: usize,
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn expand(block: &[bool], m1: usize, m2: usize, r: usize, level: f64) -> Matrix {
    let reps = m2 / r;
    Matrix::from_fn(m1, m2, |i, j| {
        if j < reps * r && block[i * r + j % r] {
            level
        } else {
            0.0
        }
    })
}

/// Greedy rejection sampling of a Varshamov-Gilbert packing: random binary
/// blocks are kept when their Hamming distance to every kept block,
/// including the null block, is at least `m1 r / 8`.
pub fn build_packing<R: Rng + ?Sized>(spec: &PackingSpec, rng: &mut R) -> Result<PackingSet> {
    let PackingSpec { m1, m2, r, gamma, alpha, sigma_hi_sq, n, .. } = *spec;
    if m1 < 2 || m2 < 2 {
        return Err(invalid("packing needs m1, m2 >= 2"));
    }
    if r == 0 || r > m1.min(m2) {
        return Err(invalid(format!("rank {r} outside 1..={}", m1.min(m2))));
    }
    if !(alpha > 0.0 && alpha < 0.125) {
        return Err(invalid("alpha must lie in (0, 1/8)"));
    }
    if !(gamma > 0.0 && sigma_hi_sq > 0.0) || n == 0 {
        return Err(invalid("packing needs positive gamma, sigma_hi_sq and n"));
    }
    if spec.cap < 2 {
        return Err(invalid("cardinality cap must be at least 2"));
    }
    let target = cardinality_target(m1, r).min(spec.cap);
    let min_dist = (m1 * r).div_ceil(8);
    let bits = m1 * r;
    let mut blocks: Vec<Vec<bool>> = vec![vec![false; bits]];
    let mut attempts = 0;
    while blocks.len() < target && attempts < spec.max_attempts {
        attempts += 1;
        let cand: Vec<bool> = (0..bits).map(|_| rng.random::<bool>()).collect();
        if blocks.iter().all(|b| hamming(b, &cand) >= min_dist) {
            blocks.push(cand);
        }
    }
    if blocks.len() < target {
        return Err(Error::PackingIncomplete {
            achieved: blocks.len(),
            target,
        });
    }
    let k = kappa(alpha, m1, r, gamma, sigma_hi_sq, n);
    let level = k * gamma;
    Ok(PackingSet {
        alpha,
        kappa: k,
        r,
        gamma,
        m1,
        m2,
        n,
        sigma_hi_sq,
        seed: None,
        target,
        members: blocks.iter().map(|b| expand(b, m1, m2, r, level)).collect(),
    })
}

/// KL divergence between the laws of `n` observations under `X⁰ = 0` and
/// under `X`: `n Σ π_{k,l} [G'(X)X − G(X) + G(0)]`.
pub fn kl_to_null(f: &ExponentialFamily, s: &SamplingScheme, x: &Matrix, n: usize) -> Result<f64> {
    if !f.in_domain(0.0) {
        return Err(Error::Inapplicable(format!(
            "{} family: the null matrix is outside the natural domain",
            f.name()
        )));
    }
    if x.shape() != s.dims() {
        return Err(Error::DimensionMismatch {
            expected: s.dims(),
            got: x.shape(),
        });
    }
    let mut total = 0.0;
    for (&p, &v) in s.table().iter().zip(x.iter()) {
        if p > 0.0 {
            total += p * f.bregman(0.0, v)?;
        }
    }
    Ok(n as f64 * total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingReport {
    pub cardinality: usize,
    pub vg_cardinality: f64,
    pub min_sq_distance: f64,
    pub distance_threshold: f64,
    pub distance_ok: bool,
    pub max_rank: usize,
    pub max_diff_rank: usize,
    pub max_entry: f64,
    pub membership_ok: bool,
    pub avg_kl: f64,
    pub kl_threshold: f64,
    pub kl_ok: bool,
    pub delta: f64,
    pub lower_value: f64,
    pub failures: Vec<String>,
}

impl PackingReport {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks the packing distance, class membership and average KL
/// conditions, and reports `δ(α, M)` and `c min(γ², αMr/(nσ̄²))`.
/// The cardinality condition is checked against the uncapped guarantee
/// `2^{r m1/8} + 1` only when the packing was not capped below it.
pub fn verify_conditions(p: &PackingSet, f: &ExponentialFamily, s: &SamplingScheme, c: f64) -> Result<PackingReport> {
    let card = p.cardinality();
    if card < 2 {
        return Err(invalid("packing needs at least two members"));
    }
    let mut failures = Vec::new();
    let vg = 2f64.powf((p.r * p.m1) as f64 / 8.0) + 1.0;
    if (card as f64) < vg && card < p.target {
        failures.push(format!("cardinality {card} below {vg}"));
    }

    let mut min_sq = f64::INFINITY;
    let mut max_diff_rank = 0;
    for i in 0..card {
        for j in i + 1..card {
            let d = &p.members[i] - &p.members[j];
            min_sq = min_sq.min(d.norm_squared());
            max_diff_rank = max_diff_rank.max(numerical_rank(&d)?);
        }
    }
    let thr = p.distance_threshold();
    let distance_ok = min_sq >= thr * (1.0 - 1e-12);
    if !distance_ok {
        failures.push(format!("pairwise distance {min_sq} below {thr}"));
    }

    let mut max_rank = 0;
    let mut max_entry: f64 = 0.0;
    let level = p.level();
    let mut levels_ok = true;
    for m in &p.members {
        max_rank = max_rank.max(numerical_rank(m)?);
        for &v in m.iter() {
            max_entry = max_entry.max(v.abs());
            levels_ok &= v == 0.0 || v == level;
        }
    }
    let membership_ok = levels_ok && max_rank <= p.r && max_diff_rank <= p.r && max_entry <= p.gamma;
    if !membership_ok {
        failures.push(format!(
            "membership: rank {max_rank}, difference rank {max_diff_rank}, max entry {max_entry}, levels ok {levels_ok}"
        ));
    }

    let mut kl_sum = 0.0;
    for m in &p.members[1..] {
        kl_sum += kl_to_null(f, s, m, p.n)?;
    }
    let avg_kl = kl_sum / (card - 1) as f64;
    let kl_threshold = p.alpha * ((card - 1) as f64).ln();
    let kl_ok = avg_kl <= kl_threshold;
    if !kl_ok {
        failures.push(format!("average KL {avg_kl} above {kl_threshold}"));
    }

    let big_m = p.m1.max(p.m2);
    let lower_value = c * (p.gamma * p.gamma).min(p.alpha * (big_m * p.r) as f64 / (p.n as f64 * p.sigma_hi_sq));
    Ok(PackingReport {
        cardinality: card,
        vg_cardinality: vg,
        min_sq_distance: min_sq,
        distance_threshold: thr,
        distance_ok,
        max_rank,
        max_diff_rank,
        max_entry,
        membership_ok,
        avg_kl,
        kl_threshold,
        kl_ok,
        delta: delta_alpha_m(p.alpha, p.r, big_m),
        lower_value,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{curvature_bounds, ParameterBox};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(m1: usize, m2: usize, r: usize, n: usize) -> PackingSpec {
        PackingSpec {
            m1,
            m2,
            r,
            gamma: 1.0,
            alpha: 0.1,
            sigma_hi_sq: 1.0,
            n,
            max_attempts: 100_000,
            cap: DEFAULT_CARDINALITY_CAP,
        }
    }

    #[test]
    fn kappa_examples() {
        assert!((kappa(0.1, 100, 2, 1.0, 1.0, 10_000) - 20f64.sqrt() / 200.0).abs() < 1e-15);
        assert!((kappa(0.1, 100, 2, 1.0, 1.0, 10_000) - 0.02236).abs() < 1e-5);
        assert_eq!(kappa(0.1, 100, 2, 1.0, 1.0, 1), 0.5);
        let big = 1usize << 40;
        assert_eq!(kappa(0.1, 16, 2, 1.0, 2.0, big), (3.2f64).sqrt() / (4.0 * (big as f64).sqrt()));
    }

    #[test]
    fn delta_limits() {
        assert!(delta_alpha_m(1e-12, 10, 10_000) > 0.999);
        assert!(delta_alpha_m(1e-12, 10, 10_000) < 1.0);
        let want = (1.0 - 0.2 - 0.5 * (0.1 / (32.0 * 2f64.ln())).sqrt()) / (1.0 + 0.25);
        assert!((delta_alpha_m(0.1, 2, 16) - want).abs() < 1e-15);
    }

    #[test]
    fn cardinality_targets() {
        assert_eq!(cardinality_target(8, 2), 5);
        assert_eq!(cardinality_target(16, 2), 17);
        assert_eq!(cardinality_target(9, 1), 5);
    }

    #[test]
    fn packing_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = build_packing(&spec(8, 5, 2, 1000), &mut rng).unwrap();
        assert!(p.cardinality() >= 5);
        assert!(p.members[0].iter().all(|&v| v == 0.0));
        let level = p.level();
        for m in &p.members {
            assert!(m.iter().all(|&v| v == 0.0 || v == level));
            assert!(numerical_rank(m).unwrap() <= 2);
            assert!(m.column(4).iter().all(|&v| v == 0.0), "padding column must be zero");
            assert_eq!(m.column(0), m.column(2));
            assert_eq!(m.column(1), m.column(3));
        }
        // Exhaustive pairwise oracle.
        let thr = 8.0 * 5.0 * level * level / 16.0;
        for i in 0..p.cardinality() {
            for j in 0..p.cardinality() {
                if i != j {
                    let d: f64 = p.members[i].iter().zip(p.members[j].iter()).map(|(a, b)| (a - b).powi(2)).sum();
                    assert!(d >= thr);
                }
            }
        }
    }

    #[test]
    fn packing_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_packing(&spec(1, 5, 1, 10), &mut rng).is_err());
        assert!(build_packing(&spec(8, 5, 6, 10), &mut rng).is_err());
        let mut s = spec(16, 16, 2, 10);
        s.alpha = 0.2;
        assert!(build_packing(&s, &mut rng).is_err());
        let mut s = spec(64, 64, 1, 10);
        s.max_attempts = 3;
        match build_packing(&s, &mut rng) {
            Err(Error::PackingIncomplete { achieved, target }) => {
                assert!(achieved <= 4);
                assert_eq!(target, 257);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kl_examples() {
        let g = ExponentialFamily::gaussian(1.0).unwrap();
        let s = SamplingScheme::uniform(2, 2).unwrap();
        assert_eq!(kl_to_null(&g, &s, &Matrix::from_element(2, 2, 1.0), 4).unwrap(), 2.0);
        assert_eq!(kl_to_null(&g, &s, &Matrix::zeros(2, 2), 4).unwrap(), 0.0);

        let x = 0.3;
        let mut a = Matrix::zeros(3, 4);
        a[(1, 2)] = x;
        let s = SamplingScheme::uniform(3, 4).unwrap();
        let want = 50.0 * (x.exp() * x - x.exp() + 1.0) / 12.0;
        let got = kl_to_null(&ExponentialFamily::Poisson, &s, &a, 50).unwrap();
        assert!((got - want).abs() < 1e-14);

        let e = kl_to_null(&ExponentialFamily::Exponential, &s, &Matrix::from_element(3, 4, -1.0), 5);
        assert!(matches!(e, Err(Error::Inapplicable(_))));
    }

    #[test]
    fn kl_positive_off_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SamplingScheme::uniform(8, 8).unwrap();
        let p = build_packing(&spec(8, 8, 2, 100), &mut rng).unwrap();
        for f in [ExponentialFamily::gaussian(0.7).unwrap(), ExponentialFamily::binomial(3).unwrap(), ExponentialFamily::Poisson] {
            assert_eq!(kl_to_null(&f, &s, &p.members[0], 100).unwrap(), 0.0);
            for m in &p.members[1..] {
                assert!(kl_to_null(&f, &s, m, 100).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn conditions_hold_and_scale_with_n() {
        // The KL bound n σ̄² κ²γ²/2 ≤ α r m1 / 8 needs σ̄² ≥ 1 with this κ.
        for f in [ExponentialFamily::gaussian(1.0).unwrap(), ExponentialFamily::binomial(4).unwrap(), ExponentialFamily::Poisson] {
            let bx = ParameterBox::symmetric(1.0).unwrap();
            let (_, hi) = curvature_bounds(&f, &bx).unwrap();
            let s = SamplingScheme::uniform(16, 16).unwrap();
            for n in [10, 1000, 2000, 100_000] {
                let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
                let mut sp = spec(16, 16, 2, n);
                sp.sigma_hi_sq = hi;
                let p = build_packing(&sp, &mut rng).unwrap();
                let rep = verify_conditions(&p, &f, &s, 1.0).unwrap();
                assert!(rep.passes(), "{}: n={n}: {:?}", f.name(), rep.failures);
                // Per-member strong convexity bound.
                for m in &p.members {
                    let kl = kl_to_null(&f, &s, m, n).unwrap();
                    assert!(kl <= n as f64 * hi * p.level().powi(2) / 2.0 * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn small_curvature_violation_is_reported() {
        let f = ExponentialFamily::binomial(1).unwrap();
        let (_, hi) = curvature_bounds(&f, &ParameterBox::symmetric(1.0).unwrap()).unwrap();
        assert!(hi < 1.0);
        let mut sp = spec(16, 16, 2, 1000);
        sp.sigma_hi_sq = hi;
        let p = build_packing(&sp, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let rep = verify_conditions(&p, &f, &SamplingScheme::uniform(16, 16).unwrap(), 1.0).unwrap();
        assert!(rep.distance_ok && rep.membership_ok);
        assert!(!rep.kl_ok);
        assert_eq!(rep.failures.len(), 1);
        assert!(rep.failures[0].starts_with("average KL"));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = build_packing(&spec(16, 12, 2, 3333), &mut rng).unwrap();
        p.seed = Some(9);
        p.save(dir.path()).unwrap();
        let q = PackingSet::load(dir.path()).unwrap();
        assert_eq!(p, q);
        for (a, b) in p.members.iter().zip(&q.members) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let again = tempfile::tempdir().unwrap();
        q.save(again.path()).unwrap();
        assert_eq!(manifest, std::fs::read_to_string(again.path().join("manifest.json")).unwrap());
    }
}
