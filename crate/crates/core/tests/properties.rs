use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use expmc::estimator::{fit, CompletionProblem, SolverConfig};
use expmc::experiment::{rate_sweep, simulate, ExperimentConfig};
use expmc::expfam::{curvature_bounds, ExponentialFamily, ParameterBox};
use expmc::lowerbound::{build_packing, kl_to_null, PackingSpec};
use expmc::matops::{
    box_clip, combined_prox, nuclear_norm, numerical_rank, schatten_norm, svt, within_box, Matrix, ProxConfig,
    SpanProjector,
};
use expmc::sampling::SamplingScheme;

fn gaussian(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn family(i: usize) -> (ExponentialFamily, ParameterBox) {
    match i % 4 {
        0 => (ExponentialFamily::gaussian(0.8).unwrap(), ParameterBox::symmetric(2.0).unwrap()),
        1 => (ExponentialFamily::binomial(4).unwrap(), ParameterBox::new(-2.0, 1.0).unwrap()),
        2 => (ExponentialFamily::Poisson, ParameterBox::symmetric(1.5).unwrap()),
        _ => (ExponentialFamily::Exponential, ParameterBox::new(-4.0, -0.3).unwrap()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bregman_sandwich(i in 0usize..4, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let (f, bx) = family(i);
        let (lo, hi) = curvature_bounds(&f, &bx).unwrap();
        let x = bx.lo + u * (bx.hi - bx.lo);
        let y = bx.lo + v * (bx.hi - bx.lo);
        let d = f.bregman(x, y).unwrap();
        let sq = (x - y).powi(2);
        prop_assert!(lo * sq / 2.0 <= d + 1e-12);
        prop_assert!(d <= hi * sq / 2.0 + 1e-12);
    }

    #[test]
    fn schatten_ordering(seed in 0u64..u64::MAX, m1 in 1usize..8, m2 in 1usize..8, rank in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(m1, rank, &mut rng) * gaussian(rank, m2, &mut rng);
        let s1 = schatten_norm(&a, 1.0).unwrap();
        let s2 = schatten_norm(&a, 2.0).unwrap();
        let sinf = schatten_norm(&a, f64::INFINITY).unwrap();
        prop_assert!(s1 >= s2 - 1e-12 && s2 >= sinf - 1e-12);
        if numerical_rank(&a).unwrap() >= 2 {
            prop_assert!(s1 > s2 && s2 > sinf);
        } else {
            prop_assert!((s1 - sinf).abs() <= 1e-10 * s1.max(1.0));
        }
    }

    #[test]
    fn span_identities(seed in 0u64..u64::MAX, m1 in 2usize..9, m2 in 2usize..9, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k.min(m1).min(m2);
        let x = gaussian(m1, k, &mut rng) * gaussian(k, m2, &mut rng);
        let a = gaussian(m1, m2, &mut rng);
        let p = SpanProjector::new(&x).unwrap();
        let perp = p.proj_perp(&a).unwrap();
        let lhs = nuclear_norm(&(&x + &perp)).unwrap();
        prop_assert!((lhs - nuclear_norm(&x).unwrap() - nuclear_norm(&perp).unwrap()).abs() <= 1e-9);
        prop_assert!(nuclear_norm(&p.proj_onto(&a).unwrap()).unwrap() <= (2.0 * p.rank() as f64).sqrt() * a.norm() + 1e-9);
        let d = &a - &x;
        prop_assert!(nuclear_norm(&x).unwrap() - nuclear_norm(&a).unwrap() <= nuclear_norm(&p.proj_onto(&d).unwrap()).unwrap() + 1e-9);
    }

    #[test]
    fn svt_beats_perturbations(seed in 0u64..u64::MAX, tau in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(6, 5, &mut rng);
        let z = svt(&a, tau).unwrap();
        let obj = |m: &Matrix| 0.5 * (m - &a).norm_squared() + tau * nuclear_norm(m).unwrap();
        let best = obj(&z);
        for _ in 0..100 {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let w = &z + gaussian(6, 5, &mut rng) * scale;
            prop_assert!(best <= obj(&w) + 1e-12);
        }
    }

    #[test]
    fn combined_prox_feasible(seed in 0u64..u64::MAX, tau in 0.0f64..1.0, radius in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(7, 6, &mut rng) * 2.0;
        let bx = ParameterBox::symmetric(radius).unwrap();
        let out = combined_prox(&a, tau, &bx, &ProxConfig::default()).unwrap();
        prop_assert!(within_box(&out.matrix, &bx));
        prop_assert_eq!(box_clip(&out.matrix, &bx), out.matrix);
    }

    #[test]
    fn scheme_constants_transpose(seed in 0u64..u64::MAX, m1 in 1usize..7, m2 in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Matrix::from_fn(m1, m2, |_, _| rng.random_range(0.05..1.0));
        let s = SamplingScheme::from_weights(w).unwrap();
        let t = s.transpose();
        prop_assert!((s.mu_constant().unwrap() - t.mu_constant().unwrap()).abs() < 1e-12);
        prop_assert!((s.nu_constant() - t.nu_constant()).abs() < 1e-12);
        let a = gaussian(m1, m2, &mut rng);
        prop_assert!(s.weighted_sq_norm(&a).unwrap() >= a.norm_squared() / (s.mu_constant().unwrap() * (m1 * m2) as f64) - 1e-10);
    }

    #[test]
    fn packing_members_in_class(seed in 0u64..u64::MAX, m1 in 8usize..20, m2 in 2usize..20, r in 1usize..3, n in 1usize..100_000) {
        prop_assume!(r <= m2);
        let spec = PackingSpec { m1, m2, r, gamma: 1.3, alpha: 0.05, sigma_hi_sq: 1.0, n, max_attempts: 100_000, cap: 65 };
        let p = build_packing(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let s = SamplingScheme::uniform(m1, m2).unwrap();
        let f = ExponentialFamily::Poisson;
        for (i, a) in p.members.iter().enumerate() {
            prop_assert!(numerical_rank(a).unwrap() <= r);
            prop_assert!(a.amax() <= 1.3);
            let kl = kl_to_null(&f, &s, a, n).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert_eq!(kl == 0.0, a.iter().all(|&v| v == 0.0));
            for b in &p.members[i + 1..] {
                prop_assert!(numerical_rank(&(a - b)).unwrap() <= r);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fitted_estimates_stay_in_box(seed in 0u64..u64::MAX, i in 0usize..4, known in proptest::bool::ANY) {
        let (f, bx) = family(i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = SamplingScheme::uniform(8, 7).unwrap();
        let mid = 0.5 * (bx.lo + bx.hi);
        let truth = Matrix::from_fn(8, 7, |_, _| mid + rng.random_range(-0.3..0.3));
        let obs = simulate(&truth, &f, &scheme, 150, false, &mut rng).unwrap();
        let p = if known {
            CompletionProblem::known_sampling(obs, f, bx, 0.02, scheme).unwrap()
        } else {
            CompletionProblem::likelihood(obs, f, bx, 0.02).unwrap()
        };
        let r = fit(&p, &SolverConfig::default(), None).unwrap();
        prop_assert!(within_box(&r.x_hat, &bx));
        prop_assert!(r.final_objective() <= r.objective_trace[0] + 1e-12);
    }
}

#[test]
fn sweep_rows_are_well_formed() {
    let cfg = ExperimentConfig::from_json(
        r#"{"noise": {"family": "exponential"}, "m1": 9, "m2": 11, "rank": 2, "gamma": 2.0,
            "n_grid": [150, 300], "replicates": 3, "seed": 5, "lambda": "theorem_th_bis"}"#,
    )
    .unwrap();
    let sw = rate_sweep(&cfg).unwrap();
    let hash = cfg.hash().unwrap();
    assert_eq!(sw.rows.len(), 6);
    for r in &sw.rows {
        assert_eq!(r.config_hash, hash);
        assert!(r.frob_risk >= 0.0 && r.kl_integrated >= 0.0 && r.kl_empirical >= 0.0);
        assert!(r.lambda > 0.0);
        for b in [r.th_base, r.th_bis, r.oracle_up, r.oracle_prob_up, r.th_low] {
            assert!(b >= 0.0 && b.is_finite());
        }
    }
}
