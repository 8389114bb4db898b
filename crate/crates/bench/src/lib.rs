//! Fixtures shared by the benchmarks.

use expmc::experiment::{gen_truth, simulate};
use expmc::{CompletionProblem, ExponentialFamily, Matrix, ParameterBox, SamplingScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dense(m1: usize, m2: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(m1, m2, |_, _| rng.random_range(-1.0..1.0))
}

/// Gaussian rank-3 problem on an `m × m` grid with `n` uniform samples and
/// the oracle penalty.
pub fn gaussian_problem(m: usize, n: usize, seed: u64) -> CompletionProblem {
    let f = ExponentialFamily::gaussian(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = gen_truth(m, m, 3, 1.0, &f, &mut rng).unwrap();
    let scheme = SamplingScheme::uniform(m, m).unwrap();
    let obs = simulate(&truth.x_bar, &f, &scheme, n, false, &mut rng).unwrap();
    let p = CompletionProblem::likelihood(obs, f, ParameterBox::symmetric(1.0).unwrap(), 0.0).unwrap();
    let lambda = p.oracle_lambda(&truth.x_bar).unwrap();
    p.with_lambda(lambda).unwrap()
}
