#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(1/2N) |y - X^T b|^2 + lambda |b|_1` with `X` stored features x samples.
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, b: &DVector<f64>) -> f64 {
    let r = y - x.transpose() * b;
    r.norm_squared() / (2.0 * x.ncols() as f64) + lambda * b.lp_norm(1)
}

/// Exact lasso minimum by enumerating every sign pattern in {-1, 0, +1}^p.
///
/// For a pattern `s` with support `S` the stationarity condition on `S` is
/// linear, `G_S b_S = c_S - lambda s_S`. A pattern is admissible when that
/// solution carries exactly the signs `s`. The optimum's own pattern is always
/// admissible, so the smallest admissible objective is the global minimum.
pub fn lasso_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (f64, DVector<f64>) {
    let p = x.nrows();
    let n = x.ncols() as f64;
    let gram = x * x.transpose() / n;
    let corr = x * y / n;
    let mut best = (lasso_objective(x, y, lambda, &DVector::zeros(p)), DVector::zeros(p));
    for code in 0..3usize.pow(p as u32) {
        let signs: Vec<f64> = (0..p).map(|j| (code / 3usize.pow(j as u32) % 3) as f64 - 1.0).collect();
        let support: Vec<usize> = (0..p).filter(|&j| signs[j] != 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let k = support.len();
        let g = DMatrix::from_fn(k, k, |a, b| gram[(support[a], support[b])]);
        let rhs = DVector::from_fn(k, |a, _| corr[support[a]] - lambda * signs[support[a]]);
        let Some(sol) = g.clone().cholesky().map(|c| c.solve(&rhs)) else {
            continue;
        };
        if support.iter().zip(sol.iter()).any(|(&j, &v)| v * signs[j] <= 0.0) {
            continue;
        }
        let mut b = DVector::zeros(p);
        for (&j, &v) in support.iter().zip(sol.iter()) {
            b[j] = v;
        }
        let obj = lasso_objective(x, y, lambda, &b);
        if obj < best.0 {
            best = (obj, b);
        }
    }
    best
}

/// Random small lasso instance: up to 6 features, up to 30 samples, lambda
/// log-uniform between 1e-3 and 1.2 times lambda_max.
pub fn random_lasso_instance(seed: u64) -> (DMatrix<f64>, DVector<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=6);
    let n = rng.random_range(p.max(2)..=30);
    let x = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0) * 2.0);
    let truth = DVector::from_fn(p, |_, _| {
        if rng.random_bool(0.5) {
            rng.random_range(-2.0..2.0)
        } else {
            0.0
        }
    });
    let y = x.transpose() * truth + DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
    let lmax = (&x * &y / n as f64).amax();
    let lambda = lmax * 10f64.powf(rng.random_range(-3.0..0.08));
    (x, y, lambda)
}
