//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Minimizes, for predictors `X` (features x samples) and targets `y`,
//!
//! ```text
//! f(b) = 1/(2N) |y - b X|^2 + lambda |b|_1
//! ```
//!
//! The solver works on the covariance form (`G = X X^T / N`, `c = X y / N`), so
//! one Gram matrix serves every output row, every lambda on a path, and the
//! streaming accumulation used when fitting long excitation records. After each
//! round of sweeps the iterate takes projected Newton steps within its sign
//! orthant. On nearly singular designs at tiny lambda (noise-free lagged ARX
//! regressors are the usual case) both stall, so after a few rounds an
//! interior-point solve supplies a starting point close to the optimum, which
//! the same sweeps then finish and certify against the KKT conditions.
//!
//! With `standardize` on, every feature is scaled to unit mean square (no
//! centering, there is no intercept). Lambda, the objective value and the KKT
//! residual then refer to the scaled problem, while coefficients are always
//! reported in the original units.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, NotConverged, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub standardize: bool,
    pub max_sweeps: usize,
    /// Bound on the KKT residual accepted as converged.
    pub tolerance: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            standardize: true,
            max_sweeps: 100_000,
            tolerance: 1e-7,
        }
    }
}

/// A single-target lasso instance. Columns of `predictors` are samples.
#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub predictors: &'a DMatrix<f64>,
    pub targets: &'a DVector<f64>,
    pub lambda: f64,
    pub options: LassoOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub lambda: f64,
    /// Coefficients in the original (unscaled) feature units.
    pub coefficients: DVector<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub sweeps_used: usize,
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `X X^T / N` for a features x samples matrix.
pub fn gram_matrix(predictors: &DMatrix<f64>) -> DMatrix<f64> {
    let n = predictors.ncols().max(1) as f64;
    let mut gram = DMatrix::zeros(predictors.nrows(), predictors.nrows());
    gram.gemm(1.0 / n, predictors, &predictors.transpose(), 0.0);
    gram
}

/// Smallest lambda at which the all-zero vector solves the unscaled problem.
pub fn lambda_max(predictors: &DMatrix<f64>, targets: &DVector<f64>) -> f64 {
    let n = predictors.ncols() as f64;
    (predictors * targets / n).amax()
}

/// Maximum violation of the lasso optimality conditions for the unscaled problem.
pub fn kkt_residual(
    predictors: &DMatrix<f64>,
    targets: &DVector<f64>,
    lambda: f64,
    coefficients: &DVector<f64>,
) -> f64 {
    let n = predictors.ncols() as f64;
    let residual = targets - predictors.transpose() * coefficients;
    let corr = predictors * residual / n;
    corr.iter()
        .zip(coefficients.iter())
        .map(|(&q, &b)| kkt_violation(q, b, lambda))
        .fold(0.0, f64::max)
}

fn kkt_violation(corr: f64, coef: f64, lambda: f64) -> f64 {
    if coef == 0.0 {
        (corr.abs() - lambda).max(0.0)
    } else {
        (corr - lambda * coef.signum()).abs()
    }
}

pub fn lasso_fit(problem: &LassoProblem<'_>) -> Result<LassoSolution> {
    check_problem(problem.predictors, problem.targets, problem.lambda, &problem.options)?;
    let design = Design::new(problem.predictors, problem.options.standardize);
    let target = design.target(problem.predictors, problem.targets);
    design.fit(&target, problem.lambda, None, &problem.options)
}

/// Solves every lambda of a descending grid, warm-starting each from its predecessor.
pub fn lasso_path(
    predictors: &DMatrix<f64>,
    targets: &DVector<f64>,
    grid: &[f64],
    options: &LassoOptions,
) -> Result<Vec<LassoSolution>> {
    for &lambda in grid {
        check_problem(predictors, targets, lambda, options)?;
    }
    let design = Design::new(predictors, options.standardize);
    let target = design.target(predictors, targets);
    design.path(&target, grid, options)
}

fn check_problem(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &LassoOptions) -> Result<()> {
    if x.ncols() == 0 {
        return Err(Error::InvalidArgument("lasso needs at least one sample".into()));
    }
    if x.ncols() != y.len() {
        return Err(Error::Dimension(format!(
            "{} samples in predictors but {} targets",
            x.ncols(),
            y.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite data".into()));
    }
    Ok(())
}

/// Sufficient statistics of one target against a [`Design`].
#[derive(Debug, Clone)]
pub struct Target {
    /// `X y / N`, scaled like the design.
    xty: DVector<f64>,
    /// `y . y / N`.
    yty: f64,
}

impl Target {
    pub fn lambda_max(&self) -> f64 {
        self.xty.amax()
    }
}

/// Scaled Gram matrix of a predictor set, shareable across targets and lambdas.
#[derive(Debug, Clone)]
pub struct Design {
    gram: DMatrix<f64>,
    /// Per-feature divisor taking original units to scaled units; zero marks a dead feature.
    scale: DVector<f64>,
    n_samples: usize,
}

impl Design {
    pub fn new(predictors: &DMatrix<f64>, standardize: bool) -> Self {
        Self::from_gram(gram_matrix(predictors), predictors.ncols(), standardize)
    }

    /// Build from an already-normalized Gram matrix `X X^T / N`.
    pub fn from_gram(mut gram: DMatrix<f64>, n_samples: usize, standardize: bool) -> Self {
        let f = gram.nrows();
        let scale = DVector::from_fn(f, |j, _| {
            let d = gram[(j, j)];
            if d <= 0.0 {
                0.0
            } else if standardize {
                d.sqrt()
            } else {
                1.0
            }
        });
        for k in 0..f {
            for j in 0..f {
                let s = scale[j] * scale[k];
                gram[(j, k)] = if s > 0.0 { gram[(j, k)] / s } else { 0.0 };
            }
        }
        Design { gram, scale, n_samples }
    }

    pub fn features(&self) -> usize {
        self.gram.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn target(&self, predictors: &DMatrix<f64>, targets: &DVector<f64>) -> Target {
        let n = self.n_samples as f64;
        self.target_from_moments(predictors * targets / n, targets.norm_squared() / n)
    }

    /// Build from unscaled moments `X y / N` and `y . y / N`.
    pub fn target_from_moments(&self, mut xty: DVector<f64>, yty: f64) -> Target {
        for (v, &s) in xty.iter_mut().zip(self.scale.iter()) {
            *v = if s > 0.0 { *v / s } else { 0.0 };
        }
        Target { xty, yty }
    }

    fn to_scaled(&self, coefficients: &DVector<f64>) -> DVector<f64> {
        coefficients.component_mul(&self.scale)
    }

    fn to_original(&self, scaled: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(scaled.len(), |j, _| {
            let s = self.scale[j];
            if s > 0.0 {
                scaled[j] / s
            } else {
                0.0
            }
        })
    }

    /// Solve at one lambda; `warm` is a starting point in original units.
    pub fn fit(
        &self,
        target: &Target,
        lambda: f64,
        warm: Option<&DVector<f64>>,
        options: &LassoOptions,
    ) -> Result<LassoSolution> {
        if target.xty.len() != self.features() {
            return Err(Error::Dimension("target does not match design".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let start = match warm {
            Some(w) if w.len() == self.features() => self.to_scaled(w),
            Some(_) => return Err(Error::Dimension("warm start length".into())),
            None => DVector::zeros(self.features()),
        };
        let mut solver = Solver::new(self, target, lambda, start);
        let converged = solver.run(options);
        let coefficients = self.to_original(&solver.beta);
        if !converged {
            return Err(Error::NotConverged(Box::new(NotConverged {
                lambda,
                coefficients,
                kkt_residual: solver.kkt,
                sweeps: solver.sweeps,
            })));
        }
        Ok(LassoSolution {
            lambda,
            objective_value: solver.objective(),
            kkt_residual: solver.kkt,
            sweeps_used: solver.sweeps,
            coefficients,
        })
    }

    pub fn path(&self, target: &Target, grid: &[f64], options: &LassoOptions) -> Result<Vec<LassoSolution>> {
        if grid.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("lambda grid must be sorted descending".into()));
        }
        let mut out: Vec<LassoSolution> = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let warm = out.last().map(|s| &s.coefficients);
            let sol = self.fit(target, lambda, warm, options)?;
            out.push(sol);
        }
        Ok(out)
    }
}

/// Coordinate-descent state in scaled units.
struct Solver<'a> {
    gram: &'a DMatrix<f64>,
    xty: &'a DVector<f64>,
    yty: f64,
    lambda: f64,
    beta: DVector<f64>,
    /// `c - G beta`, the negative gradient of the smooth part.
    corr: DVector<f64>,
    live: Vec<usize>,
    kkt: f64,
    sweeps: usize,
}

const ACTIVE_SWEEPS: usize = 64;
const NEWTON_STEPS: usize = 50;
/// Newton steps allowed without a new best KKT residual.
const NEWTON_STALL: usize = 2;
/// Initial and smallest ridge on the free Gram block, relative to its mean diagonal.
const NEWTON_DAMPING: f64 = 1e-8;
const NEWTON_DAMPING_MIN: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
/// Relative size of a decrease that floating-point rounding could fake.
const ROUNDING: f64 = 64.0 * f64::EPSILON;
/// Rounds of coordinate descent before switching to the interior-point method.
const INTERIOR_AFTER_ROUNDS: usize = 8;
const INTERIOR_STEPS: usize = 200;
/// Target duality gap and dual residual, relative to the KKT tolerance.
const INTERIOR_GAP: f64 = 1e-3;

impl<'a> Solver<'a> {
    fn new(design: &'a Design, target: &'a Target, lambda: f64, mut beta: DVector<f64>) -> Self {
        let live: Vec<usize> = (0..design.features()).filter(|&j| design.scale[j] > 0.0).collect();
        for j in 0..beta.len() {
            if design.scale[j] == 0.0 {
                beta[j] = 0.0;
            }
        }
        let mut s = Solver {
            gram: &design.gram,
            xty: &target.xty,
            yty: target.yty,
            lambda,
            corr: DVector::zeros(beta.len()),
            beta,
            live,
            kkt: f64::INFINITY,
            sweeps: 0,
        };
        s.refresh_corr();
        s
    }

    fn refresh_corr(&mut self) {
        let mut corr = self.xty.clone();
        let f = self.beta.len();
        let g = self.gram.as_slice();
        for (k, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                let col = &g[k * f..(k + 1) * f];
                for (c, &gk) in corr.iter_mut().zip(col) {
                    *c -= gk * b;
                }
            }
        }
        self.corr = corr;
    }

    fn objective(&self) -> f64 {
        self.raw_objective().max(0.0)
    }

    /// Objective from the moments; can dip below zero by rounding.
    fn raw_objective(&self) -> f64 {
        let fit = 0.5 * self.yty - 0.5 * self.beta.dot(self.xty) - 0.5 * self.beta.dot(&self.corr);
        fit + self.lambda * self.beta.lp_norm(1)
    }

    /// Rounding-error bound of [`Self::raw_objective`] at the current iterate.
    fn objective_noise(&self) -> f64 {
        let b = self.beta.abs();
        ROUNDING * (self.yty + b.dot(&(self.gram.abs() * &b)) + 2.0 * b.dot(&self.xty.abs()))
    }

    fn compute_kkt(&self) -> f64 {
        self.live
            .iter()
            .map(|&j| kkt_violation(self.corr[j], self.beta[j], self.lambda))
            .fold(0.0, f64::max)
    }

    /// One cyclic pass over `indices`; returns the largest scaled coordinate move.
    fn pass(&mut self, indices: &[usize]) -> f64 {
        let f = self.beta.len();
        let g = self.gram.as_slice();
        let mut biggest = 0.0f64;
        for &j in indices {
            let gjj = g[j * f + j];
            let old = self.beta[j];
            let new = soft_threshold(self.corr[j] + gjj * old, self.lambda) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                let col = &g[j * f..(j + 1) * f];
                for (c, &gj) in self.corr.iter_mut().zip(col) {
                    *c -= gj * delta;
                }
                self.beta[j] = new;
                biggest = biggest.max(delta.abs() * gjj.sqrt());
            }
        }
        biggest
    }

    fn active(&self) -> Vec<usize> {
        self.live.iter().copied().filter(|&j| self.beta[j] != 0.0).collect()
    }

    /// Projected Newton steps. The free set holds the nonzero coefficients and
    /// the zeros whose correlation exceeds lambda; on it the objective is a
    /// quadratic within a fixed sign orthant. The damped Newton step is projected
    /// back onto that orthant (sign crossings become zeros) and backtracked until
    /// it gives sufficient decrease beyond rounding noise. The damping adapts
    /// between steps, and polishing stops once the KKT residual stalls.
    fn newton_polish(&mut self, tol: f64, max_sweeps: usize) {
        let f = self.beta.len();
        let mut damping = NEWTON_DAMPING;
        let (mut best, mut stale) = (f64::INFINITY, 0);
        for _ in 0..NEWTON_STEPS {
            let kkt = self.compute_kkt();
            if self.sweeps >= max_sweeps || kkt <= 0.5 * tol {
                return;
            }
            // on badly conditioned blocks the free set can churn without progress
            if kkt < best {
                (best, stale) = (kkt, 0);
            } else {
                stale += 1;
                if stale >= NEWTON_STALL {
                    return;
                }
            }
            let mut free = Vec::new();
            let mut sign = Vec::new();
            for &j in &self.live {
                if self.beta[j] != 0.0 {
                    free.push(j);
                    sign.push(self.beta[j].signum());
                } else if self.corr[j].abs() > self.lambda {
                    free.push(j);
                    sign.push(self.corr[j].signum());
                }
            }
            let a = free.len();
            if a == 0 {
                return;
            }
            let grad = DVector::from_fn(a, |r, _| self.lambda * sign[r] - self.corr[free[r]]);
            let sub = DMatrix::from_fn(a, a, |r, c| self.gram[(free[r], free[c])]);
            let mean_diag = sub.trace() / a as f64;
            let mut damped = sub.clone();
            for r in 0..a {
                damped[(r, r)] += damping * mean_diag;
            }
            let Some(factor) = damped.cholesky() else {
                damping *= 100.0;
                continue;
            };
            let dir = -factor.solve(&grad);
            self.sweeps += 1;

            let sub_abs = sub.abs();
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let delta = DVector::from_fn(a, |r, _| {
                    let j = free[r];
                    let moved = self.beta[j] + step * dir[r];
                    let projected = if moved * sign[r] > 0.0 { moved } else { 0.0 };
                    projected - self.beta[j]
                });
                // Exact change of the objective for this move.
                let l1_change: f64 = free
                    .iter()
                    .zip(delta.iter())
                    .map(|(&j, &d)| (self.beta[j] + d).abs() - self.beta[j].abs())
                    .sum();
                let linear: f64 = free.iter().zip(delta.iter()).map(|(&j, &d)| -self.corr[j] * d).sum();
                let quad = delta.dot(&(&sub * &delta));
                let change = linear + 0.5 * quad + self.lambda * l1_change;
                // On nearly singular blocks a huge step can show a spurious
                // decrease that is only cancellation; demand more than rounding.
                let abs_delta = delta.abs();
                let noise = ROUNDING
                    * (abs_delta.dot(&(&sub_abs * &abs_delta))
                        + free
                            .iter()
                            .zip(abs_delta.iter())
                            .map(|(&j, &d)| self.corr[j].abs() * d)
                            .sum::<f64>()
                        + self.lambda * l1_change.abs());
                if change <= ARMIJO * grad.dot(&delta) && change < -noise {
                    accepted = Some(delta);
                    break;
                }
                step *= 0.5;
            }
            let Some(delta) = accepted else {
                damping *= 100.0;
                if damping > 1.0 {
                    return;
                }
                continue;
            };
            damping = if step == 1.0 {
                (damping * 0.1).max(NEWTON_DAMPING_MIN)
            } else {
                damping * 10.0
            };
            let g = self.gram.as_slice();
            for (&j, &d) in free.iter().zip(delta.iter()) {
                if d != 0.0 {
                    let col = &g[j * f..(j + 1) * f];
                    for (c, &gj) in self.corr.iter_mut().zip(col) {
                        *c -= gj * d;
                    }
                    let new = self.beta[j] + d;
                    self.beta[j] = if new.abs() <= f64::MIN_POSITIVE { 0.0 } else { new };
                }
            }
        }
    }

    /// Primal-dual interior point (Mehrotra predictor-corrector) on the split
    /// problem `b = x+ - x-`, `x+, x- >= 0`. Used when coordinate descent stalls on
    /// nearly singular designs, where the minimizer is close to a basis-pursuit
    /// solution. The result is rounded to a sparse vector (a coefficient survives
    /// when its primal part dominates its dual slack) and handed back for polishing.
    fn interior_point(&mut self, tol: f64) {
        let live = &self.live;
        let n = live.len();
        if n == 0 {
            return;
        }
        let g = DMatrix::from_fn(n, n, |r, c| self.gram[(live[r], live[c])]);
        let c = DVector::from_fn(n, |r, _| self.xty[live[r]]);
        let lambda = self.lambda;
        let ridge = 1e-14 * (g.trace() / n as f64).max(f64::MIN_POSITIVE);
        let ones = DVector::from_element(n, 1.0);
        let (mut xp, mut xm, mut zp, mut zm) = (ones.clone(), ones.clone(), ones.clone(), ones);

        for _ in 0..INTERIOR_STEPS {
            let w = &g * (&xp - &xm) - &c;
            let rdp = DVector::from_fn(n, |r, _| w[r] + lambda - zp[r]);
            let rdm = DVector::from_fn(n, |r, _| -w[r] + lambda - zm[r]);
            let mu = (xp.dot(&zp) + xm.dot(&zm)) / (2 * n) as f64;
            if mu <= INTERIOR_GAP * tol && rdp.amax().max(rdm.amax()) <= INTERIOR_GAP * tol {
                break;
            }
            let dp = zp.component_div(&xp);
            let dm = zm.component_div(&xm);
            let mut system = g.clone();
            for r in 0..n {
                system[(r, r)] += dp[r] * dm[r] / (dp[r] + dm[r]) + ridge;
            }
            let Some(factor) = system.cholesky() else {
                break;
            };
            // Newton direction for complementarity targets `rcp`, `rcm`.
            let solve = |rcp: &DVector<f64>, rcm: &DVector<f64>| {
                let rp = DVector::from_fn(n, |r, _| -rdp[r] + rcp[r] / xp[r]);
                let rm = DVector::from_fn(n, |r, _| -rdm[r] + rcm[r] / xm[r]);
                let sum = &rp + &rm;
                let rhs = DVector::from_fn(n, |r, _| rp[r] - dp[r] * sum[r] / (dp[r] + dm[r]));
                let db = factor.solve(&rhs);
                let dxp = DVector::from_fn(n, |r, _| (sum[r] + dm[r] * db[r]) / (dp[r] + dm[r]));
                let dxm = &dxp - &db;
                let dzp = DVector::from_fn(n, |r, _| (rcp[r] - zp[r] * dxp[r]) / xp[r]);
                let dzm = DVector::from_fn(n, |r, _| (rcm[r] - zm[r] * dxm[r]) / xm[r]);
                (dxp, dxm, dzp, dzm)
            };
            let longest = |v: &DVector<f64>, dv: &DVector<f64>| {
                v.iter()
                    .zip(dv.iter())
                    .filter(|(_, &d)| d < 0.0)
                    .map(|(&x, &d)| -x / d)
                    .fold(1.0f64, f64::min)
            };
            let step_of = |d: &(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)| {
                longest(&xp, &d.0)
                    .min(longest(&xm, &d.1))
                    .min(longest(&zp, &d.2))
                    .min(longest(&zm, &d.3))
            };

            let affine = solve(&-xp.component_mul(&zp), &-xm.component_mul(&zm));
            let a = step_of(&affine);
            let mu_aff = ((&xp + a * &affine.0).dot(&(&zp + a * &affine.2))
                + (&xm + a * &affine.1).dot(&(&zm + a * &affine.3)))
                / (2 * n) as f64;
            let sigma = (mu_aff / mu).powi(3);
            let rcp = DVector::from_fn(n, |r, _| sigma * mu - xp[r] * zp[r] - affine.0[r] * affine.2[r]);
            let rcm = DVector::from_fn(n, |r, _| sigma * mu - xm[r] * zm[r] - affine.1[r] * affine.3[r]);
            let dir = solve(&rcp, &rcm);
            let a = (0.99 * step_of(&dir)).min(1.0);
            xp += a * &dir.0;
            xm += a * &dir.1;
            zp += a * &dir.2;
            zm += a * &dir.3;
            self.sweeps += 1;
        }

        let (before, saved) = (self.raw_objective(), self.beta.clone());
        let saved_noise = self.objective_noise();
        for (r, &j) in live.iter().enumerate() {
            self.beta[j] = if xp[r] > zp[r] || xm[r] > zm[r] {
                xp[r] - xm[r]
            } else {
                0.0
            };
        }
        self.refresh_corr();
        // an interior point stopped early can land far from the optimum
        if !(self.raw_objective() < before - saved_noise - self.objective_noise()) {
            self.beta = saved;
            self.refresh_corr();
        }
    }

    fn run(&mut self, opts: &LassoOptions) -> bool {
        let live = self.live.clone();
        let mut rounds = 0usize;
        loop {
            self.pass(&live);
            self.sweeps += 1;
            if self.check(opts.tolerance) {
                return true;
            }
            let active = self.active();
            for _ in 0..ACTIVE_SWEEPS {
                if self.sweeps >= opts.max_sweeps {
                    break;
                }
                let moved = self.pass(&active);
                self.sweeps += 1;
                if moved < 0.1 * opts.tolerance {
                    break;
                }
            }
            self.newton_polish(opts.tolerance, opts.max_sweeps);
            if self.check(opts.tolerance) {
                return true;
            }
            rounds += 1;
            if rounds == INTERIOR_AFTER_ROUNDS && self.sweeps < opts.max_sweeps {
                self.interior_point(opts.tolerance);
            }
            if rounds.is_multiple_of(16) {
                self.refresh_corr();
            }
            if self.sweeps >= opts.max_sweeps {
                self.refresh_corr();
                self.kkt = self.compute_kkt();
                return self.kkt <= opts.tolerance;
            }
        }
    }

    /// KKT test; a passing incremental residual is confirmed against a fresh one.
    fn check(&mut self, tol: f64) -> bool {
        self.kkt = self.compute_kkt();
        if self.kkt <= tol {
            self.refresh_corr();
            self.kkt = self.compute_kkt();
        }
        self.kkt <= tol
    }
}

/// Unregularized least squares of several target rows on shared predictors.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    /// Rows match the target rows; columns match the predictor features.
    pub coefficients: DMatrix<f64>,
    pub rank: usize,
    /// False when the minimum-norm solution of a rank-deficient system was returned.
    pub full_rank: bool,
}

/// Minimum-norm least-squares fit of `targets` (rows x samples) on `predictors`
/// (features x samples), computed from an SVD of the sample-major design.
pub fn least_squares(predictors: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LeastSquaresFit> {
    if predictors.ncols() != targets.ncols() {
        return Err(Error::Dimension(format!(
            "{} samples in predictors but {} in targets",
            predictors.ncols(),
            targets.ncols()
        )));
    }
    let features = predictors.nrows();
    let svd = predictors.transpose().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = sigma_max * (predictors.ncols().max(features) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let solution = svd
        .solve(&targets.transpose(), eps)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(LeastSquaresFit {
        coefficients: solution.transpose(),
        rank,
        full_rank: rank == features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, features: usize, samples: usize) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(features, samples, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(samples, |_, _| rng.random_range(-1.0..1.0));
        (x, y)
    }

    fn raw_options() -> LassoOptions {
        LassoOptions {
            standardize: false,
            ..LassoOptions::default()
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
    }

    #[test]
    fn above_lambda_max_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = random_problem(&mut rng, 8, 40);
        let lmax = lambda_max(&x, &y);
        let sol = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &y,
            lambda: lmax,
            options: raw_options(),
        })
        .unwrap();
        assert!(sol.coefficients.iter().all(|&b| b == 0.0));
        assert_eq!(kkt_residual(&x, &y, lmax, &DVector::zeros(8)), 0.0);
    }

    #[test]
    fn single_predictor_closed_form_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = random_problem(&mut rng, 1, 25);
        let n = 25.0;
        let lambda = 0.05;
        let xy = x.row(0).dot(&y.transpose()) / n;
        let xx = x.row(0).norm_squared() / n;
        let closed = soft_threshold(xy, lambda) / xx;

        // brute force over a fine grid around the closed form
        let objective = |b: f64| {
            let r = &y - x.row(0).transpose() * b;
            r.norm_squared() / (2.0 * n) + lambda * b.abs()
        };
        let (mut best_b, mut best_f) = (0.0, objective(0.0));
        for k in -20_000..=20_000 {
            let b = k as f64 * 1e-4;
            let f = objective(b);
            if f < best_f {
                best_f = f;
                best_b = b;
            }
        }
        assert!((closed - best_b).abs() < 2e-4);

        let sol = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &y,
            lambda,
            options: raw_options(),
        })
        .unwrap();
        assert!((sol.coefficients[0] - closed).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_rows_at_zero_lambda_give_least_squares() {
        // rows orthogonal with unit Gram: X X^T / N = I
        let n = 4usize;
        let x = DMatrix::from_row_slice(2, n, &[1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let y = DVector::from_vec(vec![3.0, 1.0, -2.0, 0.5]);
        let sol = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &y,
            lambda: 0.0,
            options: raw_options(),
        })
        .unwrap();
        let ols = &x * &y / n as f64;
        assert!((sol.coefficients - ols).amax() < 1e-12);
    }

    #[test]
    fn warm_path_matches_cold_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = random_problem(&mut rng, 10, 50);
        let lmax = lambda_max(&x, &y);
        let grid: Vec<f64> = (0..12).map(|k| lmax * 0.6f64.powi(k)).collect();
        let path = lasso_path(&x, &y, &grid, &raw_options()).unwrap();
        assert!(path[0].coefficients.iter().all(|&b| b == 0.0));
        let mut prev_l1 = 0.0;
        for sol in &path {
            let cold = lasso_fit(&LassoProblem {
                predictors: &x,
                targets: &y,
                lambda: sol.lambda,
                options: raw_options(),
            })
            .unwrap();
            assert!((cold.objective_value - sol.objective_value).abs() < 1e-8);
            let l1 = sol.coefficients.lp_norm(1);
            assert!(l1 >= prev_l1 - 1e-9);
            prev_l1 = l1;
        }
    }

    #[test]
    fn ascending_grid_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = random_problem(&mut rng, 3, 10);
        assert!(matches!(
            lasso_path(&x, &y, &[0.1, 0.2], &raw_options()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn perturbing_solution_increases_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_problem(&mut rng, 6, 30);
        let lambda = 0.2 * lambda_max(&x, &y);
        let sol = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &y,
            lambda,
            options: raw_options(),
        })
        .unwrap();
        let base = kkt_residual(&x, &y, lambda, &sol.coefficients);
        assert!(base <= 1e-7);
        let j = sol.coefficients.iter().position(|&b| b != 0.0).unwrap();
        let mut moved = sol.coefficients.clone();
        moved[j] += 0.1;
        assert!(kkt_residual(&x, &y, lambda, &moved) > base);
    }

    #[test]
    fn zero_variance_feature_gets_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut x, y) = random_problem(&mut rng, 4, 20);
        x.row_mut(2).fill(0.0);
        for standardize in [true, false] {
            let sol = lasso_fit(&LassoProblem {
                predictors: &x,
                targets: &y,
                lambda: 1e-3,
                options: LassoOptions {
                    standardize,
                    ..LassoOptions::default()
                },
            })
            .unwrap();
            assert_eq!(sol.coefficients[2], 0.0);
        }
    }

    #[test]
    fn standardized_fit_solves_the_prescaled_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut x, y) = random_problem(&mut rng, 5, 30);
        for (r, s) in [1.0, 30.0, 0.01, 4.0, 1e3].iter().enumerate() {
            x.row_mut(r).scale_mut(*s);
        }
        let lambda = 0.01;
        let std = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &y,
            lambda,
            options: LassoOptions::default(),
        })
        .unwrap();
        let rms: Vec<f64> = (0..5).map(|r| (x.row(r).norm_squared() / 30.0).sqrt()).collect();
        let mut scaled = x.clone();
        for (r, s) in rms.iter().enumerate() {
            scaled.row_mut(r).unscale_mut(*s);
        }
        let raw = lasso_fit(&LassoProblem {
            predictors: &scaled,
            targets: &y,
            lambda,
            options: raw_options(),
        })
        .unwrap();
        for (r, scale) in rms.iter().enumerate().take(5) {
            assert!((std.coefficients[r] * scale - raw.coefficients[r]).abs() < 1e-7);
        }
        assert!((std.objective_value - raw.objective_value).abs() < 1e-10);
    }

    #[test]
    fn exhausted_budget_reports_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = random_problem(&mut rng, 20, 25);
        let err = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &y,
            lambda: 1e-4,
            options: LassoOptions {
                standardize: false,
                max_sweeps: 1,
                tolerance: 1e-14,
            },
        })
        .unwrap_err();
        match err {
            Error::NotConverged(nc) => {
                assert_eq!(nc.coefficients.len(), 20);
                assert!(nc.kkt_residual > 1e-14);
                assert!((nc.lambda - 1e-4).abs() < 1e-18);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collinear_lagged_design_converges() {
        // noise-free first-order system regressed on many lags: the Gram matrix
        // is singular to working precision
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 3000;
        let lags = 30;
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; n];
        for k in 1..n {
            y[k] = 0.97 * y[k - 1] + 0.3 * u[k - 1];
        }
        let samples = n - lags;
        let x = DMatrix::from_fn(2 * lags, samples, |r, c| {
            let k = c + lags;
            let lag = r / 2 + 1;
            if r % 2 == 0 {
                y[k - lag]
            } else {
                u[k - lag]
            }
        });
        let t = DVector::from_fn(samples, |c, _| y[c + lags]);
        let sol = lasso_fit(&LassoProblem {
            predictors: &x,
            targets: &t,
            lambda: 1e-7,
            options: raw_options(),
        })
        .unwrap();
        assert!(sol.kkt_residual <= 1e-7);
        assert!(kkt_residual(&x, &t, 1e-7, &sol.coefficients) <= 1e-7);
    }

    #[test]
    fn least_squares_flags_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut x, _) = random_problem(&mut rng, 4, 30);
        let copy = x.row(0).clone_owned();
        x.row_mut(3).copy_from(&copy);
        let y = DMatrix::from_fn(1, 30, |_, _| rng.random_range(-1.0..1.0));
        let fit = least_squares(&x, &y).unwrap();
        assert_eq!(fit.rank, 3);
        assert!(!fit.full_rank);
        // minimum norm splits the duplicated feature evenly
        assert!((fit.coefficients[(0, 0)] - fit.coefficients[(0, 3)]).abs() < 1e-9);
    }
}
