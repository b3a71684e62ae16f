//! Reference maximum-likelihood solver for small relational models.
//!
//! Solves the likelihood equations directly with dense Newton iterations in
//! the log-linear parameters `β`, from several random starts, and refuses
//! to answer unless every start lands on the same point. It shares no code
//! with the iterative scaling solvers it is used to check.
//!
//! * Poisson: maximize `Σ y log λ - Σ λ` with `log λ = A'β`.
//! * Multinomial: maximize `Σ q log p` with `log p = A'β` subject to `1·p = 1`,
//!   by Newton on the KKT system `A q = μ A p`, `1·p = 1` in `(β, log μ)`.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use relfit::{ModelMatrix, ObservedTable, Scheme};
use thiserror::Error;

pub const MAX_CELLS: usize = 16;
pub const MAX_SUBSETS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle handles at most {MAX_SUBSETS} subsets and {MAX_CELLS} cells, got {subsets} x {cells}")]
    TooLarge { subsets: usize, cells: usize },
    #[error("data has {found} cells, model has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("subset {subset} has zero observed sum; the MLE does not exist")]
    ZeroSubsetSum { subset: usize },
    #[error(
        "only {converged} of {needed} random starts reached a KKT residual below {tolerance:e}"
    )]
    NoConvergence {
        tolerance: f64,
        converged: usize,
        needed: usize,
    },
    #[error("random starts disagree by {spread:e}")]
    RestartsDisagree { spread: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Required scaled KKT residual.
    pub tolerance: f64,
    /// Allowed spread between restarts, relative to `max(1, |δ|)`.
    pub agreement: f64,
    pub max_newton: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0x5eed,
            tolerance: 1e-10,
            agreement: 1e-7,
            max_newton: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub beta: Vec<f64>,
    pub delta_hat: Vec<f64>,
    /// Multiplier `μ` of the normalization constraint; 1 for Poisson.
    pub mu: f64,
    pub loglik: f64,
    /// Scaled KKT residual of the returned point.
    pub kkt_residual: f64,
    /// Largest coordinate spread across restarts.
    pub restart_spread: f64,
}

fn dense(a: &ModelMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.nsubsets(), a.ncells(), |j, i| f64::from(a.row(j)[i]))
}

fn cells(a: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    (a.transpose() * beta).map(f64::exp)
}

fn sum_log_weighted(w: &[f64], v: &[f64]) -> f64 {
    w.iter()
        .zip(v)
        .filter(|(&w, _)| w > 0.0)
        .map(|(w, v)| w * v.ln())
        .sum()
}

/// Log-likelihood of cell estimates `delta`, up to terms free of `delta`.
/// Poisson: `Σ y log δ - Σ δ`. Multinomial: `Σ q log δ` with `q = y / Σ y`.
pub fn loglik(observed: &ObservedTable, delta: &[f64]) -> f64 {
    let q = observed.q();
    match observed.scheme() {
        Scheme::Poisson => sum_log_weighted(&q, delta) - delta.iter().sum::<f64>(),
        Scheme::Multinomial => sum_log_weighted(&q, delta),
    }
}

/// Poisson log-likelihood as a function of `β`.
pub fn poisson_loglik(a: &ModelMatrix, y: &[f64], beta: &[f64]) -> f64 {
    let m = dense(a);
    let lambda = cells(&m, &DVector::from_column_slice(beta));
    sum_log_weighted(y, lambda.as_slice()) - lambda.sum()
}

/// `∇_β = A (y - λ)`.
pub fn poisson_gradient(a: &ModelMatrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let m = dense(a);
    let lambda = cells(&m, &DVector::from_column_slice(beta));
    (&m * (DVector::from_column_slice(y) - lambda))
        .as_slice()
        .to_vec()
}

/// Lagrangian `Σ q (A'β) - μ (1·exp(A'β) - 1)` of the multinomial problem.
pub fn lagrangian(a: &ModelMatrix, q: &[f64], beta: &[f64], mu: f64) -> f64 {
    let m = dense(a);
    let b = DVector::from_column_slice(beta);
    let eta = m.transpose() * &b;
    let p = eta.map(f64::exp);
    DVector::from_column_slice(q).dot(&eta) - mu * (p.sum() - 1.0)
}

/// Gradient of [`lagrangian`] in `(β, μ)`: `(A q - μ A p, 1 - 1·p)`.
pub fn lagrangian_gradient(a: &ModelMatrix, q: &[f64], beta: &[f64], mu: f64) -> Vec<f64> {
    let m = dense(a);
    let p = cells(&m, &DVector::from_column_slice(beta));
    let mut g = (&m * DVector::from_column_slice(q) - mu * (&m * &p))
        .as_slice()
        .to_vec();
    g.push(1.0 - p.sum());
    g
}

struct Problem {
    a: DMatrix<f64>,
    target: DVector<f64>,
    scale: f64,
}

impl Problem {
    fn new(a: &ModelMatrix, observed: &ObservedTable) -> Result<Self, OracleError> {
        let (nsub, ncells) = (a.nsubsets(), a.ncells());
        if nsub > MAX_SUBSETS || ncells > MAX_CELLS {
            return Err(OracleError::TooLarge {
                subsets: nsub,
                cells: ncells,
            });
        }
        if observed.len() != ncells {
            return Err(OracleError::LengthMismatch {
                expected: ncells,
                found: observed.len(),
            });
        }
        let m = dense(a);
        let target = &m * DVector::from_vec(observed.q());
        if let Some(j) = target.iter().position(|&s| s.is_nan() || s <= 0.0) {
            return Err(OracleError::ZeroSubsetSum { subset: j });
        }
        let scale = target.amax().max(1.0);
        Ok(Self {
            a: m,
            target,
            scale,
        })
    }

    fn poisson_residual(&self, beta: &DVector<f64>) -> f64 {
        let lambda = cells(&self.a, beta);
        (&self.target - &self.a * lambda).amax() / self.scale
    }

    /// Damped Newton ascent on the concave Poisson likelihood.
    fn poisson_newton(&self, mut beta: DVector<f64>, opts: &OracleOptions) -> Option<DVector<f64>> {
        let objective = |b: &DVector<f64>| {
            let eta = self.a.transpose() * b;
            self.target.dot(b) - eta.map(f64::exp).sum()
        };
        for _ in 0..opts.max_newton {
            if self.poisson_residual(&beta) < opts.tolerance {
                return Some(beta);
            }
            let lambda = cells(&self.a, &beta);
            let grad = &self.target - &self.a * &lambda;
            let hess = &self.a * DMatrix::from_diagonal(&lambda) * self.a.transpose();
            let step = hess.cholesky()?.solve(&grad);
            let f0 = objective(&beta);
            let slope = grad.dot(&step);
            let mut t = 1.0;
            loop {
                let trial = &beta + t * &step;
                let f = objective(&trial);
                if f.is_finite() && f >= f0 + 1e-4 * t * slope {
                    beta = trial;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    // No ascent possible: either optimal to rounding or stuck.
                    return (self.poisson_residual(&beta) < opts.tolerance).then_some(beta);
                }
            }
        }
        (self.poisson_residual(&beta) < opts.tolerance).then_some(beta)
    }

    fn kkt(&self, x: &DVector<f64>) -> DVector<f64> {
        let nsub = self.a.nrows();
        let beta = x.rows(0, nsub).into_owned();
        let mu = x[nsub].exp();
        let p = cells(&self.a, &beta);
        let mut f = DVector::zeros(nsub + 1);
        f.rows_mut(0, nsub)
            .copy_from(&(&self.target - mu * (&self.a * &p)));
        f[nsub] = p.sum() - 1.0;
        f
    }

    fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let f = self.kkt(x);
        let nsub = self.a.nrows();
        (f.rows(0, nsub).amax() / self.scale).max(f[nsub].abs())
    }

    /// Newton on the KKT system in `(β, log μ)` with a backtracking line
    /// search on `‖F‖²`.
    fn multinomial_newton(
        &self,
        mut x: DVector<f64>,
        opts: &OracleOptions,
    ) -> Option<DVector<f64>> {
        let nsub = self.a.nrows();
        for _ in 0..opts.max_newton {
            if self.kkt_residual(&x) < opts.tolerance {
                return Some(x);
            }
            let beta = x.rows(0, nsub).into_owned();
            let mu = x[nsub].exp();
            let p = cells(&self.a, &beta);
            let ap = &self.a * &p;
            let mut jac = DMatrix::zeros(nsub + 1, nsub + 1);
            jac.view_mut((0, 0), (nsub, nsub))
                .copy_from(&(-mu * (&self.a * DMatrix::from_diagonal(&p) * self.a.transpose())));
            jac.view_mut((0, nsub), (nsub, 1)).copy_from(&(-mu * &ap));
            jac.view_mut((nsub, 0), (1, nsub))
                .copy_from(&ap.transpose());
            let f = self.kkt(&x);
            let step = jac.lu().solve(&(-&f))?;
            let merit0 = f.norm_squared();
            let mut t = 1.0;
            loop {
                let trial = &x + t * &step;
                let m = self.kkt(&trial).norm_squared();
                if m.is_finite() && m <= (1.0 - 1e-4 * t) * merit0 {
                    x = trial;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return (self.kkt_residual(&x) < opts.tolerance).then_some(x);
                }
            }
        }
        (self.kkt_residual(&x) < opts.tolerance).then_some(x)
    }

    /// Random `β` with `1·exp(A'β) = 1`: perturb a common level, then shift
    /// the level by bisection until the cells sum to one. Columns are
    /// nonzero, so the sum is increasing in the level.
    fn feasible_start(&self, rng: &mut StdRng) -> DVector<f64> {
        let nsub = self.a.nrows();
        let r = DVector::from_fn(nsub, |_, _| rng.random_range(-0.5..0.5));
        let total = |b: f64| cells(&self.a, &r.add_scalar(b)).sum();
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        r.add_scalar(0.5 * (lo + hi))
    }
}

pub fn oracle_mle(a: &ModelMatrix, observed: &ObservedTable) -> Result<OracleResult, OracleError> {
    oracle_mle_with(a, observed, &OracleOptions::default())
}

pub fn oracle_mle_with(
    a: &ModelMatrix,
    observed: &ObservedTable,
    opts: &OracleOptions,
) -> Result<OracleResult, OracleError> {
    let problem = Problem::new(a, observed)?;
    let nsub = a.nsubsets();
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let mut solutions: Vec<(DVector<f64>, f64, f64)> = Vec::new();
    let mut attempts = 0;
    // Starts that stall are replaced; a few failures are tolerated.
    while solutions.len() < opts.restarts.max(1) && attempts < 4 * opts.restarts.max(1) {
        attempts += 1;
        let start = problem.feasible_start(&mut rng);
        let solved = match observed.scheme() {
            Scheme::Poisson => problem.poisson_newton(start, opts).map(|b| {
                let r = problem.poisson_residual(&b);
                (b, 1.0, r)
            }),
            Scheme::Multinomial => {
                let p = cells(&problem.a, &start);
                let ap = &problem.a * p;
                let mu = problem.target.dot(&ap) / ap.norm_squared();
                let x = start.insert_row(nsub, mu.ln());
                problem.multinomial_newton(x, opts).map(|x| {
                    let r = problem.kkt_residual(&x);
                    (x.rows(0, nsub).into_owned(), x[nsub].exp(), r)
                })
            }
        };
        if let Some(s) = solved {
            solutions.push(s);
        }
    }
    if solutions.len() < opts.restarts.max(1) {
        return Err(OracleError::NoConvergence {
            tolerance: opts.tolerance,
            converged: solutions.len(),
            needed: opts.restarts.max(1),
        });
    }

    let deltas: Vec<DVector<f64>> = solutions
        .iter()
        .map(|(b, _, _)| cells(&problem.a, b))
        .collect();
    let spread = deltas
        .iter()
        .skip(1)
        .map(|d| {
            d.iter()
                .zip(deltas[0].iter())
                .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    if spread > opts.agreement {
        return Err(OracleError::RestartsDisagree { spread });
    }

    let (beta, mu, kkt_residual) = solutions
        .into_iter()
        .min_by(|x, y| x.2.total_cmp(&y.2))
        .expect("non-empty");
    let delta_hat = cells(&problem.a, &beta).as_slice().to_vec();
    Ok(OracleResult {
        loglik: loglik(observed, &delta_hat),
        beta: beta.as_slice().to_vec(),
        delta_hat,
        mu,
        kkt_residual,
        restart_spread: spread,
    })
}
