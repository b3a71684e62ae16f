//! Iterative proportional fitting with an adjustment factor, and the outer
//! search over that factor that yields the maximum likelihood estimate.
//!
//! `IPF(γ)` cycles through the subsets in row order. Each step rescales the
//! cells of one subset so that its subset sum hits `γ A_j q`, which is the
//! Bregman projection of the current vector onto that slice. The multiplicative
//! parameter of the subset is scaled by the same factor, so `δ = θ^{A'}` holds
//! along the whole trajectory.
//!
//! For intensities, or for probabilities under a model with the overall
//! effect, `γ = 1` gives the estimate directly. Otherwise the estimate is the
//! `IPF(γ)` limit whose total is one, found by bisection (default) or by the
//! refining grid over `[γ_L, γ_R]`.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{subset_sums, CellVector, ObservedTable, Scheme};
use crate::model::{has_overall_effect, ModelMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("observed subset sum of subset {subset} is zero; the estimate does not exist")]
    ZeroSubsetSum { subset: usize },
    #[error("IPF did not converge within {} updates (max residual {:.3e})", .diagnostics.iterations, .diagnostics.max_subsetsum_residual)]
    MaxIterationsExceeded { diagnostics: Box<FitResult> },
    #[error("adjustment-factor search did not converge after {} outer steps (total {})", .diagnostics.outer_iterations, .diagnostics.total)]
    MaxOuterExceeded { diagnostics: Box<FitResult> },
    #[error("data has {found} cells, model has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl SolveError {
    /// Diagnostics of a non-converged run, if this is one.
    pub fn diagnostics(&self) -> Option<&FitResult> {
        match self {
            SolveError::MaxIterationsExceeded { diagnostics }
            | SolveError::MaxOuterExceeded { diagnostics } => Some(diagnostics),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// `|γ A_j q - A_j δ|`
    #[default]
    Absolute,
    /// `|γ A_j q - A_j δ| / (γ A_j q)`
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfOptions {
    pub eps: f64,
    /// Maximum number of single-subset updates.
    pub max_iter: usize,
    pub residual: ResidualMode,
}

impl Default for IpfOptions {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            max_iter: 1_000_000,
            residual: ResidualMode::Absolute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMethod {
    Grid,
    #[default]
    Bisection,
}

impl FromStr for GammaMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(GammaMethod::Grid),
            "bisection" => Ok(GammaMethod::Bisection),
            other => Err(format!("unknown gamma method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GipfOptions {
    /// Inner options. `eps` is also the tolerance on `|1·p̂ - 1|`.
    pub ipf: IpfOptions,
    pub method: GammaMethod,
    /// Bisection halvings, or the largest grid resolution `T`.
    pub max_outer: usize,
}

impl Default for GipfOptions {
    fn default() -> Self {
        Self {
            ipf: IpfOptions::default(),
            method: GammaMethod::Bisection,
            max_outer: 200,
        }
    }
}

/// Estimated cells, multiplicative parameters and adjustment factor, with
/// convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub delta_hat: CellVector,
    pub theta_hat: Vec<f64>,
    pub gamma_hat: f64,
    /// Single-subset updates of the final IPF run.
    pub iterations: usize,
    /// Updates summed over every IPF run of the fit.
    pub total_iterations: usize,
    /// Adjustment factors tried (bisection) or final grid resolution (grid);
    /// zero when no search was needed.
    pub outer_iterations: usize,
    pub converged: bool,
    /// `max_j |A_j δ̂ - γ̂ A_j q|`
    pub max_subsetsum_residual: f64,
    /// `1·δ̂`
    pub total: f64,
}

/// Endpoints of the adjustment-factor search interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBracket {
    pub gamma_l: f64,
    pub gamma_r: f64,
}

impl GammaBracket {
    pub fn contains(&self, gamma: f64) -> bool {
        self.gamma_l <= gamma && gamma <= self.gamma_r
    }

    pub fn width(&self) -> f64 {
        self.gamma_r - self.gamma_l
    }
}

/// `γ_L = 1 / (1·A q)`, `γ_R = min_j 1 / (A_j q)`.
///
/// With every column of `A` non-empty, the `IPF(γ_L)` limit has total at most
/// one and the `IPF(γ_R)` limit total at least one.
pub fn gamma_bracket(a: &ModelMatrix, q: &[f64]) -> Result<GammaBracket, SolveError> {
    let aq = target_sums(a, q)?;
    let gamma_l = 1.0 / aq.iter().sum::<f64>();
    let gamma_r = aq.iter().map(|s| 1.0 / s).fold(f64::INFINITY, f64::min);
    Ok(GammaBracket { gamma_l, gamma_r })
}

/// One IPF step, viewed from outside: the vector before and after the
/// projection onto subset `subset`, and the parameters after it.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    /// 1-based step counter `d + 1`.
    pub step: usize,
    pub subset: usize,
    pub gamma: f64,
    /// `γ A_j q` for the updated subset.
    pub target: f64,
    pub before: &'a [f64],
    pub after: &'a [f64],
    pub log_theta: &'a [f64],
}

fn target_sums(a: &ModelMatrix, q: &[f64]) -> Result<Vec<f64>, SolveError> {
    if q.len() != a.ncells() {
        return Err(SolveError::LengthMismatch {
            expected: a.ncells(),
            found: q.len(),
        });
    }
    if let Some(i) = q.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(SolveError::InvalidParameter(format!(
            "q[{i}] = {} is not a nonnegative number",
            q[i]
        )));
    }
    let aq = subset_sums(a, q).expect("length checked");
    match aq.iter().position(|&s| s.is_nan() || s <= 0.0) {
        Some(j) => Err(SolveError::ZeroSubsetSum { subset: j }),
        None => Ok(aq),
    }
}

/// Lowest-index cell of subset `j`.
fn anchor_cell(a: &ModelMatrix, j: usize) -> usize {
    a.support(j).next().expect("validated rows are non-empty")
}

/// Rescales subset `j` of `delta` in place to hit `target`; returns the
/// log of the change of `θ_j`, read off the anchor cell.
fn project_onto_subset(a: &ModelMatrix, delta: &mut [f64], j: usize, target: f64) -> f64 {
    let current: f64 = a.support(j).map(|i| delta[i]).sum();
    let factor = target / current;
    let anchor = anchor_cell(a, j);
    let old_anchor = delta[anchor];
    for i in a.support(j) {
        delta[i] *= factor;
    }
    (delta[anchor] / old_anchor).ln()
}

/// A single `IPF(γ)` update on subset `j`; returns the new cells and
/// parameters. Cells outside `S_j` and parameters other than `θ_j` are
/// unchanged.
pub fn ipf_update(
    delta: &CellVector,
    theta: &[f64],
    a: &ModelMatrix,
    q: &[f64],
    gamma: f64,
    j: usize,
) -> Result<(CellVector, Vec<f64>), SolveError> {
    if j >= a.nsubsets() {
        return Err(SolveError::InvalidParameter(format!(
            "subset index {j} out of range"
        )));
    }
    if delta.len() != a.ncells() || theta.len() != a.nsubsets() {
        return Err(SolveError::LengthMismatch {
            expected: a.ncells(),
            found: delta.len(),
        });
    }
    let aq = target_sums(a, q)?;
    let mut next = delta.clone();
    let log_ratio = project_onto_subset(a, next.values_mut(), j, gamma * aq[j]);
    let mut theta_next = theta.to_vec();
    theta_next[j] = (theta[j].ln() + log_ratio).exp();
    Ok((next, theta_next))
}

fn residual(a: &ModelMatrix, delta: &[f64], targets: &[f64], mode: ResidualMode) -> f64 {
    (0..a.nsubsets())
        .map(|j| {
            let s: f64 = a.support(j).map(|i| delta[i]).sum();
            let r = (targets[j] - s).abs();
            match mode {
                ResidualMode::Absolute => r,
                ResidualMode::Relative => r / targets[j],
            }
        })
        .fold(0.0, f64::max)
}

fn check_ipf_args(gamma: f64, opts: &IpfOptions) -> Result<(), SolveError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(SolveError::InvalidParameter(format!(
            "gamma = {gamma} must be positive"
        )));
    }
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(SolveError::InvalidParameter(format!(
            "eps = {} must be positive",
            opts.eps
        )));
    }
    Ok(())
}

/// `IPF(γ, ε)` from `δ = 1`, `θ = 1`.
pub fn ipf_gamma(
    a: &ModelMatrix,
    q: &[f64],
    gamma: f64,
    opts: &IpfOptions,
) -> Result<FitResult, SolveError> {
    ipf_gamma_observed(a, q, gamma, opts, |_| {})
}

/// [`ipf_gamma`] that reports every update to `observer`.
pub fn ipf_gamma_observed<F>(
    a: &ModelMatrix,
    q: &[f64],
    gamma: f64,
    opts: &IpfOptions,
    mut observer: F,
) -> Result<FitResult, SolveError>
where
    F: FnMut(StepRecord<'_>),
{
    check_ipf_args(gamma, opts)?;
    let aq = target_sums(a, q)?;
    let targets: Vec<f64> = aq.iter().map(|s| gamma * s).collect();
    let nsub = a.nsubsets();

    let mut delta = vec![1.0; a.ncells()];
    let mut before = delta.clone();
    let mut log_theta = vec![0.0; nsub];
    let mut converged = false;
    let mut steps = 0;

    while steps < opts.max_iter {
        let j = steps % nsub;
        before.copy_from_slice(&delta);
        log_theta[j] += project_onto_subset(a, &mut delta, j, targets[j]);
        steps += 1;
        observer(StepRecord {
            step: steps,
            subset: j,
            gamma,
            target: targets[j],
            before: &before,
            after: &delta,
            log_theta: &log_theta,
        });
        let r = residual(a, &delta, &targets, opts.residual);
        if j + 1 == nsub {
            log::trace!("ipf gamma={gamma} cycle={} residual={r:.3e}", steps / nsub);
        }
        if r <= opts.eps {
            converged = true;
            break;
        }
    }

    let result = FitResult {
        max_subsetsum_residual: residual(a, &delta, &targets, ResidualMode::Absolute),
        total: delta.iter().sum(),
        delta_hat: CellVector::new(delta).expect("IPF keeps cells positive"),
        theta_hat: log_theta.iter().map(|l| l.exp()).collect(),
        gamma_hat: gamma,
        iterations: steps,
        total_iterations: steps,
        outer_iterations: 0,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(SolveError::MaxIterationsExceeded {
            diagnostics: Box::new(result),
        })
    }
}

/// Maximum likelihood estimate under the relational model.
///
/// Poisson data: `IPF(1, ε)`. Multinomial data: `IPF(1, ε)` when the model has
/// the overall effect (then `γ̂ = 1` exactly) or when its total is within `ε`
/// of one; otherwise a search over `γ ∈ [γ_L, γ_R]` for an `IPF(γ)` limit
/// with `|1·p - 1| < ε`.
pub fn gipf(
    a: &ModelMatrix,
    observed: &ObservedTable,
    opts: &GipfOptions,
) -> Result<FitResult, SolveError> {
    let q = observed.q();
    let first = ipf_gamma(a, &q, 1.0, &opts.ipf)?;
    if observed.scheme() == Scheme::Poisson
        || (first.total - 1.0).abs() < opts.ipf.eps
        || has_overall_effect(a)
    {
        return Ok(first);
    }
    let bracket = gamma_bracket(a, &q)?;
    log::info!(
        "total at gamma=1 is {}; searching [{}, {}]",
        first.total,
        bracket.gamma_l,
        bracket.gamma_r
    );
    let spent = first.total_iterations;
    let mut fit = match opts.method {
        GammaMethod::Bisection => bisect(a, &q, bracket, opts),
        GammaMethod::Grid => grid(a, &q, bracket, opts),
    }?;
    fit.total_iterations += spent;
    Ok(fit)
}

fn bisect(
    a: &ModelMatrix,
    q: &[f64],
    bracket: GammaBracket,
    opts: &GipfOptions,
) -> Result<FitResult, SolveError> {
    let eps = opts.ipf.eps;
    let inner = IpfOptions {
        eps: eps / 10.0,
        ..opts.ipf
    };
    // Totals carry inner solver error; a monotonicity violation must exceed it.
    let slack = 10.0 * eps * a.nsubsets() as f64;
    let (mut lo, mut hi) = (bracket.gamma_l, bracket.gamma_r);
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut spent = 0;
    let mut last: Option<FitResult> = None;

    for k in 1..=opts.max_outer {
        let mid = 0.5 * (lo + hi);
        let mut fit = ipf_gamma(a, q, mid, &inner)?;
        spent += fit.iterations;
        fit.outer_iterations = k;
        fit.total_iterations = spent;
        log::info!("bisection step {k}: gamma={mid} total={}", fit.total);

        let violates = history.iter().any(|&(g, t)| {
            (g < mid && t > fit.total + slack) || (g > mid && t < fit.total - slack)
        });
        if violates {
            log::warn!("total is not monotone in gamma near {mid}; falling back to grid search");
            let mut fit = grid(a, q, bracket, opts)?;
            fit.total_iterations += spent;
            return Ok(fit);
        }
        history.push((mid, fit.total));

        if (fit.total - 1.0).abs() < eps {
            return Ok(fit);
        }
        if fit.total < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        last = Some(fit);
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let mut diagnostics = last.expect("at least one outer step");
    diagnostics.converged = false;
    Err(SolveError::MaxOuterExceeded {
        diagnostics: Box::new(diagnostics),
    })
}

fn grid(
    a: &ModelMatrix,
    q: &[f64],
    bracket: GammaBracket,
    opts: &GipfOptions,
) -> Result<FitResult, SolveError> {
    let eps = opts.ipf.eps;
    let mut spent = 0;
    let mut closest: Option<FitResult> = None;

    for resolution in 1..=opts.max_outer {
        let inner = IpfOptions {
            eps: eps / resolution as f64,
            ..opts.ipf
        };
        let fits: Vec<Result<FitResult, SolveError>> = (0..=resolution)
            .into_par_iter()
            .map(|t| {
                let gamma = bracket.gamma_l + (t as f64 / resolution as f64) * bracket.width();
                ipf_gamma(a, q, gamma, &inner)
            })
            .collect();
        log::info!("grid resolution {resolution} evaluated");
        for fit in fits {
            let mut fit = fit?;
            spent += fit.iterations;
            if (fit.total - 1.0).abs() < eps {
                fit.outer_iterations = resolution;
                fit.total_iterations = spent;
                return Ok(fit);
            }
            let better = closest
                .as_ref()
                .is_none_or(|c| (fit.total - 1.0).abs() < (c.total - 1.0).abs());
            if better {
                closest = Some(fit);
            }
        }
    }
    let mut diagnostics = closest.expect("at least one grid point");
    diagnostics.converged = false;
    diagnostics.outer_iterations = opts.max_outer;
    diagnostics.total_iterations = spent;
    Err(SolveError::MaxOuterExceeded {
        diagnostics: Box::new(diagnostics),
    })
}
