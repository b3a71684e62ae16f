//! Classical scaling algorithms: Generalized Iterative Scaling and Improved
//! Iterative Scaling. Traditional IPF is [`crate::solvers::ipf_gamma`] with
//! `γ = 1`.
//!
//! Both algorithms here reproduce subset sums `A p = A q`. Neither has a way
//! to enforce `1·p = 1` when the model has no overall effect, and IIS then
//! converges to a vector that is not a probability distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{subset_sums, CellVector};
use crate::model::{constant_rowsum_equivalent, ModelError, ModelMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("column sums of the model matrix are not constant: {column_sums:?}")]
    RowSumNotConstant { column_sums: Vec<u32> },
    #[error("model has no overall effect, so no constant-row-sum parameterization exists")]
    NoOverallEffect,
    #[error("did not converge within {} iterations (max residual {:.3e})", .diagnostics.iterations, .diagnostics.max_subsetsum_residual)]
    MaxIterationsExceeded { diagnostics: Box<BaselineFit> },
    #[error("observed subset sum of subset {subset} is zero")]
    ZeroSubsetSum { subset: usize },
    #[error("data has {found} cells, model has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("polynomial has no positive coefficient")]
    NoPositiveCoefficient,
    #[error("target {0} must be positive and finite")]
    InvalidTarget(f64),
}

impl From<ModelError> for BaselineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NoOverallEffect => BaselineError::NoOverallEffect,
            other => {
                unreachable!("constant_rowsum_equivalent only fails with NoOverallEffect: {other}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            max_iter: 1_000_000,
        }
    }
}

/// Limit of a baseline algorithm. `p` is returned as computed, without
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    pub p: CellVector,
    pub iterations: usize,
    pub converged: bool,
    /// `max_j |A_j p - A_j q|` over the rows convergence was measured on.
    pub max_subsetsum_residual: f64,
    pub total: f64,
}

fn targets(a: &ModelMatrix, q: &[f64]) -> Result<Vec<f64>, BaselineError> {
    if q.len() != a.ncells() {
        return Err(BaselineError::LengthMismatch {
            expected: a.ncells(),
            found: q.len(),
        });
    }
    let aq = subset_sums(a, q).expect("length checked");
    match aq.iter().position(|&s| s.is_nan() || s <= 0.0) {
        Some(j) => Err(BaselineError::ZeroSubsetSum { subset: j }),
        None => Ok(aq),
    }
}

// ---------------------------------------------------------------------------
// GIS

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GisOptions {
    pub iter: BaselineOptions,
    /// Replace a non-constant-row-sum matrix by an equivalent one with
    /// constant row sums. Fails for models without the overall effect.
    pub auto_transform: bool,
    /// Append the row `max_i a(i) - a(i)`. This changes the model unless the
    /// overall effect is already present.
    pub slack_feature: bool,
}

/// Which matrix GIS actually iterated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GisMatrix {
    Original,
    ConstantRowSum { rows: Vec<Vec<u32>> },
    SlackFeature { slack_row: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GisFit {
    pub fit: BaselineFit,
    pub matrix: GisMatrix,
    /// Common column sum `c` of the matrix iterated on.
    pub row_sum: u32,
}

fn integer_sums(rows: &[Vec<u32>], v: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().zip(v).map(|(&w, x)| w as f64 * x).sum())
        .collect()
}

fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Generalized Iterative Scaling from `p = 1`.
///
/// Works on a nonnegative integer matrix `W` whose columns all sum to `c`;
/// each sweep multiplies every cell by `Π_j (W_j q / W_j p)^{w_ji / c}`, the
/// classical update applied to `W / c`, whose columns sum to one.
pub fn gis(a: &ModelMatrix, q: &[f64], opts: &GisOptions) -> Result<GisFit, BaselineError> {
    let aq = targets(a, q)?;
    let degrees = a.column_degrees();
    let constant = degrees.iter().all(|&d| d == degrees[0]);
    let original: Vec<Vec<u32>> = a
        .rows()
        .iter()
        .map(|r| r.iter().map(|&v| v as u32).collect())
        .collect();

    let (work, c, matrix) = if constant {
        (original.clone(), degrees[0], GisMatrix::Original)
    } else if opts.slack_feature {
        let top = *degrees.iter().max().unwrap();
        let slack: Vec<u32> = degrees.iter().map(|&d| top - d).collect();
        let mut w = original.clone();
        w.push(slack.clone());
        (w, top, GisMatrix::SlackFeature { slack_row: slack })
    } else if opts.auto_transform {
        let eq = constant_rowsum_equivalent(a)?;
        let rows = eq.rows.clone();
        (eq.rows, eq.c, GisMatrix::ConstantRowSum { rows })
    } else {
        return Err(BaselineError::RowSumNotConstant {
            column_sums: degrees,
        });
    };

    // Convergence is judged on A, except when the slack row changed the model.
    let (check_rows, check_targets) = match matrix {
        GisMatrix::SlackFeature { .. } => (work.clone(), integer_sums(&work, q)),
        _ => (original, aq),
    };
    let work_targets = integer_sums(&work, q);
    if let Some(j) = work_targets.iter().position(|&s| s.is_nan() || s <= 0.0) {
        return Err(BaselineError::ZeroSubsetSum { subset: j });
    }
    let inv_c = 1.0 / c as f64;

    let mut p = vec![1.0; a.ncells()];
    let mut iterations = 0;
    let mut r = max_abs_diff(&integer_sums(&check_rows, &p), &check_targets);
    while r > opts.iter.eps && iterations < opts.iter.max_iter {
        let current = integer_sums(&work, &p);
        let log_ratio: Vec<f64> = work_targets
            .iter()
            .zip(&current)
            .map(|(t, s)| (t / s).ln())
            .collect();
        for (i, pi) in p.iter_mut().enumerate() {
            let e: f64 = work
                .iter()
                .zip(&log_ratio)
                .map(|(row, l)| row[i] as f64 * l)
                .sum();
            *pi *= (e * inv_c).exp();
        }
        iterations += 1;
        r = max_abs_diff(&integer_sums(&check_rows, &p), &check_targets);
    }

    let fit = BaselineFit {
        total: p.iter().sum(),
        p: CellVector::new(p).expect("multiplicative updates keep cells positive"),
        iterations,
        converged: r <= opts.iter.eps,
        max_subsetsum_residual: r,
    };
    if !fit.converged {
        return Err(BaselineError::MaxIterationsExceeded {
            diagnostics: Box::new(fit),
        });
    }
    Ok(GisFit {
        fit,
        matrix,
        row_sum: c,
    })
}

// ---------------------------------------------------------------------------
// IIS

/// Positive root of `Σ_k w_k ζ^{a_k} = target`.
///
/// The left side is strictly increasing on `ζ > 0` and vanishes at zero, so
/// `[0, max(1, target / Σ w)]` brackets the root. Newton steps that leave the
/// bracket are replaced by bisection.
pub fn iis_inner_solve(coeffs: &[(f64, u32)], target: f64) -> Result<f64, BaselineError> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(BaselineError::InvalidTarget(target));
    }
    let terms: Vec<(f64, i32)> = coeffs
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|&(w, a)| (w, a as i32))
        .collect();
    if terms.is_empty() {
        return Err(BaselineError::NoPositiveCoefficient);
    }
    let weight: f64 = terms.iter().map(|(w, _)| w).sum();
    let eval = |z: f64| {
        terms.iter().fold((-target, 0.0), |(f, df), &(w, a)| {
            let za = z.powi(a - 1);
            (f + w * za * z, df + w * a as f64 * za)
        })
    };

    let mut lo = 0.0;
    let mut hi = (target / weight).max(1.0);
    let mut z = target / weight;
    for _ in 0..200 {
        let (f, df) = eval(z);
        if f == 0.0 {
            return Ok(z);
        }
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let mut next = z - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-12 * next {
            return Ok(next);
        }
        z = next;
    }
    Ok(z)
}

/// Iteration state of IIS: the current vector, the cell degrees
/// `a(i) = Σ_j a_ji`, and the multipliers of the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct IisState {
    pub p: CellVector,
    pub column_degrees: Vec<u32>,
    pub zeta: Vec<f64>,
}

impl IisState {
    /// Starts from `p = 1`, which lies in every relational model.
    pub fn new(a: &ModelMatrix) -> Self {
        Self {
            p: CellVector::ones(a.ncells()),
            column_degrees: a.column_degrees(),
            zeta: vec![1.0; a.nsubsets()],
        }
    }

    /// One IIS iteration: every `ζ_j` from the same `p`, then
    /// `p(i) ← p(i) Π_j ζ_j^{a_ji}`.
    pub fn advance(&mut self, a: &ModelMatrix, aq: &[f64]) -> Result<(), BaselineError> {
        let p = self.p.as_slice();
        for (j, &target) in aq.iter().enumerate() {
            let coeffs: Vec<(f64, u32)> = a
                .support(j)
                .map(|i| (p[i], self.column_degrees[i]))
                .collect();
            self.zeta[j] = iis_inner_solve(&coeffs, target)?;
        }
        let zeta = &self.zeta;
        for (i, pi) in self.p.values_mut().iter_mut().enumerate() {
            for (j, z) in zeta.iter().enumerate() {
                if a.row(j)[i] == 1 {
                    *pi *= z;
                }
            }
        }
        Ok(())
    }
}

/// Improved Iterative Scaling, exactly as the two-step update states, with no
/// implicit normalizer.
pub fn iis(
    a: &ModelMatrix,
    q: &[f64],
    opts: &BaselineOptions,
) -> Result<BaselineFit, BaselineError> {
    iis_observed(a, q, opts, |_, _| {})
}

/// [`iis`] that reports `(iteration, p)` after every update.
pub fn iis_observed<F>(
    a: &ModelMatrix,
    q: &[f64],
    opts: &BaselineOptions,
    mut observer: F,
) -> Result<BaselineFit, BaselineError>
where
    F: FnMut(usize, &[f64]),
{
    let aq = targets(a, q)?;
    let mut state = IisState::new(a);
    let residual = |p: &[f64]| max_abs_diff(&subset_sums(a, p).expect("length checked"), &aq);
    let mut iterations = 0;
    let mut r = residual(state.p.as_slice());
    while r > opts.eps && iterations < opts.max_iter {
        state.advance(a, &aq)?;
        iterations += 1;
        observer(iterations, state.p.as_slice());
        r = residual(state.p.as_slice());
    }
    let fit = BaselineFit {
        total: state.p.total(),
        p: state.p,
        iterations,
        converged: r <= opts.eps,
        max_subsetsum_residual: r,
    };
    if fit.converged {
        Ok(fit)
    } else {
        Err(BaselineError::MaxIterationsExceeded {
            diagnostics: Box::new(fit),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::solvers::{ipf_gamma, IpfOptions};
    use rand::{Rng, SeedableRng};

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < tol, "got {got:?}, want {want:?}");
        }
    }

    #[test]
    fn inner_solve_linear_case_is_gis_multiplier() {
        let coeffs = [(0.2, 1), (0.3, 1), (0.1, 1)];
        let z = iis_inner_solve(&coeffs, 0.9).unwrap();
        assert!((z - 0.9 / 0.6).abs() < 1e-14);
    }

    #[test]
    fn inner_solve_single_square_term() {
        let z = iis_inner_solve(&[(0.5, 2)], 2.0).unwrap();
        assert!((z - 2.0).abs() < 1e-13);
        let z = iis_inner_solve(&[(4.0, 2)], 0.01).unwrap();
        assert!((z - (0.01f64 / 4.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn inner_solve_errors() {
        assert_eq!(
            iis_inner_solve(&[(0.0, 1)], 1.0),
            Err(BaselineError::NoPositiveCoefficient)
        );
        assert_eq!(
            iis_inner_solve(&[(1.0, 1)], 0.0),
            Err(BaselineError::InvalidTarget(0.0))
        );
    }

    #[test]
    fn inner_solve_random_residuals() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let coeffs: Vec<(f64, u32)> = (0..n)
                .map(|_| (rng.random_range(1e-3..2.0), rng.random_range(1..5)))
                .collect();
            let target = rng.random_range(1e-3..3.0);
            let z = iis_inner_solve(&coeffs, target).unwrap();
            let lhs: f64 = coeffs.iter().map(|&(w, a)| w * z.powi(a as i32)).sum();
            assert!(z > 0.0);
            assert!((lhs - target).abs() <= 1e-10, "{coeffs:?} {target} {z}");
        }
    }

    #[test]
    fn gis_on_constant_rowsum_independence() {
        let a = catalog::independence_2x2();
        let q = catalog::INDEPENDENCE_2X2_Q;
        assert!(matches!(
            gis(&a, &q, &GisOptions::default()),
            Err(BaselineError::RowSumNotConstant { .. })
        ));
        let opts = GisOptions {
            auto_transform: true,
            ..GisOptions::default()
        };
        let g = gis(&a, &q, &opts).unwrap();
        assert_eq!(g.row_sum, 2);
        assert_close(g.fit.p.as_slice(), &[0.3, 0.2, 0.3, 0.2], 1e-6);
        let ipf = ipf_gamma(&a, &q, 1.0, &IpfOptions::default()).unwrap();
        assert_close(g.fit.p.as_slice(), ipf.delta_hat.as_slice(), 1e-6);
    }

    #[test]
    fn gis_on_matrix_already_summing_to_one() {
        let a = ModelMatrix::new(vec![vec![1, 1, 0], vec![0, 0, 1]]).unwrap();
        let q = [0.1, 0.5, 0.4];
        let g = gis(&a, &q, &GisOptions::default()).unwrap();
        assert_eq!(g.matrix, GisMatrix::Original);
        assert_close(g.fit.p.as_slice(), &[0.3, 0.3, 0.4], 1e-8);
    }

    #[test]
    fn gis_rejects_curved_model() {
        let a = catalog::aitchison_silvey();
        let q = catalog::AITCHISON_SILVEY_Q;
        assert!(matches!(
            gis(&a, &q, &GisOptions::default()),
            Err(BaselineError::RowSumNotConstant { .. })
        ));
        let opts = GisOptions {
            auto_transform: true,
            ..GisOptions::default()
        };
        assert_eq!(
            gis(&a, &q, &opts).unwrap_err(),
            BaselineError::NoOverallEffect
        );
    }

    #[test]
    fn gis_slack_feature_changes_curved_model() {
        let a = catalog::aitchison_silvey();
        let q = catalog::AITCHISON_SILVEY_Q;
        let opts = GisOptions {
            slack_feature: true,
            ..GisOptions::default()
        };
        let g = gis(&a, &q, &opts).unwrap();
        assert_eq!(
            g.matrix,
            GisMatrix::SlackFeature {
                slack_row: vec![2, 2, 2, 1, 1, 1, 0]
            }
        );
        // With the slack row the fit is a probability vector, but it is no
        // longer in the three-feature independence model.
        assert!((g.fit.total - 1.0).abs() < 1e-6);
        let d = crate::model::kernel_basis(&a);
        assert!(d.log_residual(g.fit.p.as_slice()) > 1e-3);
    }

    #[test]
    fn gis_data_in_model_is_fixed_point() {
        let a = ModelMatrix::new(vec![vec![1, 1, 0], vec![0, 0, 1]]).unwrap();
        let q = [0.25, 0.25, 0.5];
        let g = gis(&a, &q, &GisOptions::default()).unwrap();
        assert_close(g.fit.p.as_slice(), &q, 1e-8);
    }

    #[test]
    fn iis_reproduces_published_limit() {
        let a = catalog::aitchison_silvey();
        let fit = iis(
            &a,
            &catalog::AITCHISON_SILVEY_Q,
            &BaselineOptions::default(),
        )
        .unwrap();
        assert!((fit.total - 1.804).abs() < 5e-4, "total {}", fit.total);
        assert_close(
            fit.p.as_slice(),
            &[0.3202, 0.4574, 0.4574, 0.1464, 0.1464, 0.2092, 0.0670],
            5e-4,
        );
    }

    #[test]
    fn iis_agrees_with_gis_under_overall_effect() {
        let a = catalog::independence_2x2();
        let q = catalog::INDEPENDENCE_2X2_Q;
        let i = iis(&a, &q, &BaselineOptions::default()).unwrap();
        let opts = GisOptions {
            auto_transform: true,
            ..GisOptions::default()
        };
        let g = gis(&a, &q, &opts).unwrap();
        assert_close(i.p.as_slice(), g.fit.p.as_slice(), 1e-6);
    }

    #[test]
    fn iis_fixed_point_and_budget() {
        let a = catalog::aitchison_silvey();
        let theta: [f64; 3] = [0.2, 0.3, 0.25];
        let q: Vec<f64> = (0..7)
            .map(|i| (0..3).map(|j| theta[j].powi(a.row(j)[i] as i32)).product())
            .collect();
        let fit = iis(&a, &q, &BaselineOptions::default()).unwrap();
        assert_close(fit.p.as_slice(), &q, 1e-7);

        let opts = BaselineOptions {
            max_iter: 3,
            ..BaselineOptions::default()
        };
        assert!(matches!(
            iis(&a, &catalog::AITCHISON_SILVEY_Q, &opts),
            Err(BaselineError::MaxIterationsExceeded { .. })
        ));
    }
}
