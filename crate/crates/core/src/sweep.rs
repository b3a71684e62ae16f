//! IIS limit totals over an equally spaced grid on the probability simplex.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{iis, BaselineOptions};
use crate::model::ModelMatrix;

/// Largest grid a sweep will enumerate.
pub const MAX_POINTS: u128 = 1_000_000;

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("grid step must be 1/N for a positive integer N, got {0}")]
    InvalidStep(String),
    #[error(
        "grid with step 1/{denominator} has {points} points, more than the limit of {MAX_POINTS}"
    )]
    GridTooFine { denominator: u64, points: u128 },
    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
}

/// Parses a grid step written as `1/N` or as a decimal close to `1/N`, and
/// returns `N`.
pub fn parse_grid_step(s: &str) -> Result<u64, SweepError> {
    let bad = || SweepError::InvalidStep(s.to_string());
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if num == 0 || den == 0 || !den.is_multiple_of(num) {
            return Err(bad());
        }
        return Ok(den / num);
    }
    let step: f64 = s.parse().map_err(|_| bad())?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(bad());
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(bad());
    }
    Ok(n as u64)
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of ways to write `n` as an ordered sum of `parts` positive integers.
pub fn count_positive_compositions(n: u64, parts: u64) -> u128 {
    match (n, parts) {
        (_, 0) => u128::from(n == 0),
        (0, _) => 0,
        _ => binomial(n - 1, parts - 1),
    }
}

/// All positive compositions of `n` into `parts` parts, in lexicographic order.
pub fn positive_compositions(n: u64, parts: usize) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    if parts == 0 || (n as usize) < parts {
        return out;
    }
    let mut current = vec![1u64; parts];
    current[parts - 1] = n - (parts as u64 - 1);
    fn rec(pos: usize, remaining: u64, current: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        let parts = current.len();
        if pos == parts - 1 {
            current[pos] = remaining;
            out.push(current.clone());
            return;
        }
        let slots_after = (parts - pos - 1) as u64;
        for v in 1..=remaining - slots_after {
            current[pos] = v;
            rec(pos + 1, remaining - v, current, out);
        }
    }
    rec(0, n, &mut current, &mut out);
    out
}

/// Every strictly positive point of the simplex with coordinates in `(1/n)ℤ`.
pub fn simplex_grid(n: u64, cells: usize) -> Result<Vec<Vec<f64>>, SweepError> {
    let points = count_positive_compositions(n, cells as u64);
    if points > MAX_POINTS {
        return Err(SweepError::GridTooFine {
            denominator: n,
            points,
        });
    }
    Ok(positive_compositions(n, cells)
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / n as f64).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins aligned to multiples of `bin_width` covering the range of `values`.
    pub fn new(values: &[f64], bin_width: f64) -> Result<Self, SweepError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(SweepError::InvalidBinWidth(bin_width));
        }
        if values.is_empty() {
            return Ok(Self {
                bin_width,
                edges: Vec::new(),
                counts: Vec::new(),
            });
        }
        let index = |v: f64| (v / bin_width).floor() as i64;
        let lo = values.iter().copied().map(index).min().expect("non-empty");
        let hi = values.iter().copied().map(index).max().expect("non-empty");
        let mut counts = vec![0usize; (hi - lo + 1) as usize];
        for &v in values {
            counts[(index(v) - lo) as usize] += 1;
        }
        let edges = (lo..=hi + 1).map(|k| k as f64 * bin_width).collect();
        Ok(Self {
            bin_width,
            edges,
            counts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub index: usize,
    pub q: Vec<f64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Grid points have coordinates in multiples of `1/grid_denominator`.
    pub grid_denominator: u64,
    pub grid_step: f64,
    pub eps: f64,
    /// Number of grid points with a converged IIS limit.
    pub evaluated: usize,
    /// Limit totals `1·p*`, in grid order.
    pub totals: Vec<f64>,
    pub histogram: Histogram,
    /// Points where `|1·p* - 1| > bin_width`.
    pub far_from_one: usize,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    pub fn fraction_far_from_one(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.far_from_one as f64 / self.evaluated as f64
        }
    }
}

/// Runs IIS on each point in parallel. Results are collected in input order,
/// so the report does not depend on the thread count.
pub fn sweep_points(
    a: &ModelMatrix,
    points: &[Vec<f64>],
    opts: &BaselineOptions,
    bin_width: f64,
) -> Result<(Vec<f64>, Histogram, Vec<SweepFailure>), SweepError> {
    let results: Vec<Result<f64, String>> = points
        .par_iter()
        .map(|q| iis(a, q, opts).map(|f| f.total).map_err(|e| e.to_string()))
        .collect();
    let mut totals = Vec::with_capacity(points.len());
    let mut failures = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => totals.push(t),
            Err(error) => failures.push(SweepFailure {
                index,
                q: points[index].clone(),
                error,
            }),
        }
    }
    let histogram = Histogram::new(&totals, bin_width)?;
    Ok((totals, histogram, failures))
}

pub fn sweep(
    a: &ModelMatrix,
    grid_denominator: u64,
    opts: &BaselineOptions,
    bin_width: f64,
) -> Result<SweepReport, SweepError> {
    if grid_denominator == 0 {
        return Err(SweepError::InvalidStep("0".into()));
    }
    let points = simplex_grid(grid_denominator, a.ncells())?;
    log::info!("sweep: {} grid points", points.len());
    let (totals, histogram, failures) = sweep_points(a, &points, opts, bin_width)?;
    let far_from_one = totals
        .iter()
        .filter(|t| (*t - 1.0).abs() > bin_width)
        .count();
    Ok(SweepReport {
        grid_denominator,
        grid_step: 1.0 / grid_denominator as f64,
        eps: opts.eps,
        evaluated: totals.len(),
        totals,
        histogram,
        far_from_one,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn composition_counts_match_enumeration() {
        for n in 0..12u64 {
            for parts in 1..8usize {
                assert_eq!(
                    positive_compositions(n, parts).len() as u128,
                    count_positive_compositions(n, parts as u64),
                    "n={n} parts={parts}"
                );
            }
        }
        // Step 1/2 leaves no strictly positive point on 7 cells.
        assert_eq!(count_positive_compositions(2, 7), 0);
        assert_eq!(count_positive_compositions(7, 7), 1);
        assert_eq!(count_positive_compositions(8, 7), 7);
        assert_eq!(count_positive_compositions(10, 7), 84);
        assert_eq!(count_positive_compositions(14, 7), 1716);
    }

    #[test]
    fn compositions_are_distinct_and_sum() {
        let c = positive_compositions(9, 4);
        assert_eq!(c.len(), 56);
        assert!(c
            .iter()
            .all(|v| v.iter().sum::<u64>() == 9 && v.iter().all(|&x| x >= 1)));
        let mut sorted = c.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, c);
    }

    #[test]
    fn grid_step_parsing() {
        assert_eq!(parse_grid_step("1/14").unwrap(), 14);
        assert_eq!(parse_grid_step("2/28").unwrap(), 14);
        assert_eq!(parse_grid_step("0.5").unwrap(), 2);
        assert_eq!(parse_grid_step("0.1").unwrap(), 10);
        assert!(parse_grid_step("0.3").is_err());
        assert!(parse_grid_step("0").is_err());
        assert!(parse_grid_step("abc").is_err());
        assert!(parse_grid_step("3/7").is_err());
    }

    #[test]
    fn too_fine_grid_is_rejected_up_front() {
        let a = catalog::aitchison_silvey();
        let err = sweep(&a, 100, &BaselineOptions::default(), DEFAULT_BIN_WIDTH).unwrap_err();
        assert!(matches!(
            err,
            SweepError::GridTooFine {
                denominator: 100,
                ..
            }
        ));
    }

    #[test]
    fn coarse_sweeps_have_exact_sizes() {
        let a = catalog::aitchison_silvey();
        let opts = BaselineOptions::default();
        let half = sweep(&a, 2, &opts, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(half.evaluated, 0);
        assert!(half.histogram.counts.is_empty());
        let eighth = sweep(&a, 8, &opts, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(eighth.evaluated + eighth.failures.len(), 7);
        assert_eq!(
            eighth.histogram.counts.iter().sum::<usize>(),
            eighth.evaluated
        );
        assert_eq!(
            eighth.histogram.edges.len(),
            eighth.histogram.counts.len() + 1
        );
    }

    #[test]
    fn in_model_point_is_a_fixed_point() {
        // Product of marginals 1/4, 1/4 and 7/25 with the cube's empty cell removed.
        let q = vec![0.25, 0.25, 0.28, 0.0625, 0.07, 0.07, 0.0175];
        let a = catalog::aitchison_silvey();
        let (totals, hist, failures) =
            sweep_points(&a, &[q], &BaselineOptions::default(), DEFAULT_BIN_WIDTH).unwrap();
        assert!(failures.is_empty());
        assert!((totals[0] - 1.0).abs() < 1e-8, "{}", totals[0]);
        assert_eq!(hist.counts.iter().sum::<usize>(), 1);
    }

    #[test]
    fn histogram_bins_cover_values() {
        let h = Histogram::new(&[0.93, 1.0, 1.02, 1.8], 0.05).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert!(h.edges[0] <= 0.93 && *h.edges.last().unwrap() > 1.8);
        assert!(Histogram::new(&[1.0], 0.0).is_err());
    }
}
