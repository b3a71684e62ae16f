//! Bregman and Kullback–Leibler divergences, subset sums, and the observed
//! table wrapper that turns counts into the fitting target `q`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("vectors have lengths {left} and {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("entry {index} is {value}, expected a positive finite number")]
    NonPositive { index: usize, value: f64 },
    #[error("count {index} is {value}, expected a nonnegative finite number")]
    NegativeCount { index: usize, value: f64 },
    #[error("observed counts sum to zero")]
    EmptyTable,
}

/// Strictly positive vector over the cells: probabilities or intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellVector(Vec<f64>);

impl CellVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DivergenceError> {
        check_positive(&values)?;
        Ok(Self(values))
    }

    /// All-ones start vector.
    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for CellVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Poisson,
    Multinomial,
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poisson" => Ok(Scheme::Poisson),
            "multinomial" => Ok(Scheme::Multinomial),
            other => Err(format!("unknown sampling scheme `{other}`")),
        }
    }
}

/// Nonnegative counts together with the sampling scheme that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTable {
    counts: Vec<f64>,
    scheme: Scheme,
}

impl ObservedTable {
    pub fn new(counts: Vec<f64>, scheme: Scheme) -> Result<Self, DivergenceError> {
        if let Some((i, &v)) = counts
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= 0.0 && v.is_finite()))
        {
            return Err(DivergenceError::NegativeCount { index: i, value: v });
        }
        if counts.iter().sum::<f64>() <= 0.0 {
            return Err(DivergenceError::EmptyTable);
        }
        Ok(Self { counts, scheme })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// The fitting target: the counts themselves under Poisson sampling, the
    /// observed proportions under multinomial sampling.
    pub fn q(&self) -> Vec<f64> {
        match self.scheme {
            Scheme::Poisson => self.counts.clone(),
            Scheme::Multinomial => {
                let n: f64 = self.counts.iter().sum();
                self.counts.iter().map(|y| y / n).collect()
            }
        }
    }
}

fn check_positive(v: &[f64]) -> Result<(), DivergenceError> {
    match v
        .iter()
        .enumerate()
        .find(|(_, &x)| !(x > 0.0 && x.is_finite()))
    {
        Some((i, &x)) => Err(DivergenceError::NonPositive { index: i, value: x }),
        None => Ok(()),
    }
}

fn check_lengths(t: &[f64], u: &[f64]) -> Result<(), DivergenceError> {
    if t.len() != u.len() {
        return Err(DivergenceError::LengthMismatch {
            left: t.len(),
            right: u.len(),
        });
    }
    Ok(())
}

/// Bregman divergence generated by `x log x`:
/// `Σ t log(t/u) + Σ u - Σ t`.
pub fn bregman(t: &[f64], u: &[f64]) -> Result<f64, DivergenceError> {
    check_lengths(t, u)?;
    check_positive(t)?;
    check_positive(u)?;
    let mut acc = 0.0;
    for (&ti, &ui) in t.iter().zip(u) {
        acc += ti * (ti / ui).ln() + ui - ti;
    }
    Ok(acc)
}

/// Kullback–Leibler divergence `Σ p log(p/q)` of two probability vectors.
/// Inputs are used as given; normalization is the caller's business.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    check_lengths(p, q)?;
    check_positive(p)?;
    check_positive(q)?;
    Ok(p.iter().zip(q).map(|(&a, &b)| a * (a.ln() - b.ln())).sum())
}

/// `A δ`: the subset sums of `δ`. Entries of `δ` may be zero (observed data).
pub fn subset_sums(a: &ModelMatrix, delta: &[f64]) -> Result<Vec<f64>, DivergenceError> {
    if delta.len() != a.ncells() {
        return Err(DivergenceError::LengthMismatch {
            left: a.ncells(),
            right: delta.len(),
        });
    }
    Ok(a.rows()
        .iter()
        .map(|row| {
            row.iter()
                .zip(delta)
                .filter(|(&x, _)| x == 1)
                .map(|(_, d)| d)
                .sum()
        })
        .collect())
}
