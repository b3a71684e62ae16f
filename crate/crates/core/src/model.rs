//! Model matrices, kernel bases and generalized odds ratios.
//!
//! A relational model is generated by subsets `S_1, ..., S_J` of a finite set
//! of cells. Its model matrix has one 0/1 indicator row per subset. A
//! distribution is in the model iff `log δ` is in the row space of the model
//! matrix, or equivalently iff every generalized odds ratio built from an
//! integer kernel basis equals one.
//!
//! All structural decisions (rank, overall effect, kernel) are made in exact
//! rational arithmetic.

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("model matrix has no rows or no columns")]
    Empty,
    #[error("row index {row} has {found} entries, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("entry at row index {row}, column index {col} is {value}, expected 0 or 1")]
    NonBinaryEntry { row: usize, col: usize, value: i64 },
    #[error("row index {row} is all zeros (empty subset)")]
    ZeroRow { row: usize },
    #[error("column index {col} is all zeros (cell in no subset)")]
    ZeroColumn { col: usize },
    #[error("row index {row} is a rational combination of the rows before it")]
    RankDeficient { row: usize },
    #[error("{what}: expected {expected} labels, found {found}")]
    LabelCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("the all-ones vector is not in the row space: model has no overall effect")]
    NoOverallEffect,
    #[error("kernel basis row index {row} is not orthogonal to the model matrix")]
    NotInKernel { row: usize },
    #[error("kernel basis has {found} independent rows, expected {expected}")]
    KernelDimension { expected: usize, found: usize },
    #[error("cell index {cell} is not strictly positive")]
    NonPositiveCell { cell: usize },
    #[error("vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Checks the model-matrix invariants on a raw integer matrix.
///
/// Checks run in order: shape, binary entries, empty rows, empty columns,
/// then full row rank. The first violation is reported.
pub fn validate(rows: &[Vec<i64>]) -> Result<(), ModelError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(ModelError::Empty);
    }
    for (j, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ModelError::Ragged {
                row: j,
                expected: ncols,
                found: row.len(),
            });
        }
        if let Some((i, &v)) = row.iter().enumerate().find(|(_, &v)| v != 0 && v != 1) {
            return Err(ModelError::NonBinaryEntry {
                row: j,
                col: i,
                value: v,
            });
        }
    }
    if let Some(j) = rows.iter().position(|r| r.iter().all(|&v| v == 0)) {
        return Err(ModelError::ZeroRow { row: j });
    }
    if let Some(i) = (0..ncols).find(|&i| rows.iter().all(|r| r[i] == 0)) {
        return Err(ModelError::ZeroColumn { col: i });
    }
    if let Some(j) = rational::first_dependent_row(rows) {
        return Err(ModelError::RankDeficient { row: j });
    }
    Ok(())
}

/// A validated 0/1 model matrix: `J` subset rows over `|I|` cell columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMatrix {
    rows: Vec<Vec<u8>>,
    cell_labels: Option<Vec<String>>,
    subset_labels: Option<Vec<String>>,
}

impl ModelMatrix {
    pub fn new(rows: Vec<Vec<i64>>) -> Result<Self, ModelError> {
        validate(&rows)?;
        Ok(Self {
            rows: rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| v as u8).collect())
                .collect(),
            cell_labels: None,
            subset_labels: None,
        })
    }

    pub fn with_cell_labels(mut self, labels: Vec<String>) -> Result<Self, ModelError> {
        if labels.len() != self.ncells() {
            return Err(ModelError::LabelCount {
                what: "cells",
                expected: self.ncells(),
                found: labels.len(),
            });
        }
        self.cell_labels = Some(labels);
        Ok(self)
    }

    pub fn with_subset_labels(mut self, labels: Vec<String>) -> Result<Self, ModelError> {
        if labels.len() != self.nsubsets() {
            return Err(ModelError::LabelCount {
                what: "subsets",
                expected: self.nsubsets(),
                found: labels.len(),
            });
        }
        self.subset_labels = Some(labels);
        Ok(self)
    }

    /// Number of generating subsets `J`.
    pub fn nsubsets(&self) -> usize {
        self.rows.len()
    }

    /// Number of cells `|I|`.
    pub fn ncells(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, j: usize) -> &[u8] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn cell_labels(&self) -> Option<&[String]> {
        self.cell_labels.as_deref()
    }

    pub fn subset_labels(&self) -> Option<&[String]> {
        self.subset_labels.as_deref()
    }

    /// Cells belonging to subset `j`, in increasing order.
    pub fn support(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[j]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(i, _)| i)
    }

    /// `a(i) = Σ_j a_ji`, the number of subsets containing each cell.
    pub fn column_degrees(&self) -> Vec<u32> {
        (0..self.ncells())
            .map(|i| self.rows.iter().map(|r| r[i] as u32).sum())
            .collect()
    }

    pub fn to_i64_rows(&self) -> Vec<Vec<i64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&v| v as i64).collect())
            .collect()
    }
}

/// Whether the all-ones vector lies in the rational row space of `a`.
pub fn has_overall_effect(a: &ModelMatrix) -> bool {
    let rows = a.to_i64_rows();
    let ones = vec![vec![1i64; a.ncells()]];
    rational::rank(&rows) == rational::rank(&rational::stacked(&rows, &ones))
}

/// Integer matrix whose rows are a basis of `Ker(A)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelBasis {
    rows: Vec<Vec<i64>>,
    ncells: usize,
}

impl KernelBasis {
    /// Accepts a user-supplied basis after checking `D A' = 0` and that the
    /// rows are independent and span the whole kernel.
    pub fn new(rows: Vec<Vec<i64>>, a: &ModelMatrix) -> Result<Self, ModelError> {
        let n = a.ncells();
        for (k, d) in rows.iter().enumerate() {
            if d.len() != n {
                return Err(ModelError::Ragged {
                    row: k,
                    expected: n,
                    found: d.len(),
                });
            }
            let orthogonal = a
                .rows()
                .iter()
                .all(|r| r.iter().zip(d).map(|(&x, &y)| x as i64 * y).sum::<i64>() == 0);
            if !orthogonal {
                return Err(ModelError::NotInKernel { row: k });
            }
        }
        let expected = n - a.nsubsets();
        let found = if rows.is_empty() {
            0
        } else {
            rational::rank(&rows)
        };
        if found != expected || rows.len() != expected {
            return Err(ModelError::KernelDimension { expected, found });
        }
        Ok(Self { rows, ncells: n })
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ncells(&self) -> usize {
        self.ncells
    }

    /// `‖D log δ‖∞`, zero exactly when `δ` is in the model. `δ` must be
    /// strictly positive; non-positive entries yield NaN or infinity.
    pub fn log_residual(&self, delta: &[f64]) -> f64 {
        let logs: Vec<f64> = delta.iter().map(|x| x.ln()).collect();
        self.rows
            .iter()
            .map(|d| {
                d.iter()
                    .zip(&logs)
                    .map(|(&k, l)| k as f64 * l)
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Exact kernel basis: rational elimination, one vector per free column,
/// each scaled to its primitive integer form.
pub fn kernel_basis(a: &ModelMatrix) -> KernelBasis {
    KernelBasis {
        rows: rational::integer_nullspace(&a.to_i64_rows(), a.ncells()),
        ncells: a.ncells(),
    }
}

/// Output of [`constant_rowsum_equivalent`]: a nonnegative integer matrix with
/// the same row space whose rows add up to `c·1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantRowSum {
    pub rows: Vec<Vec<u32>>,
    pub c: u32,
}

impl ConstantRowSum {
    pub fn to_i64_rows(&self) -> Vec<Vec<i64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&v| v as i64).collect())
            .collect()
    }
}

/// Re-parameterizes a model with the overall effect so that its rows sum to a
/// constant vector.
///
/// A row equal to `1` is placed first; if none exists, such a row replaces the
/// first row that carries a non-zero coefficient in the rational expansion of
/// `1`. Then consecutive differences `B_j - B_{j+1}` (last row kept) are
/// shifted by their row minimum to make them nonnegative.
pub fn constant_rowsum_equivalent(a: &ModelMatrix) -> Result<ConstantRowSum, ModelError> {
    let rows = a.to_i64_rows();
    let n = a.ncells();
    let coeffs =
        rational::row_combination(&rows, &vec![1; n]).ok_or(ModelError::NoOverallEffect)?;

    let pivot = rows
        .iter()
        .position(|r| r.iter().all(|&v| v == 1))
        .unwrap_or_else(|| {
            coeffs
                .iter()
                .position(|c: &BigRational| !c.is_zero())
                .expect("non-trivial combination of 1")
        });
    let mut basis = vec![vec![1i64; n]];
    basis.extend(
        rows.iter()
            .enumerate()
            .filter(|&(j, _)| j != pivot)
            .map(|(_, r)| r.clone()),
    );

    if basis.len() == 1 {
        return Ok(ConstantRowSum {
            rows: vec![vec![1; n]],
            c: 1,
        });
    }

    let jn = basis.len();
    let diffs: Vec<Vec<i64>> = (0..jn)
        .map(|j| {
            if j + 1 < jn {
                basis[j]
                    .iter()
                    .zip(&basis[j + 1])
                    .map(|(x, y)| x - y)
                    .collect()
            } else {
                basis[j].clone()
            }
        })
        .collect();
    let mins: Vec<i64> = diffs.iter().map(|r| *r.iter().min().unwrap()).collect();
    let c = 1 - mins.iter().sum::<i64>();
    let shifted = diffs
        .iter()
        .zip(&mins)
        .map(|(r, &m)| r.iter().map(|&v| (v - m) as u32).collect())
        .collect();
    Ok(ConstantRowSum {
        rows: shifted,
        c: c as u32,
    })
}

/// Evaluates `δ^{d⁺} / δ^{d⁻}` for every kernel row, in log space.
pub fn odds_ratios(d: &KernelBasis, delta: &[f64]) -> Result<Vec<f64>, ModelError> {
    if delta.len() != d.ncells() {
        return Err(ModelError::LengthMismatch {
            expected: d.ncells(),
            found: delta.len(),
        });
    }
    if let Some(i) = delta.iter().position(|&x| x.is_nan() || x <= 0.0) {
        return Err(ModelError::NonPositiveCell { cell: i });
    }
    let logs: Vec<f64> = delta.iter().map(|x| x.ln()).collect();
    Ok(d.rows()
        .iter()
        .map(|row| {
            row.iter()
                .zip(&logs)
                .map(|(&k, l)| k as f64 * l)
                .sum::<f64>()
                .exp()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Homogeneity {
    Homogeneous,
    NonHomogeneous,
}

/// A kernel row split into its positive and negative parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OddsRatioSpec {
    pub row: Vec<i64>,
    pub positive: Vec<u64>,
    pub negative: Vec<u64>,
    pub homogeneity: Homogeneity,
}

impl OddsRatioSpec {
    pub fn from_row(row: &[i64]) -> Self {
        let positive: Vec<u64> = row.iter().map(|&v| v.max(0) as u64).collect();
        let negative: Vec<u64> = row.iter().map(|&v| (-v).max(0) as u64).collect();
        let homogeneity = if positive.iter().sum::<u64>() == negative.iter().sum::<u64>() {
            Homogeneity::Homogeneous
        } else {
            Homogeneity::NonHomogeneous
        };
        Self {
            row: row.to_vec(),
            positive,
            negative,
            homogeneity,
        }
    }

    pub fn numerator_degree(&self) -> u64 {
        self.positive.iter().sum()
    }

    pub fn denominator_degree(&self) -> u64 {
        self.negative.iter().sum()
    }
}

pub fn classify_homogeneity(d: &KernelBasis) -> Vec<OddsRatioSpec> {
    d.rows()
        .iter()
        .map(|r| OddsRatioSpec::from_row(r))
        .collect()
}

/// Unimodular row reduction of a kernel basis so that at most one row is
/// non-homogeneous; that row, if any, is moved last.
///
/// Row degrees `s_k = Σ_i d_ki` are reduced Euclid-style: the row with the
/// smallest non-zero `|s|` is subtracted (an integer number of times) from
/// every other non-homogeneous row until a single non-zero degree, the gcd,
/// remains. The result spans the same integer lattice, so it is still an
/// integer kernel basis describing the same model.
pub fn reduce_to_single_nonhomogeneous(d: &KernelBasis) -> KernelBasis {
    let mut rows = d.rows().to_vec();
    let degree = |r: &[i64]| r.iter().sum::<i64>();
    loop {
        let active: Vec<usize> = (0..rows.len()).filter(|&k| degree(&rows[k]) != 0).collect();
        if active.len() <= 1 {
            break;
        }
        let p = *active
            .iter()
            .min_by_key(|&&k| degree(&rows[k]).abs())
            .unwrap();
        let sp = degree(&rows[p]);
        let pivot = rows[p].clone();
        for &k in active.iter().filter(|&&k| k != p) {
            let m = degree(&rows[k]) / sp;
            for (v, pv) in rows[k].iter_mut().zip(&pivot) {
                *v -= m * pv;
            }
        }
    }
    if let Some(k) = rows.iter().position(|r| degree(r) != 0) {
        let r = rows.remove(k);
        rows.push(r);
    }
    KernelBasis {
        rows,
        ncells: d.ncells(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn independence_4row() -> Vec<Vec<i64>> {
        vec![
            vec![1, 1, 0, 0],
            vec![0, 0, 1, 1],
            vec![1, 0, 1, 0],
            vec![0, 1, 0, 1],
        ]
    }

    #[test]
    fn validate_accepts_shipped_and_minimal() {
        assert!(validate(&catalog::aitchison_silvey_rows()).is_ok());
        assert!(validate(&[vec![1]]).is_ok());
        assert!(validate(&catalog::independence_2x2_rows()).is_ok());
    }

    #[test]
    fn validate_reports_offending_index() {
        assert_eq!(
            validate(&[vec![1, 0, 1], vec![0, 0, 1]]),
            Err(ModelError::ZeroColumn { col: 1 })
        );
        assert_eq!(
            validate(&[vec![1, 1], vec![0, 0]]),
            Err(ModelError::ZeroRow { row: 1 })
        );
        assert_eq!(
            validate(&[vec![1, 2]]),
            Err(ModelError::NonBinaryEntry {
                row: 0,
                col: 1,
                value: 2
            })
        );
        // Two row indicators and two column indicators of a 2x2 table add up
        // to the same vector, so the fourth row is redundant.
        assert_eq!(
            validate(&independence_4row()),
            Err(ModelError::RankDeficient { row: 3 })
        );
        assert_eq!(validate(&[]), Err(ModelError::Empty));
        assert!(matches!(
            validate(&[vec![1, 0], vec![1]]),
            Err(ModelError::Ragged { row: 1, .. })
        ));
    }

    #[test]
    fn overall_effect_verdicts() {
        assert!(has_overall_effect(&catalog::independence_2x2()));
        assert!(!has_overall_effect(&catalog::aitchison_silvey()));
        let with_ones = ModelMatrix::new(vec![vec![1, 1, 1], vec![1, 0, 0]]).unwrap();
        assert!(has_overall_effect(&with_ones));
    }

    #[test]
    fn aitchison_silvey_kernel_is_the_four_contrasts() {
        let d = kernel_basis(&catalog::aitchison_silvey());
        assert_eq!(
            d.rows(),
            &[
                vec![-1, -1, 0, 1, 0, 0, 0],
                vec![-1, 0, -1, 0, 1, 0, 0],
                vec![0, -1, -1, 0, 0, 1, 0],
                vec![-1, -1, -1, 0, 0, 0, 1],
            ]
        );
    }

    #[test]
    fn square_invertible_has_empty_kernel() {
        let a = ModelMatrix::new(vec![vec![1, 1], vec![0, 1]]).unwrap();
        let d = kernel_basis(&a);
        assert!(d.is_empty());
        assert_eq!(odds_ratios(&d, &[0.3, 0.7]).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn supplied_kernel_is_checked() {
        let a = catalog::aitchison_silvey();
        let good = kernel_basis(&a).rows().to_vec();
        assert!(KernelBasis::new(good.clone(), &a).is_ok());
        let mut bad = good.clone();
        bad[0][6] = 1;
        assert_eq!(
            KernelBasis::new(bad, &a),
            Err(ModelError::NotInKernel { row: 0 })
        );
        let mut short = good;
        short.pop();
        assert!(matches!(
            KernelBasis::new(short, &a),
            Err(ModelError::KernelDimension { .. })
        ));
    }

    #[test]
    fn rowsum_equivalent_of_small_matrix() {
        // [[1,1,1],[1,0,0]]: A* = [A1 - A2, A2] = [[0,1,1],[1,0,0]], both
        // minima 0, so c = 1.
        let a = ModelMatrix::new(vec![vec![1, 1, 1], vec![1, 0, 0]]).unwrap();
        let eq = constant_rowsum_equivalent(&a).unwrap();
        assert_eq!(eq.rows, vec![vec![0, 1, 1], vec![1, 0, 0]]);
        assert_eq!(eq.c, 1);
    }

    #[test]
    fn rowsum_equivalent_synthesizes_ones_row() {
        // Rows r1, r2, c1: 1 = r1 + r2. r1 is replaced by 1, giving
        // [1, r2, c1] -> [1 - r2, r2 - c1, c1] with minima 0, -1, 0.
        let eq = constant_rowsum_equivalent(&catalog::independence_2x2()).unwrap();
        assert_eq!(
            eq.rows,
            vec![vec![1, 1, 0, 0], vec![0, 1, 1, 2], vec![1, 0, 1, 0]]
        );
        assert_eq!(eq.c, 2);
    }

    #[test]
    fn rowsum_equivalent_single_row() {
        let a = ModelMatrix::new(vec![vec![1, 1, 1]]).unwrap();
        let eq = constant_rowsum_equivalent(&a).unwrap();
        assert_eq!(eq.rows, vec![vec![1, 1, 1]]);
        assert_eq!(eq.c, 1);
    }

    #[test]
    fn rowsum_equivalent_rejects_curved() {
        assert_eq!(
            constant_rowsum_equivalent(&catalog::aitchison_silvey()),
            Err(ModelError::NoOverallEffect)
        );
    }

    #[test]
    fn odds_ratios_of_identity_distribution() {
        let d = kernel_basis(&catalog::aitchison_silvey());
        assert!(odds_ratios(&d, &[1.0; 7])
            .unwrap()
            .iter()
            .all(|&r| r == 1.0));
        assert_eq!(
            odds_ratios(&d, &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
            Err(ModelError::NonPositiveCell { cell: 2 })
        );
        assert!(matches!(
            odds_ratios(&d, &[1.0; 3]),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn odds_ratios_of_normalized_iis_limit_depart_from_one() {
        let p_star = [0.3202, 0.4574, 0.4574, 0.1464, 0.1464, 0.2092, 0.0670];
        let total: f64 = p_star.iter().sum();
        let normalized: Vec<f64> = p_star.iter().map(|p| p / total).collect();
        let d = kernel_basis(&catalog::aitchison_silvey());
        let ors = odds_ratios(&d, &normalized).unwrap();
        assert!(ors.iter().any(|r| (r - 1.0).abs() > 0.01), "{ors:?}");
    }

    #[test]
    fn homogeneity_of_aitchison_silvey_basis() {
        // Each defining contrast has a degree-1 numerator over a degree-2 or
        // degree-3 denominator.
        let specs = classify_homogeneity(&kernel_basis(&catalog::aitchison_silvey()));
        assert!(specs
            .iter()
            .all(|s| s.homogeneity == Homogeneity::NonHomogeneous));
    }

    #[test]
    fn reduction_leaves_one_nonhomogeneous_row_last() {
        let a = catalog::aitchison_silvey();
        let reduced = reduce_to_single_nonhomogeneous(&kernel_basis(&a));
        // d2 - d1, d3 - d1, d4 - 2 d1, d1
        assert_eq!(
            reduced.rows(),
            &[
                vec![0, 1, -1, -1, 1, 0, 0],
                vec![1, 0, -1, -1, 0, 1, 0],
                vec![1, 1, -1, -2, 0, 0, 1],
                vec![-1, -1, 0, 1, 0, 0, 0],
            ]
        );
        let kinds: Vec<Homogeneity> = classify_homogeneity(&reduced)
            .iter()
            .map(|s| s.homogeneity)
            .collect();
        assert_eq!(
            kinds,
            vec![
                Homogeneity::Homogeneous,
                Homogeneity::Homogeneous,
                Homogeneity::Homogeneous,
                Homogeneity::NonHomogeneous,
            ]
        );
        assert!(KernelBasis::new(reduced.rows().to_vec(), &a).is_ok());
    }

    #[test]
    fn overall_effect_basis_is_homogeneous() {
        let d = kernel_basis(&catalog::independence_2x2());
        assert!(classify_homogeneity(&d)
            .iter()
            .all(|s| s.homogeneity == Homogeneity::Homogeneous));
        assert_eq!(reduce_to_single_nonhomogeneous(&d), d);
    }

    #[test]
    fn homogeneity_of_simple_rows() {
        let s = OddsRatioSpec::from_row(&[1, -1]);
        assert_eq!(s.homogeneity, Homogeneity::Homogeneous);
        assert_eq!(s.positive, vec![1, 0]);
        assert_eq!(s.negative, vec![0, 1]);
        let s = OddsRatioSpec::from_row(&[-1, -1, 1]);
        assert_eq!(s.homogeneity, Homogeneity::NonHomogeneous);
        assert_eq!((s.numerator_degree(), s.denominator_degree()), (1, 2));
    }
}
