#![allow(dead_code)]

use std::path::PathBuf;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::rngs::StdRng;
use rand::Rng;
use relfit::io::{read_data, read_model, ModelFile};
use relfit::model::ModelMatrix;
use relfit::{ObservedTable, Scheme};

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn shipped_model(name: &str) -> ModelFile {
    read_model(&models_dir().join(name)).expect("shipped model parses")
}

pub fn shipped_data(name: &str, cells: usize, scheme: Scheme) -> ObservedTable {
    let counts = read_data(&models_dir().join(name), cells).expect("shipped data parses");
    ObservedTable::new(counts, scheme).expect("shipped data is valid")
}

/// A shipped model with one of its data files and a sampling scheme.
pub struct Case {
    pub name: &'static str,
    pub model: ModelFile,
    pub observed: ObservedTable,
}

pub fn shipped_cases() -> Vec<Case> {
    let specs = [
        (
            "curved, proportions",
            "aitchison_silvey.model",
            "aitchison_silvey_q.data",
            Scheme::Multinomial,
        ),
        (
            "curved, counts",
            "aitchison_silvey.model",
            "aitchison_silvey_counts.data",
            Scheme::Poisson,
        ),
        (
            "curved, counts, multinomial",
            "aitchison_silvey.model",
            "aitchison_silvey_counts.data",
            Scheme::Multinomial,
        ),
        (
            "2x2, proportions",
            "independence_2x2.model",
            "independence_2x2_q.data",
            Scheme::Multinomial,
        ),
        (
            "2x2, counts",
            "independence_2x2.model",
            "independence_2x2_counts.data",
            Scheme::Poisson,
        ),
    ];
    specs
        .into_iter()
        .map(|(name, m, d, scheme)| {
            let model = shipped_model(m);
            let observed = shipped_data(d, model.matrix.ncells(), scheme);
            Case {
                name,
                model,
                observed,
            }
        })
        .collect()
}

/// Exact rank by rational Gaussian elimination.
pub fn exact_rank(rows: &[Vec<i64>]) -> usize {
    let mut m: Vec<Vec<BigRational>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|&v| BigRational::from_integer(BigInt::from(v)))
                .collect()
        })
        .collect();
    let ncols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..ncols {
        let Some(p) = (rank..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(rank, p);
        let pivot = m[rank].clone();
        for row in m.iter_mut().skip(rank + 1) {
            if row[c].is_zero() {
                continue;
            }
            let f = &row[c] / &pivot[c];
            for (v, pv) in row.iter_mut().zip(&pivot) {
                *v -= &f * pv;
            }
        }
        rank += 1;
    }
    rank
}

/// `δ(i) = Π_j θ_j^{a_ji}`.
pub fn in_model(a: &ModelMatrix, theta: &[f64]) -> Vec<f64> {
    (0..a.ncells())
        .map(|i| {
            (0..a.nsubsets())
                .map(|j| theta[j].powi(i32::from(a.row(j)[i])))
                .product()
        })
        .collect()
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Random valid model matrix; with `overall_effect` the first two rows (in
/// a shuffled position) partition the cells, so `1` is in the row space.
pub fn random_model(
    rng: &mut StdRng,
    max_cells: usize,
    max_subsets: usize,
    overall_effect: bool,
) -> ModelMatrix {
    loop {
        let ncells = rng.random_range(3..=max_cells);
        let nsub = rng.random_range(2..=max_subsets.min(ncells));
        let mut rows: Vec<Vec<i64>> = Vec::with_capacity(nsub);
        if overall_effect {
            if rng.random_bool(0.3) {
                rows.push(vec![1; ncells]);
            } else {
                let first: Vec<i64> = (0..ncells)
                    .map(|_| i64::from(rng.random_bool(0.5)))
                    .collect();
                rows.push(first.iter().map(|v| 1 - v).collect());
                rows.push(first);
            }
        }
        while rows.len() < nsub {
            rows.push(
                (0..ncells)
                    .map(|_| i64::from(rng.random_bool(0.4)))
                    .collect(),
            );
        }
        for k in (1..rows.len()).rev() {
            rows.swap(k, rng.random_range(0..=k));
        }
        if let Ok(a) = ModelMatrix::new(rows) {
            if overall_effect == relfit::has_overall_effect(&a) {
                return a;
            }
        }
    }
}

pub fn random_distribution(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}
