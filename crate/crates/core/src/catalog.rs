//! Models and data used throughout the documentation and tests.

use crate::model::ModelMatrix;

/// Independence of three features A, B, C when no unaffected case exists.
/// Cells in order `A, B, C, AB, AC, BC, ABC`; one subset per feature.
pub fn aitchison_silvey_rows() -> Vec<Vec<i64>> {
    vec![
        vec![1, 0, 0, 1, 1, 0, 1],
        vec![0, 1, 0, 1, 0, 1, 1],
        vec![0, 0, 1, 0, 1, 1, 1],
    ]
}

pub fn aitchison_silvey() -> ModelMatrix {
    ModelMatrix::new(aitchison_silvey_rows())
        .and_then(|m| m.with_cell_labels(labels(&["A", "B", "C", "AB", "AC", "BC", "ABC"])))
        .and_then(|m| m.with_subset_labels(labels(&["S_A", "S_B", "S_C"])))
        .expect("valid model")
}

/// Observed distribution for the three-feature example.
pub const AITCHISON_SILVEY_Q: [f64; 7] = [0.04, 0.04, 0.04, 0.04, 0.04, 0.24, 0.56];

/// Row/column independence in a 2x2 table, cells `11, 12, 21, 22`.
///
/// The two row indicators and the first column indicator; the second column
/// indicator is their combination `r1 + r2 - c1` and is left out to keep
/// full row rank.
pub fn independence_2x2_rows() -> Vec<Vec<i64>> {
    vec![vec![1, 1, 0, 0], vec![0, 0, 1, 1], vec![1, 0, 1, 0]]
}

pub fn independence_2x2() -> ModelMatrix {
    ModelMatrix::new(independence_2x2_rows())
        .and_then(|m| m.with_cell_labels(labels(&["11", "12", "21", "22"])))
        .and_then(|m| m.with_subset_labels(labels(&["row1", "row2", "col1"])))
        .expect("valid model")
}

pub const INDEPENDENCE_2X2_Q: [f64; 4] = [0.4, 0.1, 0.2, 0.3];

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
