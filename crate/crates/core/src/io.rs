//! Plain-text model and data files, and the JSON fit report.
//!
//! Model file:
//!
//! ```text
//! # comment
//! 3 7                          J |I|
//! cells A B C AB AC BC ABC     optional
//! subsets S_A S_B S_C          optional
//! 1 0 0 1 1 0 1                J rows of 0/1 entries
//! 0 1 0 1 0 1 1
//! 0 0 1 0 1 1 1
//! kernel 4                     optional, followed by that many integer rows
//! -1 -1 0 1 0 0 0
//! ...
//! ```
//!
//! Data file: `|I|` whitespace-separated nonnegative numbers, with `#`
//! comments, laid out over any number of lines.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::Scheme;
use crate::model::{has_overall_effect, kernel_basis, KernelBasis, ModelError, ModelMatrix};
use crate::solvers::{FitResult, GammaMethod};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: {error}")]
    Invalid {
        line: usize,
        column: usize,
        error: ModelError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// A whitespace-separated token with its 1-based position.
#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

/// Non-empty lines with comments stripped, each split into tokens.
fn tokenized_lines(text: &str) -> Vec<Vec<Token<'_>>> {
    text.lines()
        .enumerate()
        .filter_map(|(n, raw)| {
            let body = raw.split('#').next().unwrap_or("");
            let mut tokens = Vec::new();
            let mut start = None;
            for (pos, ch) in body
                .char_indices()
                .chain(std::iter::once((body.len(), ' ')))
            {
                match (ch.is_whitespace(), start) {
                    (false, None) => start = Some(pos),
                    (true, Some(s)) => {
                        tokens.push(Token {
                            text: &body[s..pos],
                            line: n + 1,
                            column: body[..s].chars().count() + 1,
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
            (!tokens.is_empty()).then_some(tokens)
        })
        .collect()
}

fn parse_int<T: std::str::FromStr>(tok: &Token<'_>, what: &str) -> Result<T, IoError> {
    tok.text.parse().map_err(|_| {
        parse_err(
            tok.line,
            tok.column,
            format!("expected {what}, found `{}`", tok.text),
        )
    })
}

/// Parsed model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub matrix: ModelMatrix,
    /// Kernel basis given in the file, already checked against the matrix.
    pub kernel: Option<KernelBasis>,
}

impl ModelFile {
    /// The supplied kernel basis, or one computed from the matrix.
    pub fn kernel_or_computed(&self) -> KernelBasis {
        self.kernel
            .clone()
            .unwrap_or_else(|| kernel_basis(&self.matrix))
    }
}

pub fn parse_model(text: &str) -> Result<ModelFile, IoError> {
    let lines = tokenized_lines(text);
    let mut it = lines.iter().peekable();

    let header = it
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty model file"))?;
    if header.len() != 2 {
        return Err(parse_err(
            header[0].line,
            header[0].column,
            "header must be `J |I|` (two integers)",
        ));
    }
    let nsub: usize = parse_int(&header[0], "number of subsets")?;
    let ncells: usize = parse_int(&header[1], "number of cells")?;
    if nsub == 0 || ncells == 0 {
        return Err(parse_err(
            header[0].line,
            header[0].column,
            "J and |I| must be positive",
        ));
    }

    let mut cell_labels = None;
    let mut subset_labels = None;
    while let Some(line) = it.peek() {
        let keyword = line[0].text;
        let (slot, expected) = match keyword {
            "cells" => (&mut cell_labels, ncells),
            "subsets" => (&mut subset_labels, nsub),
            _ => break,
        };
        let labels: Vec<String> = line[1..].iter().map(|t| t.text.to_string()).collect();
        if labels.len() != expected {
            return Err(parse_err(
                line[0].line,
                line[0].column,
                format!(
                    "`{keyword}` needs {expected} labels, found {}",
                    labels.len()
                ),
            ));
        }
        *slot = Some(labels);
        it.next();
    }

    let mut rows: Vec<Vec<i64>> = Vec::with_capacity(nsub);
    let mut row_lines: Vec<&Vec<Token<'_>>> = Vec::with_capacity(nsub);
    for j in 0..nsub {
        let line = it.next().ok_or_else(|| {
            parse_err(
                lines.last().map_or(1, |l| l[0].line),
                1,
                format!("expected {nsub} matrix rows, found {j}"),
            )
        })?;
        if line.len() != ncells {
            return Err(parse_err(
                line[0].line,
                line[0].column,
                format!(
                    "matrix row {} has {} entries, expected {ncells}",
                    j + 1,
                    line.len()
                ),
            ));
        }
        rows.push(
            line.iter()
                .map(|t| parse_int::<i64>(t, "an integer entry"))
                .collect::<Result<_, _>>()?,
        );
        row_lines.push(line);
    }

    let locate = |e: ModelError| -> IoError {
        let (line, column) = match e {
            ModelError::NonBinaryEntry { row, col, .. } => {
                (row_lines[row][col].line, row_lines[row][col].column)
            }
            ModelError::ZeroRow { row } | ModelError::RankDeficient { row } => {
                (row_lines[row][0].line, row_lines[row][0].column)
            }
            ModelError::ZeroColumn { col } => (row_lines[0][col].line, row_lines[0][col].column),
            _ => (header[0].line, header[0].column),
        };
        IoError::Invalid {
            line,
            column,
            error: e,
        }
    };

    let mut matrix = ModelMatrix::new(rows).map_err(locate)?;
    if let Some(labels) = cell_labels {
        matrix = matrix.with_cell_labels(labels).map_err(locate)?;
    }
    if let Some(labels) = subset_labels {
        matrix = matrix.with_subset_labels(labels).map_err(locate)?;
    }

    let mut kernel = None;
    if let Some(line) = it.next() {
        if line[0].text != "kernel" || line.len() != 2 {
            return Err(parse_err(
                line[0].line,
                line[0].column,
                format!("unexpected `{}` after the matrix rows", line[0].text),
            ));
        }
        let count: usize = parse_int(&line[1], "number of kernel rows")?;
        let mut krows = Vec::with_capacity(count);
        let mut klines = Vec::with_capacity(count);
        for k in 0..count {
            let kl = it.next().ok_or_else(|| {
                parse_err(
                    line[0].line,
                    line[0].column,
                    format!("expected {count} kernel rows, found {k}"),
                )
            })?;
            if kl.len() != ncells {
                return Err(parse_err(
                    kl[0].line,
                    kl[0].column,
                    format!(
                        "kernel row {} has {} entries, expected {ncells}",
                        k + 1,
                        kl.len()
                    ),
                ));
            }
            krows.push(
                kl.iter()
                    .map(|t| parse_int::<i64>(t, "an integer entry"))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            klines.push(kl);
        }
        kernel = Some(KernelBasis::new(krows, &matrix).map_err(|e| {
            let (l, c) = match e {
                ModelError::NotInKernel { row } => (klines[row][0].line, klines[row][0].column),
                _ => (line[0].line, line[0].column),
            };
            IoError::Invalid {
                line: l,
                column: c,
                error: e,
            }
        })?);
        if let Some(extra) = it.next() {
            return Err(parse_err(
                extra[0].line,
                extra[0].column,
                "trailing content after kernel rows",
            ));
        }
    }
    Ok(ModelFile { matrix, kernel })
}

pub fn write_model(model: &ModelFile) -> String {
    let m = &model.matrix;
    let mut out = format!("{} {}\n", m.nsubsets(), m.ncells());
    if let Some(labels) = m.cell_labels() {
        let _ = writeln!(out, "cells {}", labels.join(" "));
    }
    if let Some(labels) = m.subset_labels() {
        let _ = writeln!(out, "subsets {}", labels.join(" "));
    }
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    if let Some(k) = &model.kernel {
        let _ = writeln!(out, "kernel {}", k.len());
        for row in k.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    }
    out
}

/// Parses a data file; `expected` is the number of cells of the model.
pub fn parse_data(text: &str, expected: usize) -> Result<Vec<f64>, IoError> {
    let tokens: Vec<Token<'_>> = tokenized_lines(text).into_iter().flatten().collect();
    let mut values = Vec::with_capacity(tokens.len());
    for t in &tokens {
        let v: f64 = t.text.parse().map_err(|_| {
            parse_err(
                t.line,
                t.column,
                format!("expected a number, found `{}`", t.text),
            )
        })?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(parse_err(
                t.line,
                t.column,
                format!("count {v} must be nonnegative and finite"),
            ));
        }
        values.push(v);
    }
    if values.len() != expected {
        let (line, column) = tokens
            .get(expected)
            .or(tokens.last())
            .map_or((1, 1), |t| (t.line, t.column));
        return Err(parse_err(
            line,
            column,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    if values.iter().sum::<f64>() <= 0.0 {
        return Err(parse_err(1, 1, "counts sum to zero"));
    }
    Ok(values)
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|error| IoError::Io {
        path: path.display().to_string(),
        error,
    })
}

pub fn read_model(path: &Path) -> Result<ModelFile, IoError> {
    parse_model(&read_text(path)?)
}

pub fn read_data(path: &Path, expected: usize) -> Result<Vec<f64>, IoError> {
    parse_data(&read_text(path)?, expected)
}

pub const FIT_FORMAT: &str = "relfit-fit/1";

/// Everything `relfit fit` writes. Floats are stored in shortest round-trip
/// form, so reading a report back reproduces every field exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format: String,
    pub scheme: Scheme,
    pub gamma_method: GammaMethod,
    pub eps: f64,
    pub overall_effect: bool,
    pub converged: bool,
    pub gamma_hat: f64,
    pub total: f64,
    pub iterations: usize,
    pub total_iterations: usize,
    pub outer_iterations: usize,
    pub max_subsetsum_residual: f64,
    /// `‖D log δ̂‖∞`
    pub odds_ratio_residual: f64,
    pub delta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_labels: Option<Vec<String>>,
}

impl FitReport {
    pub fn new(
        model: &ModelFile,
        fit: &FitResult,
        scheme: Scheme,
        gamma_method: GammaMethod,
        eps: f64,
    ) -> Self {
        let kernel = model.kernel_or_computed();
        Self {
            format: FIT_FORMAT.to_string(),
            scheme,
            gamma_method,
            eps,
            overall_effect: has_overall_effect(&model.matrix),
            converged: fit.converged,
            gamma_hat: fit.gamma_hat,
            total: fit.total,
            iterations: fit.iterations,
            total_iterations: fit.total_iterations,
            outer_iterations: fit.outer_iterations,
            max_subsetsum_residual: fit.max_subsetsum_residual,
            odds_ratio_residual: kernel.log_residual(fit.delta_hat.as_slice()),
            delta_hat: fit.delta_hat.as_slice().to_vec(),
            theta_hat: fit.theta_hat.clone(),
            cell_labels: model.matrix.cell_labels().map(<[String]>::to_vec),
            subset_labels: model.matrix.subset_labels().map(<[String]>::to_vec),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let exp = x.abs().log10().floor() as i32;
    if exp < -5 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, x);
        let (mantissa, e) = s.split_once('e').expect("scientific format");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}
