use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use relfit::baselines::{
    gis, iis, BaselineError, BaselineFit, BaselineOptions, GisMatrix, GisOptions,
};
use relfit::io::{format_sig, read_data, read_model, FitReport, ModelFile};
use relfit::model::{
    classify_homogeneity, constant_rowsum_equivalent, has_overall_effect,
    reduce_to_single_nonhomogeneous, Homogeneity,
};
use relfit::solvers::{
    gipf, ipf_gamma, FitResult, GammaMethod, GipfOptions, IpfOptions, ResidualMode, SolveError,
};
use relfit::sweep::{parse_grid_step, sweep, DEFAULT_BIN_WIDTH};
use relfit::{bregman, subset_sums, ModelMatrix, ObservedTable, Scheme};

/// Fit relational log-linear models by generalized iterative proportional fitting.
#[derive(Debug, Parser)]
#[command(name = "relfit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Maximum likelihood fit of a model to a data vector.
    Fit(FitArgs),
    /// Report the structure of a model matrix.
    Check(CheckArgs),
    /// Run several algorithms on the same data and tabulate their limits.
    Compare(CompareArgs),
    /// IIS limit totals over an equally spaced grid on the simplex.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Convergence tolerance on subset sums.
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Iteration budget of each inner run.
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    /// Measure subset-sum residuals relative to the targets.
    #[arg(long)]
    relative_residual: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: Scheme,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "bisection")]
    gamma_method: GammaMethod,
    /// Budget of adjustment-factor steps (bisection) or grid resolutions.
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    /// Write the JSON fit report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: Scheme,
    #[command(flatten)]
    solver: SolverArgs,
    /// Comma-separated subset of gipf, gis, iis, ipf1.
    #[arg(long, value_delimiter = ',', default_value = "gipf,gis,iis,ipf1")]
    algorithms: Vec<Algorithm>,
    /// Let GIS append the slack row `max a - a`. This changes the model
    /// unless the overall effect is present.
    #[arg(long)]
    slack_feature: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Grid spacing `1/N`, as a fraction or a decimal.
    #[arg(long)]
    grid_step: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Algorithm {
    Gipf,
    Gis,
    Iis,
    Ipf1,
}

impl Algorithm {
    fn name(self) -> &'static str {
        match self {
            Algorithm::Gipf => "gipf",
            Algorithm::Gis => "gis",
            Algorithm::Iis => "iis",
            Algorithm::Ipf1 => "ipf1",
        }
    }
}

/// Exit status 1: bad input or usage. Exit status 2: a solver did not
/// converge or an algorithm does not apply.
enum Failure {
    Input(anyhow::Error),
    Solver(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn g(x: f64) -> String {
    format_sig(x, 10)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| g(v)).collect::<Vec<_>>().join(" ")
}

fn load(model: &Path, data: &Path, scheme: Scheme) -> Result<(ModelFile, ObservedTable), Failure> {
    let model_file =
        read_model(model).with_context(|| format!("reading model {}", model.display()))?;
    let counts = read_data(data, model_file.matrix.ncells())
        .with_context(|| format!("reading data {}", data.display()))?;
    let observed = ObservedTable::new(counts, scheme)?;
    Ok((model_file, observed))
}

fn ipf_options(s: &SolverArgs) -> Result<IpfOptions, Failure> {
    if !(s.eps > 0.0 && s.eps.is_finite()) {
        return Err(Failure::Input(anyhow!(
            "--eps must be positive, got {}",
            s.eps
        )));
    }
    Ok(IpfOptions {
        eps: s.eps,
        max_iter: s.max_iter,
        residual: if s.relative_residual {
            ResidualMode::Relative
        } else {
            ResidualMode::Absolute
        },
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_fit(model: &ModelFile, report: &FitReport) {
    let mut out = String::new();
    let _ = writeln!(out, "scheme: {}", scheme_name(report.scheme));
    let _ = writeln!(
        out,
        "overall effect: {}",
        if report.overall_effect {
            "present"
        } else {
            "absent"
        }
    );
    let _ = writeln!(out, "converged: {}", report.converged);
    let _ = writeln!(out, "gamma_hat: {}", g(report.gamma_hat));
    let _ = writeln!(out, "total: {}", g(report.total));
    let _ = writeln!(
        out,
        "max subset-sum residual: {}",
        g(report.max_subsetsum_residual)
    );
    let _ = writeln!(
        out,
        "odds-ratio residual: {}",
        g(report.odds_ratio_residual)
    );
    let _ = writeln!(
        out,
        "iterations: {} (all runs {}, outer steps {})",
        report.iterations, report.total_iterations, report.outer_iterations
    );
    let _ = writeln!(out, "delta_hat:");
    for (i, v) in report.delta_hat.iter().enumerate() {
        let label = model
            .matrix
            .cell_labels()
            .map_or_else(|| (i + 1).to_string(), |l| l[i].clone());
        let _ = writeln!(out, "  {label} {}", g(*v));
    }
    let _ = writeln!(out, "theta_hat:");
    for (j, v) in report.theta_hat.iter().enumerate() {
        let label = model
            .matrix
            .subset_labels()
            .map_or_else(|| (j + 1).to_string(), |l| l[j].clone());
        let _ = writeln!(out, "  {label} {}", g(*v));
    }
    print!("{out}");
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Poisson => "poisson",
        Scheme::Multinomial => "multinomial",
    }
}

fn run_fit(args: FitArgs) -> Result<(), Failure> {
    let (model, observed) = load(&args.model, &args.data, args.scheme)?;
    let opts = GipfOptions {
        ipf: ipf_options(&args.solver)?,
        method: args.gamma_method,
        max_outer: args.max_outer,
    };
    let (fit, failure) = match gipf(&model.matrix, &observed, &opts) {
        Ok(fit) => (fit, None),
        Err(e) => match e.diagnostics() {
            Some(d) => (d.clone(), Some(e)),
            None => return Err(e.into()),
        },
    };
    let report = FitReport::new(
        &model,
        &fit,
        args.scheme,
        args.gamma_method,
        args.solver.eps,
    );
    if let Some(path) = &args.out {
        write_file(path, &report.to_json())?;
    }
    print_fit(&model, &report);
    match failure {
        Some(e) => Err(Failure::Solver(e.into())),
        None => Ok(()),
    }
}

fn run_check(args: CheckArgs) -> Result<(), Failure> {
    let model = read_model(&args.model)
        .with_context(|| format!("reading model {}", args.model.display()))?;
    let a = &model.matrix;
    let overall = has_overall_effect(a);
    let mut out = String::new();
    let _ = writeln!(out, "subsets (J): {}", a.nsubsets());
    let _ = writeln!(out, "cells (|I|): {}", a.ncells());
    let _ = writeln!(
        out,
        "overall effect: {}",
        if overall { "present" } else { "absent" }
    );
    if overall {
        if let Ok(crs) = constant_rowsum_equivalent(a) {
            let _ = writeln!(out, "constant row-sum equivalent: column sums {}", crs.c);
        }
    }
    let source = if model.kernel.is_some() {
        "from file"
    } else {
        "computed"
    };
    let kernel = reduce_to_single_nonhomogeneous(&model.kernel_or_computed());
    let specs = classify_homogeneity(&kernel);
    let _ = writeln!(out, "kernel basis ({source}, {} rows):", kernel.len());
    for spec in &specs {
        let entries: Vec<String> = spec.row.iter().map(|v| v.to_string()).collect();
        let kind = match spec.homogeneity {
            Homogeneity::Homogeneous => "homogeneous",
            Homogeneity::NonHomogeneous => "non-homogeneous",
        };
        let _ = writeln!(
            out,
            "  [{}] {kind} (degrees {}/{})",
            entries.join(" "),
            spec.numerator_degree(),
            spec.denominator_degree()
        );
    }
    let nonhom = specs
        .iter()
        .filter(|s| s.homogeneity == Homogeneity::NonHomogeneous)
        .count();
    let _ = writeln!(out, "non-homogeneous rows: {nonhom}");
    print!("{out}");
    Ok(())
}

struct Row {
    name: &'static str,
    outcome: Result<(Vec<f64>, f64, usize), String>,
}

fn baseline_row(r: Result<BaselineFit, BaselineError>) -> Result<(Vec<f64>, f64, usize), String> {
    r.map(|f| {
        (
            f.p.as_slice().to_vec(),
            f.max_subsetsum_residual,
            f.iterations,
        )
    })
    .map_err(|e| e.to_string())
}

fn solver_row(r: Result<FitResult, SolveError>) -> Result<(Vec<f64>, f64, usize), String> {
    r.map(|f| {
        (
            f.delta_hat.as_slice().to_vec(),
            f.max_subsetsum_residual,
            f.total_iterations,
        )
    })
    .map_err(|e| e.to_string())
}

/// GIS as it applies: directly on constant-column-sum matrices, through the
/// constant-row-sum equivalent when the overall effect is present.
fn gis_for(
    a: &ModelMatrix,
    q: &[f64],
    iter: BaselineOptions,
    slack_feature: bool,
) -> Result<BaselineFit, BaselineError> {
    if slack_feature {
        let fit = gis(
            a,
            q,
            &GisOptions {
                iter,
                slack_feature: true,
                ..GisOptions::default()
            },
        )?;
        if let GisMatrix::SlackFeature { slack_row } = &fit.matrix {
            let row: Vec<String> = slack_row.iter().map(|v| v.to_string()).collect();
            println!(
                "gis: slack row [{}] appended; the fitted model is not the input model",
                row.join(" ")
            );
        }
        return Ok(fit.fit);
    }
    let plain = GisOptions {
        iter,
        ..GisOptions::default()
    };
    match gis(a, q, &plain) {
        Err(BaselineError::RowSumNotConstant { .. }) if has_overall_effect(a) => {
            let fit = gis(
                a,
                q,
                &GisOptions {
                    auto_transform: true,
                    ..plain
                },
            )?;
            if let GisMatrix::ConstantRowSum { .. } = fit.matrix {
                log::info!(
                    "gis: using the constant row-sum equivalent, c = {}",
                    fit.row_sum
                );
            }
            Ok(fit.fit)
        }
        other => other.map(|f| f.fit),
    }
}

fn run_compare(args: CompareArgs) -> Result<(), Failure> {
    let (model, observed) = load(&args.model, &args.data, args.scheme)?;
    let a = &model.matrix;
    let ipf = ipf_options(&args.solver)?;
    let q = observed.q();
    let base = BaselineOptions {
        eps: ipf.eps,
        max_iter: ipf.max_iter,
    };
    let reference = gipf(
        a,
        &observed,
        &GipfOptions {
            ipf,
            ..GipfOptions::default()
        },
    );
    let kernel = model.kernel_or_computed();

    let mut rows = Vec::new();
    for &alg in &args.algorithms {
        let outcome = match alg {
            Algorithm::Gipf => solver_row(reference.clone()),
            Algorithm::Ipf1 => solver_row(ipf_gamma(a, &q, 1.0, &ipf)),
            Algorithm::Iis => baseline_row(iis(a, &q, &base)),
            Algorithm::Gis => baseline_row(gis_for(a, &q, base, args.slack_feature)),
        };
        rows.push(Row {
            name: alg.name(),
            outcome,
        });
    }

    let gipf_p = reference
        .as_ref()
        .ok()
        .map(|f| f.delta_hat.as_slice().to_vec());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>17} {:>17} {:>17} {:>17} {:>10}",
        "alg", "total", "subset_residual", "odds_residual", "bregman_to_gipf", "iterations"
    );
    let mut failed = false;
    for row in &rows {
        match &row.outcome {
            Ok((p, resid, iters)) => {
                let dist = gipf_p
                    .as_ref()
                    .and_then(|r| bregman(p, r).ok())
                    .map_or_else(|| "n/a".to_string(), g);
                let _ = writeln!(
                    out,
                    "{:<6} {:>17} {:>17} {:>17} {:>17} {:>10}",
                    row.name,
                    g(p.iter().sum()),
                    g(*resid),
                    g(kernel.log_residual(p)),
                    dist,
                    iters
                );
            }
            Err(msg) => {
                failed = true;
                let _ = writeln!(out, "{:<6} error: {msg}", row.name);
            }
        }
    }
    if let Some(f) = reference
        .as_ref()
        .ok()
        .filter(|_| args.algorithms.contains(&Algorithm::Gipf))
    {
        let _ = writeln!(out, "gipf gamma_hat: {}", g(f.gamma_hat));
        let aq = subset_sums(a, &q)?;
        let _ = writeln!(out, "observed subset sums: {}", join(&aq));
    }
    print!("{out}");
    if failed {
        Err(Failure::Solver(anyhow!("at least one algorithm failed")))
    } else {
        Ok(())
    }
}

fn run_sweep(args: SweepArgs) -> Result<(), Failure> {
    let model = read_model(&args.model)
        .with_context(|| format!("reading model {}", args.model.display()))?;
    let ipf = ipf_options(&args.solver)?;
    let n = parse_grid_step(&args.grid_step)?;
    let opts = BaselineOptions {
        eps: ipf.eps,
        max_iter: ipf.max_iter,
    };
    let report = sweep(&model.matrix, n, &opts, DEFAULT_BIN_WIDTH)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_file(&args.out, &(json + "\n"))?;

    let mut out = String::new();
    let _ = writeln!(out, "grid step: 1/{n}");
    let _ = writeln!(out, "evaluated: {}", report.evaluated);
    let _ = writeln!(out, "failed: {}", report.failures.len());
    let _ = writeln!(
        out,
        "totals with |total - 1| > {}: {} ({})",
        g(DEFAULT_BIN_WIDTH),
        report.far_from_one,
        g(report.fraction_far_from_one())
    );
    if let (Some(min), Some(max)) = (
        report.totals.iter().copied().reduce(f64::min),
        report.totals.iter().copied().reduce(f64::max),
    ) {
        let _ = writeln!(out, "total range: {} .. {}", g(min), g(max));
    }
    let _ = writeln!(out, "histogram:");
    let h = &report.histogram;
    for (k, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "  [{}, {}) {c}", g(h.edges[k]), g(h.edges[k + 1]));
    }
    print!("{out}");
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Solver(anyhow!(
            "{} grid points did not converge",
            report.failures.len()
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RELFIT_LOG", "off")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Check(a) => run_check(a),
        Command::Compare(a) => run_compare(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
