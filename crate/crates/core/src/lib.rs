//! Maximum likelihood fitting of relational log-linear models.
//!
//! A relational model on a finite cell set `I` is given by a 0/1 matrix `A`
//! whose rows mark subsets of cells: `log δ = A'β`. When the all-ones vector
//! is not in the row space of `A` the probability version of the model is a
//! curved family, and classical iterative scaling does not converge to the
//! MLE. [`solvers::gipf`] does.

pub mod baselines;
pub mod catalog;
pub mod divergence;
pub mod io;
pub mod model;
mod rational;
pub mod solvers;
pub mod sweep;

pub use baselines::{gis, iis, BaselineError, BaselineFit, BaselineOptions, GisOptions};
pub use divergence::{bregman, kl_divergence, subset_sums, CellVector, ObservedTable, Scheme};
pub use model::{
    classify_homogeneity, constant_rowsum_equivalent, has_overall_effect, kernel_basis,
    KernelBasis, ModelError, ModelMatrix,
};
pub use solvers::{
    gamma_bracket, gipf, ipf_gamma, FitResult, GammaMethod, GipfOptions, IpfOptions, SolveError,
};
