use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite integrand value at node {node}")]
    NumericDomain { node: f64 },

    #[error("no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("invalid observation {0}: squared channel requires y >= 0")]
    InvalidObservation(f64),

    #[error("state evolution covariance is indefinite (eigenvalue {eigenvalue:e}) at iteration {iteration}")]
    SeDegenerate { iteration: usize, eigenvalue: f64 },

    #[error("recursion degenerate at step {step}: sigma = {sigma:e}")]
    RecursionDegenerate {
        step: usize,
        sigma: f64,
        partial: Box<crate::state_evolution::LowerBoundSeq>,
    },

    #[error("state evolution violates Cauchy-Schwarz at row {row}: |E[theta Y]| = {overlap}, bound {bound}")]
    InconsistentSe { row: usize, overlap: f64, bound: f64 },

    #[error("iterate diverged at iteration {iteration} (norm {norm:e})")]
    Divergence { iteration: usize, norm: f64 },

    #[error("power iteration did not converge in {iterations} steps (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("theory domain: {0}")]
    TheoryDomain(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
