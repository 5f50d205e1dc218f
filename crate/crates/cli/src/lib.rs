//! Library surface behind the `missdag` binary: configuration parsing,
//! benchmark grid execution, and the subcommand implementations.

pub mod bench;
pub mod commands;
pub mod config;
pub mod methods;

use std::fmt;
use std::path::PathBuf;

use clap::Args;

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Runtime(String),
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        AppError::Runtime(msg.into())
    }

    pub fn runtime_from(err: impl fmt::Display) -> Self {
        AppError::Runtime(err.to_string())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(msg) => write!(f, "configuration error: {msg}"),
            AppError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    /// Masked data CSV (missing cells empty or NaN).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pre-imputed complete CSV; runs the complete-data solver directly.
    #[arg(long)]
    pub imputed_csv: Option<PathBuf>,
    /// linear_gaussian_ev | linear_gaussian_nv | linear_logcosh | mlp_anm
    #[arg(long)]
    pub model_class: String,
    /// hard_al | soft | exhaustive
    #[arg(long, default_value = "hard_al")]
    pub solver: String,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub em_iters: usize,
    /// Posterior samples per row (Monte Carlo E-step).
    #[arg(long, default_value_t = 10)]
    pub ns: usize,
    /// Truth graph for per-iteration diagnostics in trace.csv.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
