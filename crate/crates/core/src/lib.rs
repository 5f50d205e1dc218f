//! Causal DAG learning from datasets with missing entries.
//!
//! The library alternates an E-step that completes the data under the
//! current model (exact conditional-Gaussian statistics for linear Gaussian
//! systems, rejection-sampled posterior draws otherwise) with an M-step
//! that maximizes a penalized noise-space likelihood under a smooth
//! acyclicity constraint. Baseline imputers, synthetic data generation, and
//! structure metrics round out the benchmark pipeline.
//!
//! Data-parallel inner loops (per-row E-steps, benchmark grids) run on
//! rayon when the default `parallel` feature is enabled and fall back to
//! sequential execution without it; results are bit-identical either way.

pub mod baselines;
pub mod data;
pub mod datagen;
pub mod em;
pub mod error;
pub mod estep;
pub mod graph;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod mstep;
pub mod par;
pub mod seed;

pub use data::MaskedDataset;
pub use em::{run_missdag, EmConfig, EmTrace};
pub use error::{Error, Result};
pub use graph::{dag_to_cpdag, h_acyclicity, is_acyclic, threshold_to_dag, Cpdag, WeightedDag};
pub use likelihood::{GaussianParams, NoiseDensity, ResidualModel};
pub use metrics::{cov_frobenius, shd, shd_cpdag, StructureScore};
pub use model::{NoiseFamily, NoiseSpec, SemFunction, SemModel};
pub use mstep::{ModelClass, SolverConfig, SolverMethod};
