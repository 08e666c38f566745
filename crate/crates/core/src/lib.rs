//! Numerical laboratory for confined run-and-tumble dynamics between two
//! plates: a kinetic finite-difference solver with wall-aggregation boundary
//! conditions, a stochastic particle engine for the equivalent jump process,
//! and the diagnostics needed to check conservation, entropy decay, grid
//! convergence, and the frequent-tumble diffusion limit.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernel;
pub mod mc;
pub mod mesh;
pub mod solver;

pub use config::ExperimentConfig;
pub use error::Error;
pub use diagnostics::{
    linf_gap, plain_l2_error, relative_entropy, split_mass, total_mass, weighted_l2_error,
    DiagnosticsReport,
};
pub use kernel::{assemble, diffusion_coeff, f_eps, DiscreteKernel, KernelSpec, Profile};
pub use mesh::{Mesh, StateField};
pub use solver::{ghost_values, run, steady_state, step, RunOutcome, SolverConfig};
