//! Exit laws, Green functions, coarse-graining and multiscale statistics
//! for random walks in isotropic random environments on `Z^d`.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_experiments;
pub mod coarse_grain;
pub mod environment;
pub mod error;
pub mod exit_bounds;
pub mod exit_solver;
pub mod grid;
pub mod kernel;
pub mod lattice;
pub mod linalg;
pub mod multiscale_stats;
pub mod perturbation;
pub mod quadrature;
pub mod reference_laws;
pub mod srw;
pub mod stats;

pub use error::{Error, Result};
