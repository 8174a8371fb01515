//! Simulation and diagnostics for positive jump-diffusions with no negative
//! jumps. The goal is to exhibit entrance from infinity: first-passage times
//! that stay bounded as the start grows, and laws that settle down with them.

// `!(a < b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod output;
pub mod parallel;
pub mod passage;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use boundary::{classify, BoundaryReport, Criterion, Verdict};
pub use coupling::{gronwall_check, simulate_flow, simulate_flows, FlowEnsemble, GronwallCheck};
pub use diagnostics::{
    entrance_profile, fdd_convergence, moment_convergence, semigroup_cauchy, EntranceProfile, FddConvergence, MomentFunction,
    SemigroupCauchy, TestFunction,
};
pub use error::{Error, Result};
pub use model::{validate, LevyMeasure, ProcessSpec, RateFunction, ValidationReport};
pub use passage::{estimate_exp_moment, estimate_passage, markov_decomposition_check, tail_geometric_fit, PassageEstimate};
pub use simulate::{simulate_ensemble, simulate_path, Path, PathEnsemble, SimConfig, SmallJumpMode};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
