//! Batching arrivals to trade waiting time against processing cost.
//!
//! Samples arrive over time and are processed in batches; a batch of samples
//! costs `f(batch)` and every sample pays its waiting time. The crate offers
//! the exact offline optimum ([`offline`]), online policies ([`online`]), an
//! adaptive lower-bound construction ([`adversary`]), Poisson simulation
//! studies ([`sim`]) and CSV formats ([`io`]).

pub mod adversary;
pub mod cost;
pub mod error;
pub mod instance;
pub mod io;
pub mod offline;
pub mod online;
pub mod sim;

pub use cost::{gamma, validate_cost_function, CostFunction, FeatureId, FeatureMultiset, Gamma};
pub use error::{Error, Result};
pub use instance::{cost_of, Batch, ProblemInstance, Schedule, ScheduleCost};
pub use offline::{brute_force_optimum, dual_recursion, ilp_certificate, osp};
pub use online::{
    competitive_ratio_bound, run_fixed_delay, run_fixed_size, run_policy, run_wta, PolicyConfig,
};
