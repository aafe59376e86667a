//! Blockchain governance game for a vehicle network: an attacker and a
//! defender race to accumulate blocks, observed at random epochs. The
//! defender can ask its HQ for reserve honest nodes one observation before
//! the attacker would take the majority; this crate estimates the burst
//! probabilities with and without that reserve and searches for the cheapest
//! reserve configuration.
//!
//! - [`process`]: the observed block race and its exit indices.
//! - [`estimators`]: Monte Carlo estimates and the exact lattice oracle.
//! - [`economics`]: cost matrix, total cost, feasibility and grid search.
//! - [`netsim`]: node-level discrete-event simulation with event logs.
//! - [`config`], [`report`]: run configuration and sweep tables.

pub mod config;
pub mod economics;
pub mod error;
pub mod estimators;
pub mod netsim;
pub mod process;
pub mod report;
pub mod rng;
pub mod stats;

pub use config::{load_config, parse_config, RunConfig};
pub use economics::{
    cost_matrix, expected_cost, feasibility, optimize, optimize_monte_carlo, reserve_cost,
    total_cost, BurstModel, CostParams, MonteCarloModel, OptimizationResult, OracleModel,
    SearchGrid, StrategyCosts,
};
pub use error::{Error, Result};
pub use estimators::oracle::{oracle_burst_probability, Oracle};
pub use estimators::{
    estimate_burst_probability, estimate_joint_functional, estimate_pre_exit_distribution,
    poisson_kernel, BurstEstimate, CommonPaths, McConfig, PreExitDistribution, TransformPoint,
};
pub use netsim::{elect_leader, replay, run_network_sim, SimOutcome, Topology};
pub use process::{
    exit_indices, safety_trigger_epoch, sample_increment_pair, sample_reserve, sample_trajectory,
    GameParams, GameTrajectory, Mode, ReservePolicy, Thresholds,
};
pub use report::OutputRow;
