//! Defender cost model and the reserve-configuration search.
//!
//! Rows of the cost matrix are the defender strategies, columns the attack
//! outcome:
//!
//! |         | not burst | burst   |
//! |---------|-----------|---------|
//! | Regular | 0         | V       |
//! | Safety  | c         | c + V   |
//!
//! where `c` is the price of the reserve. The total cost weighs the Safety
//! row by the probability that the pre-exit observation is still below half
//! the network and the Regular row by the complement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::oracle::Oracle;
use crate::estimators::{estimate_pre_exit_distribution, CommonPaths, McConfig};
use crate::process::{GameParams, Mode, ReservePolicy};
use crate::stats::Interval;

/// How the reserve is priced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReservePricing {
    /// `c_b * n`: every owned node is paid for.
    #[default]
    PerNode,
    /// `c_b * n * rho`: only the expected available nodes are paid for.
    ExpectedAvailability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub unit_safety_cost: f64,
    pub burst_loss: f64,
    pub pricing: ReservePricing,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            unit_safety_cost: 0.0,
            burst_loss: 0.0,
            pricing: ReservePricing::PerNode,
        }
    }
}

impl CostParams {
    pub fn new(unit_safety_cost: f64, burst_loss: f64) -> Self {
        Self {
            unit_safety_cost,
            burst_loss,
            pricing: ReservePricing::PerNode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.unit_safety_cost.is_finite() && self.unit_safety_cost >= 0.0) {
            return Err(Error::invalid(
                "costs.unit_safety_cost",
                "must be finite and >= 0",
            ));
        }
        if !(self.burst_loss.is_finite() && self.burst_loss >= 0.0) {
            return Err(Error::invalid(
                "costs.burst_loss",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

pub fn reserve_cost(policy: &ReservePolicy, costs: &CostParams) -> f64 {
    let n = f64::from(policy.reserve_count);
    match costs.pricing {
        ReservePricing::PerNode => costs.unit_safety_cost * n,
        ReservePricing::ExpectedAvailability => costs.unit_safety_cost * n * policy.availability,
    }
}

/// Strategy-by-outcome costs together with the burst probability that
/// weighs the columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    /// `entries[strategy][outcome]`, strategy 0 = Regular, outcome 1 = burst.
    pub entries: [[f64; 2]; 2],
    pub burst_probability: f64,
}

impl CostMatrix {
    pub fn row(&self, strategy: Mode) -> [f64; 2] {
        match strategy {
            Mode::Regular => self.entries[0],
            Mode::Safety => self.entries[1],
        }
    }

    pub fn expected(&self, strategy: Mode) -> f64 {
        let [not_burst, burst] = self.row(strategy);
        not_burst * (1.0 - self.burst_probability) + burst * self.burst_probability
    }
}

pub fn cost_matrix(costs: &CostParams, policy: &ReservePolicy, q: f64) -> CostMatrix {
    let c = reserve_cost(policy, costs);
    let v = costs.burst_loss;
    CostMatrix {
        entries: [[0.0, v], [c, c + v]],
        burst_probability: q,
    }
}

/// Row expectation: `V q` for Regular, `c + V q` for Safety.
pub fn expected_cost(strategy: Mode, costs: &CostParams, policy: &ReservePolicy, q: f64) -> f64 {
    let c = reserve_cost(policy, costs);
    match strategy {
        Mode::Regular => costs.burst_loss * q,
        Mode::Safety => c + costs.burst_loss * q,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyCosts {
    pub regular_expected: f64,
    pub safety_expected: f64,
    pub total: f64,
    pub reserve_cost: f64,
    pub q0: f64,
    pub q1: f64,
    pub p_below: f64,
    pub n: u32,
    pub rho: f64,
}

pub fn total_cost(
    costs: &CostParams,
    policy: &ReservePolicy,
    q0: f64,
    q1: f64,
    p_below: f64,
) -> StrategyCosts {
    let c = reserve_cost(policy, costs);
    let v = costs.burst_loss;
    let safe_branch = c * (1.0 - q1) + (c + v) * q1;
    StrategyCosts {
        regular_expected: v * q0,
        safety_expected: c + v * q1,
        total: safe_branch * p_below + v * q0 * (1.0 - p_below),
        reserve_cost: c,
        q0,
        q1,
        p_below,
        n: policy.reserve_count,
        rho: policy.availability,
    }
}

/// Whether the reserve can pay for itself: `V q0 > c` and
/// `n >= c / (V q0 - c)`. A free reserve (`c = 0`) always passes, since the
/// bound is then zero.
pub fn feasibility(policy: &ReservePolicy, costs: &CostParams, q0: f64) -> bool {
    let c = reserve_cost(policy, costs);
    if c == 0.0 {
        return true;
    }
    let margin = costs.burst_loss * q0 - c;
    margin > 0.0 && f64::from(policy.reserve_count) >= c / margin
}

fn default_rho_step() -> f64 {
    0.05
}

fn default_n_max() -> u32 {
    10
}

/// `n` in `0..=n_max`; `rho` in `step, 2 step, ...` up to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    #[serde(default = "default_rho_step")]
    pub rho_step: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            rho_step: default_rho_step(),
        }
    }
}

impl SearchGrid {
    pub fn new(n_max: u32, rho_step: f64) -> Self {
        Self { n_max, rho_step }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_step > 0.0 && self.rho_step <= 1.0) {
            return Err(Error::invalid("grid.rho_step", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn rho_values(&self) -> Vec<f64> {
        let steps = (1.0 / self.rho_step + 1e-9).floor() as u32;
        (1..=steps)
            // round away accumulation noise such as 3 * 0.05 = 0.15000000000000002
            .map(|k| ((f64::from(k) * self.rho_step * 1e12).round() / 1e12).min(1.0))
            .collect()
    }

    /// Grid points in lexicographic `(n, rho)` order.
    pub fn points(&self) -> Vec<ReservePolicy> {
        let rhos = self.rho_values();
        (0..=self.n_max)
            .flat_map(|n| rhos.iter().map(move |&rho| ReservePolicy::new(n, rho)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub value: f64,
    pub ci: Interval,
}

impl ProbabilityEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            ci: Interval {
                low: value,
                high: value,
            },
        }
    }
}

/// Source of the probabilities the cost model needs.
pub trait BurstModel: Sync {
    fn regular(&self) -> Result<ProbabilityEstimate>;
    fn safety(&self, policy: &ReservePolicy) -> Result<ProbabilityEstimate>;
    /// `None` when no path has a pre-exit epoch, i.e. the defender never
    /// gets the chance to request the reserve.
    fn p_below(&self) -> Result<Option<f64>>;
}

/// Exact probabilities from the lattice oracle.
pub struct OracleModel {
    oracle: Oracle,
}

impl OracleModel {
    pub fn new(params: &GameParams) -> Result<Self> {
        Ok(Self {
            oracle: Oracle::new(params)?,
        })
    }
}

impl BurstModel for OracleModel {
    fn regular(&self) -> Result<ProbabilityEstimate> {
        Ok(ProbabilityEstimate::exact(
            self.oracle.burst_probability(0)?,
        ))
    }

    fn safety(&self, policy: &ReservePolicy) -> Result<ProbabilityEstimate> {
        Ok(ProbabilityEstimate::exact(
            self.oracle.safety_burst_probability(policy)?,
        ))
    }

    fn p_below(&self) -> Result<Option<f64>> {
        match self.oracle.pre_exit_distribution() {
            Ok(d) => Ok(Some(d.p_below)),
            Err(Error::NoPreExitEpoch) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Monte Carlo probabilities with common random numbers across the grid.
pub struct MonteCarloModel {
    paths: CommonPaths,
    p_below: Option<f64>,
}

impl MonteCarloModel {
    pub fn new(params: &GameParams, max_reserve: u32, mc: &McConfig) -> Result<Self> {
        let paths = CommonPaths::simulate(params, max_reserve, mc)?;
        let p_below = match estimate_pre_exit_distribution(params, mc) {
            Ok(d) => Some(d.p_below),
            Err(Error::NoPreExitEpoch) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { paths, p_below })
    }

    pub fn paths(&self) -> &CommonPaths {
        &self.paths
    }
}

impl BurstModel for MonteCarloModel {
    fn regular(&self) -> Result<ProbabilityEstimate> {
        let e = self.paths.regular();
        Ok(ProbabilityEstimate {
            value: e.q_hat,
            ci: e.ci,
        })
    }

    fn safety(&self, policy: &ReservePolicy) -> Result<ProbabilityEstimate> {
        let e = self.paths.safety(policy)?;
        Ok(ProbabilityEstimate {
            value: e.q_hat,
            ci: e.ci,
        })
    }

    fn p_below(&self) -> Result<Option<f64>> {
        Ok(self.p_below)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub n: u32,
    pub rho: f64,
    pub q1: ProbabilityEstimate,
    pub costs: StrategyCosts,
    pub total_ci: Interval,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// `(n*, rho*)`.
    pub best: (u32, f64),
    pub best_cost: f64,
    pub q0: ProbabilityEstimate,
    pub p_below: f64,
    /// False when no path reaches a pre-exit epoch; `p_below` is then 0.
    pub pre_exit_defined: bool,
    /// Per `rho`, the smallest `n >= 1` whose Safety expectation does not
    /// exceed the Regular one.
    pub frontier: Vec<(u32, f64)>,
    /// Lexicographically smallest frontier point.
    pub frontier_infimum: Option<(u32, f64)>,
    /// Feasible points whose total-cost interval overlaps the optimum's.
    pub indistinguishable: Vec<(u32, f64)>,
    pub infeasible_points: usize,
    pub surface: Vec<SurfacePoint>,
}

/// Evaluates every grid point. Points are independent; the output keeps the
/// grid's lexicographic order.
pub fn evaluate_surface<M: BurstModel>(
    model: &M,
    costs: &CostParams,
    grid: &SearchGrid,
) -> Result<(ProbabilityEstimate, Option<f64>, Vec<SurfacePoint>)> {
    costs.validate()?;
    grid.validate()?;
    let q0 = model.regular()?;
    let p_opt = model.p_below()?;
    let p = p_opt.unwrap_or(0.0);
    let surface = grid
        .points()
        .par_iter()
        .map(|policy| {
            let q1 = model.safety(policy)?;
            let costs_here = total_cost(costs, policy, q0.value, q1.value, p);
            // total is non-decreasing in q1
            let low = total_cost(costs, policy, q0.value, q1.ci.low, p).total;
            let high = total_cost(costs, policy, q0.value, q1.ci.high, p).total;
            Ok(SurfacePoint {
                n: policy.reserve_count,
                rho: policy.availability,
                q1,
                costs: costs_here,
                total_ci: Interval { low, high },
                feasible: feasibility(policy, costs, q0.value),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((q0, p_opt, surface))
}

/// Feasible grid point of least total cost; exact ties go to the smaller
/// `n`, then the smaller `rho`.
pub fn optimize<M: BurstModel>(
    model: &M,
    costs: &CostParams,
    grid: &SearchGrid,
) -> Result<OptimizationResult> {
    let (q0, p_opt, surface) = evaluate_surface(model, costs, grid)?;
    let best = surface
        .iter()
        .filter(|s| s.feasible)
        .fold(None::<&SurfacePoint>, |best, s| match best {
            Some(b) if b.costs.total <= s.costs.total => Some(b),
            _ => Some(s),
        })
        .ok_or(Error::NoFeasiblePoint)?;

    let indistinguishable = surface
        .iter()
        .filter(|s| s.feasible && !std::ptr::eq(*s, best) && s.total_ci.overlaps(&best.total_ci))
        .map(|s| (s.n, s.rho))
        .collect();

    let mut frontier: Vec<(u32, f64)> = Vec::new();
    for rho in grid.rho_values() {
        let hit = surface.iter().find(|s| {
            s.rho == rho && s.n >= 1 && s.costs.safety_expected <= s.costs.regular_expected
        });
        if let Some(s) = hit {
            frontier.push((s.n, s.rho));
        }
    }
    let frontier_infimum = frontier
        .iter()
        .copied()
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    Ok(OptimizationResult {
        best: (best.n, best.rho),
        best_cost: best.costs.total,
        q0,
        p_below: p_opt.unwrap_or(0.0),
        pre_exit_defined: p_opt.is_some(),
        frontier,
        frontier_infimum,
        indistinguishable,
        infeasible_points: surface.iter().filter(|s| !s.feasible).count(),
        surface,
    })
}

/// Monte Carlo optimization: shared paths for `q0` and every `q1`.
pub fn optimize_monte_carlo(
    params: &GameParams,
    costs: &CostParams,
    grid: &SearchGrid,
    mc: &McConfig,
) -> Result<OptimizationResult> {
    grid.validate()?;
    let model = MonteCarloModel::new(params, grid.n_max, mc)?;
    optimize(&model, costs, grid)
}
