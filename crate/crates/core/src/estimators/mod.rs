//! Monte Carlo estimators for burst probabilities, the pre-exit law and the
//! joint exit transform, plus the exact lattice oracle in [`oracle`].
//!
//! Trajectory `i` of a batch always draws from substream `(seed, i)`, and all
//! reductions are over integer tallies or ordered sums, so results do not
//! depend on the rayon pool size.

pub mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{
    check_inputs, is_burst, realized_reserve, walk, Epoch, GameParams, Mode, ReservePolicy,
    Thresholds,
};
use crate::rng::{Purpose, Substream};
use crate::stats::{wilson_interval, z_for_level, Interval};

/// Fraction of capped trajectories above which an estimate is flagged.
pub const CAP_WARNING_FRACTION: f64 = 0.01;

fn default_ci_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub num_trajectories: u64,
    pub seed: u64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

impl McConfig {
    pub fn new(num_trajectories: u64, seed: u64) -> Self {
        Self {
            num_trajectories,
            seed,
            ci_level: default_ci_level(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_trajectories == 0 {
            return Err(Error::invalid("mc.trajectories", "must be at least 1"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::invalid(
                "mc.ci_level",
                "must lie strictly between 0 and 1",
            ));
        }
        Ok(())
    }

    pub fn z(&self) -> f64 {
        z_for_level(self.ci_level)
    }

    fn stream(&self, index: u64) -> Substream {
        Substream::new(self.seed, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstEstimate {
    pub mode: Mode,
    pub q_hat: f64,
    pub ci: Interval,
    pub cap_hit_fraction: f64,
    pub samples: u64,
    pub bursts: u64,
}

impl BurstEstimate {
    fn from_counts(mode: Mode, bursts: u64, capped: u64, samples: u64, z: f64) -> Self {
        Self {
            mode,
            q_hat: bursts as f64 / samples as f64,
            ci: wilson_interval(bursts, samples, z),
            cap_hit_fraction: capped as f64 / samples as f64,
            samples,
            bursts,
        }
    }

    pub fn cap_warning(&self) -> bool {
        self.cap_hit_fraction > CAP_WARNING_FRACTION
    }
}

/// What an estimator needs from one stopped path.
#[derive(Debug, Clone, Copy)]
struct PathSummary {
    nu: Option<usize>,
    mu: Option<usize>,
    previous: Option<Epoch>,
    last: Epoch,
}

fn run_path(params: &GameParams, thresholds: &Thresholds, stream: Substream) -> PathSummary {
    let mut rng = stream.rng(Purpose::Increments);
    let mut previous = None;
    let mut last = None;
    let mut nu = None;
    let mut mu = None;
    walk(params, &mut rng, |k, e| {
        previous = last;
        last = Some(*e);
        if e.attacker >= thresholds.safety {
            nu = Some(k);
        }
        if e.defender >= thresholds.regular {
            mu = Some(k);
        }
        nu.is_some() || mu.is_some()
    });
    PathSummary {
        nu,
        mu,
        previous,
        last: last.expect("epoch 0 is always visited"),
    }
}

fn summarize(
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
    stream: Substream,
) -> PathSummary {
    let reserve = realized_reserve(policy, mode, stream).expect("inputs checked");
    run_path(params, &params.thresholds(reserve), stream)
}

/// Probability that the attacker is absorbed strictly before the defender.
/// In Safety mode each trajectory draws its own reserve, so the estimate
/// averages over the reserve law.
pub fn estimate_burst_probability(
    params: &GameParams,
    mode: Mode,
    policy: Option<&ReservePolicy>,
    mc: &McConfig,
) -> Result<BurstEstimate> {
    check_inputs(params, policy, mode)?;
    mc.validate()?;
    let (bursts, capped) = (0..mc.num_trajectories)
        .into_par_iter()
        .map(|i| {
            let s = summarize(params, policy, mode, mc.stream(i));
            let capped = s.nu.is_none() && s.mu.is_none();
            (u64::from(is_burst(s.nu, s.mu)), u64::from(capped))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(BurstEstimate::from_counts(
        mode,
        bursts,
        capped,
        mc.num_trajectories,
        mc.z(),
    ))
}

/// Law of the attacker level one observation before attacker absorption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreExitDistribution {
    /// `pmf[k] = P{A_(nu-1) = k}` for `k = 0..=M`.
    pub pmf: Vec<f64>,
    /// Mass on `k <= floor(M/2)`.
    pub p_below: f64,
    /// Trajectories (or, for the oracle, probability mass) that realized a
    /// pre-exit epoch.
    pub support: f64,
}

impl PreExitDistribution {
    pub(crate) fn from_weights(weights: Vec<f64>, total_nodes: u32) -> Result<Self> {
        let support: f64 = weights.iter().sum();
        if support <= 0.0 {
            return Err(Error::NoPreExitEpoch);
        }
        let pmf: Vec<f64> = weights.iter().map(|w| w / support).collect();
        let p_below = pmf[..=(total_nodes / 2) as usize]
            .iter()
            .sum::<f64>()
            .min(1.0);
        Ok(Self {
            pmf,
            p_below,
            support,
        })
    }
}

/// Empirical pre-exit law over Regular trajectories with `nu >= 1`.
pub fn estimate_pre_exit_distribution(
    params: &GameParams,
    mc: &McConfig,
) -> Result<PreExitDistribution> {
    check_inputs(params, None, Mode::Regular)?;
    mc.validate()?;
    let width = params.total_nodes as usize + 1;
    let counts = (0..mc.num_trajectories)
        .into_par_iter()
        .map(|i| {
            let s = summarize(params, None, Mode::Regular, mc.stream(i));
            match (s.nu, s.previous) {
                (Some(nu), Some(prev)) if nu >= 1 => Some(prev.attacker as usize),
                _ => None,
            }
        })
        .fold(
            || vec![0u64; width],
            |mut acc, level| {
                if let Some(k) = level {
                    // minimality keeps k below the regular threshold <= M
                    acc[k] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; width],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let weights = counts.into_iter().map(|c| c as f64).collect();
    PreExitDistribution::from_weights(weights, params.total_nodes)
}

/// Arguments of the joint exit transform, each in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformPoint {
    pub zeta: f64,
    pub g0: f64,
    pub g1: f64,
    pub z0: f64,
    pub z1: f64,
}

impl TransformPoint {
    pub const UNIT: TransformPoint = TransformPoint {
        zeta: 1.0,
        g0: 1.0,
        g1: 1.0,
        z0: 1.0,
        z1: 1.0,
    };

    pub fn with_zeta(zeta: f64) -> Self {
        Self { zeta, ..Self::UNIT }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("transform.zeta", self.zeta),
            ("transform.g0", self.g0),
            ("transform.g1", self.g1),
            ("transform.z0", self.z0),
            ("transform.z1", self.z1),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(name, "must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Weight of one burst path. When `nu = 0` there is no earlier epoch and
    /// the pre-exit levels are the initial ones.
    pub(crate) fn weight(&self, nu: usize, pre: &Epoch, exit: &Epoch) -> f64 {
        self.zeta.powi(nu as i32)
            * self.g0.powf(pre.attacker as f64)
            * self.g1.powf(exit.attacker as f64)
            * self.z0.powf(pre.defender as f64)
            * self.z1.powf(exit.defender as f64)
    }
}

/// Monte Carlo mean of the exit transform on the burst event. With a policy
/// each trajectory uses its own realized reserve (Safety thresholds);
/// without one the Regular thresholds apply.
pub fn estimate_joint_functional(
    params: &GameParams,
    point: &TransformPoint,
    policy: Option<&ReservePolicy>,
    mc: &McConfig,
) -> Result<f64> {
    point.validate()?;
    let mode = if policy.is_some() {
        Mode::Safety
    } else {
        Mode::Regular
    };
    check_inputs(params, policy, mode)?;
    mc.validate()?;
    let values: Vec<f64> = (0..mc.num_trajectories)
        .into_par_iter()
        .map(|i| {
            let s = summarize(params, policy, mode, mc.stream(i));
            match s.nu {
                Some(nu) if is_burst(s.nu, s.mu) => {
                    let pre = s.previous.unwrap_or(s.last);
                    point.weight(nu, &pre, &s.last)
                }
                _ => 0.0,
            }
        })
        .collect();
    // sequential sum keeps the result independent of the pool size
    let total: f64 = values.iter().sum();
    Ok(total / mc.num_trajectories as f64)
}

/// Poisson weight `(λτ)^k e^{-λτ} / k!`.
pub fn poisson_kernel(rate: f64, tau: f64, k: u64) -> f64 {
    let mean = rate * tau;
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - mean - crate::process::ln_factorial(k)).exp()
}

/// Paths shared across reserve policies (common random numbers).
///
/// Each trajectory is run once, until the defender is absorbed or the
/// attacker reaches the largest threshold any policy can produce. The
/// attacker level just before defender absorption then decides the burst
/// event for every threshold at once, and the per-node reserve uniforms
/// decide every policy's realized reserve. Pathwise, a larger threshold can
/// only turn a burst into a non-burst.
#[derive(Debug, Clone)]
pub struct CommonPaths {
    regular_threshold: u64,
    max_reserve: u32,
    z: f64,
    paths: Vec<SharedPath>,
}

#[derive(Debug, Clone)]
struct SharedPath {
    /// Attacker level at the last epoch before defender absorption (or at
    /// the stop epoch otherwise); `None` when the defender wins at epoch 0.
    level: Option<u64>,
    defender_absorbed: bool,
    uniforms: Vec<f64>,
}

impl SharedPath {
    fn burst(&self, threshold: u64) -> bool {
        self.level.is_some_and(|l| l >= threshold)
    }

    fn capped(&self, threshold: u64) -> bool {
        !self.defender_absorbed && !self.burst(threshold)
    }

    fn reserve(&self, policy: &ReservePolicy) -> u32 {
        self.uniforms[..policy.reserve_count as usize]
            .iter()
            .filter(|&&u| u < policy.availability)
            .count() as u32
    }
}

impl CommonPaths {
    /// Simulates `mc.num_trajectories` shared paths able to serve any
    /// policy with at most `max_reserve` nodes.
    pub fn simulate(params: &GameParams, max_reserve: u32, mc: &McConfig) -> Result<Self> {
        params.validate()?;
        mc.validate()?;
        let thresholds = params.thresholds(max_reserve);
        let paths = (0..mc.num_trajectories)
            .into_par_iter()
            .map(|i| {
                let stream = mc.stream(i);
                let mut rng = stream.rng(Purpose::Increments);
                let mut prev: Option<u64> = None;
                let mut level = None;
                let mut defender_absorbed = false;
                walk(params, &mut rng, |_, e| {
                    if e.defender >= thresholds.regular {
                        defender_absorbed = true;
                        level = prev;
                        return true;
                    }
                    prev = Some(e.attacker);
                    level = prev;
                    e.attacker >= thresholds.safety
                });
                let uniforms = {
                    use rand::Rng;
                    let mut r = stream.rng(Purpose::Reserve);
                    (0..max_reserve).map(|_| r.random::<f64>()).collect()
                };
                SharedPath {
                    level,
                    defender_absorbed,
                    uniforms,
                }
            })
            .collect();
        Ok(Self {
            regular_threshold: thresholds.regular,
            max_reserve,
            z: mc.z(),
            paths,
        })
    }

    pub fn max_reserve(&self) -> u32 {
        self.max_reserve
    }

    pub fn samples(&self) -> u64 {
        self.paths.len() as u64
    }

    pub fn regular(&self) -> BurstEstimate {
        self.tally(Mode::Regular, |_| 0)
    }

    pub fn safety(&self, policy: &ReservePolicy) -> Result<BurstEstimate> {
        policy.validate()?;
        if policy.reserve_count > self.max_reserve {
            return Err(Error::invalid(
                "policy.reserve_count",
                format!("exceeds the simulated maximum of {}", self.max_reserve),
            ));
        }
        Ok(self.tally(Mode::Safety, |p| p.reserve(policy)))
    }

    /// Per-trajectory burst indicators, Regular and under `policy`.
    pub fn indicators(&self, policy: &ReservePolicy) -> Vec<(bool, bool)> {
        self.paths
            .iter()
            .map(|p| {
                let t_safe = self.regular_threshold + u64::from(p.reserve(policy));
                (p.burst(self.regular_threshold), p.burst(t_safe))
            })
            .collect()
    }

    fn tally(&self, mode: Mode, reserve: impl Fn(&SharedPath) -> u32) -> BurstEstimate {
        let (mut bursts, mut capped) = (0u64, 0u64);
        for p in &self.paths {
            let t = self.regular_threshold + u64::from(reserve(p));
            bursts += u64::from(p.burst(t));
            capped += u64::from(p.capped(t));
        }
        BurstEstimate::from_counts(mode, bursts, capped, self.samples(), self.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(n: u64, seed: u64) -> McConfig {
        McConfig::new(n, seed)
    }

    #[test]
    fn rejects_empty_batches() {
        let params = GameParams::new(4, 1.0, 1.0);
        let err = estimate_burst_probability(&params, Mode::Regular, None, &mc(0, 1));
        assert!(matches!(
            err,
            Err(Error::InvalidParameter {
                field: "mc.trajectories",
                ..
            })
        ));
    }

    #[test]
    fn idle_attacker_never_bursts() {
        let params = GameParams::new(6, 0.0, 1.0);
        let est = estimate_burst_probability(&params, Mode::Regular, None, &mc(2000, 3)).unwrap();
        assert_eq!(est.q_hat, 0.0);
        assert_eq!(est.bursts, 0);
    }

    #[test]
    fn silent_defender_always_bursts() {
        let params = GameParams::new(6, 0.5, 0.0);
        let est = estimate_burst_probability(&params, Mode::Regular, None, &mc(2000, 3)).unwrap();
        assert_eq!(est.q_hat, 1.0);
        assert_eq!(est.cap_hit_fraction, 0.0);
    }

    #[test]
    fn tiny_cap_is_reported_not_fatal() {
        let mut params = GameParams::new(10, 0.1, 0.1);
        params.max_epochs = 1;
        let est = estimate_burst_probability(&params, Mode::Regular, None, &mc(1000, 3)).unwrap();
        assert!(est.cap_warning());
        assert!(est.ci.low <= est.q_hat && est.q_hat <= est.ci.high);
    }

    #[test]
    fn pre_exit_needs_a_prior_epoch() {
        let mut params = GameParams::new(4, 1.0, 1.0);
        params.initial_attacker = 3;
        assert_eq!(
            estimate_pre_exit_distribution(&params, &mc(100, 1)),
            Err(Error::NoPreExitEpoch)
        );
    }

    #[test]
    fn weak_attacker_stays_below_half() {
        let params = GameParams::new(4, 0.3, 3.0);
        let dist = estimate_pre_exit_distribution(&params, &mc(50_000, 9)).unwrap();
        assert!((dist.p_below - 1.0).abs() < 1e-12);
        assert!((dist.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_rejects_out_of_range_arguments() {
        let params = GameParams::new(4, 1.0, 1.0);
        for bad in [0.0, 1.5, f64::NAN] {
            let point = TransformPoint::with_zeta(bad);
            assert!(estimate_joint_functional(&params, &point, None, &mc(10, 1)).is_err());
        }
    }

    #[test]
    fn small_zeta_kills_the_transform() {
        let params = GameParams::new(6, 1.0, 1.0);
        let v = estimate_joint_functional(
            &params,
            &TransformPoint::with_zeta(1e-6),
            None,
            &mc(5000, 2),
        )
        .unwrap();
        assert!(v < 1e-5);
    }

    #[test]
    fn poisson_kernel_examples() {
        assert_eq!(poisson_kernel(1.0, 0.0, 0), 1.0);
        assert!((poisson_kernel(1.0, 1.0, 0) - (-1.0f64).exp()).abs() < 1e-15);
        let total: f64 = (0..=50).map(|k| poisson_kernel(1.0, 2.0, k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_paths_match_direct_estimates() {
        let params = GameParams::new(6, 1.0, 1.2);
        let cfg = mc(20_000, 17);
        let shared = CommonPaths::simulate(&params, 3, &cfg).unwrap();
        let direct = estimate_burst_probability(&params, Mode::Regular, None, &cfg).unwrap();
        assert_eq!(shared.regular(), direct);
        let policy = ReservePolicy::new(3, 0.5);
        let direct =
            estimate_burst_probability(&params, Mode::Safety, Some(&policy), &cfg).unwrap();
        assert_eq!(shared.safety(&policy).unwrap(), direct);
        assert!(shared.safety(&ReservePolicy::new(4, 0.5)).is_err());
    }
}
