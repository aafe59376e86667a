//! The attacker/defender block-accrual race observed at random epochs.
//!
//! Between consecutive observations the gap is exponential with rate
//! `observation_rate`; conditional on the gap, the attacker and the defender
//! add independent Poisson numbers of blocks. The game ends at the first
//! epoch where either side reaches its threshold.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, Substream};

pub const DEFAULT_MAX_EPOCHS: u32 = 10_000;

/// Defender strategy at the pre-exit observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Regular,
    Safety,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Regular => f.write_str("regular"),
            Mode::Safety => f.write_str("safety"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "regular" => Ok(Mode::Regular),
            "safety" => Ok(Mode::Safety),
            other => Err(format!("unknown mode `{other}` (expected regular|safety)")),
        }
    }
}

fn default_observation_rate() -> f64 {
    1.0
}

fn default_max_epochs() -> u32 {
    DEFAULT_MAX_EPOCHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParams {
    /// Ledger nodes in one vehicle network (`M`).
    pub total_nodes: u32,
    pub attacker_rate: f64,
    pub defender_rate: f64,
    #[serde(default = "default_observation_rate")]
    pub observation_rate: f64,
    #[serde(default)]
    pub initial_attacker: u32,
    #[serde(default)]
    pub initial_defender: u32,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: u32,
}

impl GameParams {
    /// Parameters with unit observation rate, empty initial state and the
    /// default epoch cap.
    pub fn new(total_nodes: u32, attacker_rate: f64, defender_rate: f64) -> Self {
        Self {
            total_nodes,
            attacker_rate,
            defender_rate,
            observation_rate: default_observation_rate(),
            initial_attacker: 0,
            initial_defender: 0,
            max_epochs: DEFAULT_MAX_EPOCHS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_nodes < 2 {
            return Err(Error::invalid("game.total_nodes", "must be at least 2"));
        }
        let rate_ok = |r: f64| r.is_finite() && r >= 0.0;
        if !rate_ok(self.attacker_rate) {
            return Err(Error::invalid(
                "game.attacker_rate",
                "must be finite and >= 0",
            ));
        }
        if !rate_ok(self.defender_rate) {
            return Err(Error::invalid(
                "game.defender_rate",
                "must be finite and >= 0",
            ));
        }
        if !(self.observation_rate.is_finite() && self.observation_rate > 0.0) {
            return Err(Error::invalid(
                "game.observation_rate",
                "must be finite and > 0",
            ));
        }
        if self.initial_attacker > self.total_nodes {
            return Err(Error::invalid(
                "game.initial_attacker",
                "cannot exceed total_nodes",
            ));
        }
        if self.initial_defender > self.total_nodes {
            return Err(Error::invalid(
                "game.initial_defender",
                "cannot exceed total_nodes",
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("game.max_epochs", "must be positive"));
        }
        Ok(())
    }

    pub fn increment_law(&self) -> IncrementLaw {
        IncrementLaw {
            attacker_rate: self.attacker_rate,
            defender_rate: self.defender_rate,
            observation_rate: self.observation_rate,
        }
    }

    pub fn thresholds(&self, reserve: u32) -> Thresholds {
        Thresholds::new(self.total_nodes, reserve)
    }
}

/// HQ reserve: `reserve_count` nodes, each independently available with
/// probability `availability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservePolicy {
    pub reserve_count: u32,
    pub availability: f64,
}

impl Default for ReservePolicy {
    fn default() -> Self {
        Self {
            reserve_count: 0,
            availability: 1.0,
        }
    }
}

impl ReservePolicy {
    pub fn new(reserve_count: u32, availability: f64) -> Self {
        Self {
            reserve_count,
            availability,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.availability) {
            return Err(Error::invalid("policy.availability", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Probability that exactly `b` reserve nodes turn up.
    pub fn reserve_pmf(&self, b: u32) -> f64 {
        let n = self.reserve_count;
        if b > n {
            return 0.0;
        }
        let rho = self.availability;
        binomial(n, b) * rho.powi(b as i32) * (1.0 - rho).powi((n - b) as i32)
    }
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Attacker and defender absorption levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Strict majority of the `M` nodes.
    pub regular: u64,
    /// Regular threshold raised by the realized reserve.
    pub safety: u64,
}

impl Thresholds {
    pub fn new(total_nodes: u32, reserve: u32) -> Self {
        let regular = u64::from(total_nodes / 2) + 1;
        Self {
            regular,
            safety: regular + u64::from(reserve),
        }
    }
}

/// Joint law of one observation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementLaw {
    pub attacker_rate: f64,
    pub defender_rate: f64,
    pub observation_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increment {
    pub attacker: u64,
    pub defender: u64,
    pub gap: f64,
}

impl IncrementLaw {
    fn total_rate(&self) -> f64 {
        self.attacker_rate + self.defender_rate + self.observation_rate
    }

    /// `P{x = i, y = j}`: integrating the two conditional Poisson laws
    /// against the exponential gap gives a negative multinomial,
    /// `C(i+j, i) δ λa^i λh^j / (δ+λa+λh)^(i+j+1)`.
    pub fn pmf(&self, i: u64, j: u64) -> f64 {
        let s = self.total_rate();
        let pa = self.attacker_rate / s;
        let ph = self.defender_rate / s;
        let base = self.observation_rate / s;
        // log-space keeps large (i, j) finite
        let log_choose = ln_factorial(i + j) - ln_factorial(i) - ln_factorial(j);
        let log_pa = if i == 0 { 0.0 } else { i as f64 * pa.ln() };
        let log_ph = if j == 0 { 0.0 } else { j as f64 * ph.ln() };
        base * (log_choose + log_pa + log_ph).exp()
    }

    /// Marginal of the attacker count: geometric with success `δ/(λa+δ)`.
    pub fn attacker_pmf(&self, i: u64) -> f64 {
        geometric_pmf(self.attacker_rate, self.observation_rate, i)
    }

    pub fn defender_pmf(&self, j: u64) -> f64 {
        geometric_pmf(self.defender_rate, self.observation_rate, j)
    }

    /// `P{x >= i}`.
    pub fn attacker_tail(&self, i: u64) -> f64 {
        let r = self.attacker_rate / (self.attacker_rate + self.observation_rate);
        if i == 0 {
            1.0
        } else {
            r.powf(i as f64)
        }
    }
}

fn geometric_pmf(rate: f64, obs: f64, k: u64) -> f64 {
    let success = obs / (rate + obs);
    let r = rate / (rate + obs);
    if k == 0 {
        success
    } else {
        success * r.powf(k as f64)
    }
}

pub(crate) fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// One observation step: exponential gap, then conditionally independent
/// Poisson block counts for both players.
pub fn sample_increment_pair<R: Rng + ?Sized>(law: &IncrementLaw, rng: &mut R) -> Increment {
    let gap = Exp::new(law.observation_rate)
        .expect("observation rate validated upstream")
        .sample(rng);
    Increment {
        attacker: poisson(law.attacker_rate * gap, rng),
        defender: poisson(law.defender_rate * gap, rng),
        gap,
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng) as u64
}

/// Realized reserve: one uniform per owned node, available when below `ρ`.
/// Drawing per node (rather than a binomial variate) makes the result
/// monotone in both `n` and `ρ` under shared randomness.
pub fn sample_reserve<R: Rng + ?Sized>(policy: &ReservePolicy, rng: &mut R) -> u32 {
    (0..policy.reserve_count)
        .map(|_| rng.random::<f64>())
        .filter(|&u| u < policy.availability)
        .count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub time: f64,
    pub attacker: u64,
    pub defender: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTrajectory {
    pub epochs: Vec<Epoch>,
    pub nu: Option<usize>,
    pub mu: Option<usize>,
    pub realized_reserve: u32,
    pub thresholds: Thresholds,
    /// Neither side was absorbed within `max_epochs`.
    pub capped: bool,
}

impl GameTrajectory {
    /// The attacker was absorbed strictly before the defender.
    pub fn burst(&self) -> bool {
        is_burst(self.nu, self.mu)
    }

    /// Observation one epoch before attacker absorption.
    pub fn pre_exit(&self) -> Option<&Epoch> {
        match self.nu {
            Some(nu) if nu >= 1 => self.epochs.get(nu - 1),
            _ => None,
        }
    }
}

pub(crate) fn is_burst(nu: Option<usize>, mu: Option<usize>) -> bool {
    match (nu, mu) {
        (Some(nu), Some(mu)) => nu < mu,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

/// First epochs at which the attacker reaches `thresholds.safety` and the
/// defender reaches `thresholds.regular`.
pub fn exit_indices(epochs: &[Epoch], thresholds: &Thresholds) -> (Option<usize>, Option<usize>) {
    let nu = epochs.iter().position(|e| e.attacker >= thresholds.safety);
    let mu = epochs.iter().position(|e| e.defender >= thresholds.regular);
    (nu, mu)
}

/// Time of the observation preceding attacker absorption, when one exists.
pub fn safety_trigger_epoch(trajectory: &GameTrajectory) -> Option<f64> {
    trajectory.pre_exit().map(|e| e.time)
}

/// Drives the observed path from epoch 0 until `visit` returns `true` or
/// `max_epochs` steps have been taken. Returns the number of steps taken.
pub(crate) fn walk<R, F>(params: &GameParams, rng: &mut R, mut visit: F) -> u32
where
    R: Rng + ?Sized,
    F: FnMut(usize, &Epoch) -> bool,
{
    let law = params.increment_law();
    let mut epoch = Epoch {
        time: 0.0,
        attacker: u64::from(params.initial_attacker),
        defender: u64::from(params.initial_defender),
    };
    if visit(0, &epoch) {
        return 0;
    }
    for k in 1..=params.max_epochs {
        let inc = sample_increment_pair(&law, rng);
        epoch.time += inc.gap;
        epoch.attacker += inc.attacker;
        epoch.defender += inc.defender;
        if visit(k as usize, &epoch) {
            return k;
        }
    }
    params.max_epochs
}

/// Realized reserve for a trajectory: drawn from its own substream in Safety
/// mode, zero otherwise.
pub(crate) fn realized_reserve(
    policy: Option<&ReservePolicy>,
    mode: Mode,
    stream: Substream,
) -> Result<u32> {
    match mode {
        Mode::Regular => Ok(0),
        Mode::Safety => {
            let policy = policy.ok_or(Error::MissingPolicy)?;
            Ok(sample_reserve(policy, &mut stream.rng(Purpose::Reserve)))
        }
    }
}

pub(crate) fn check_inputs(
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
) -> Result<()> {
    params.validate()?;
    if let Some(policy) = policy {
        policy.validate()?;
    }
    if mode == Mode::Safety && policy.is_none() {
        return Err(Error::MissingPolicy);
    }
    Ok(())
}

pub fn sample_trajectory(
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
    seed: u64,
) -> Result<GameTrajectory> {
    sample_trajectory_at(params, policy, mode, Substream::new(seed, 0))
}

/// As [`sample_trajectory`], drawing from an explicit substream so batches
/// can address trajectory `i` of a seed directly.
pub fn sample_trajectory_at(
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
    stream: Substream,
) -> Result<GameTrajectory> {
    check_inputs(params, policy, mode)?;
    let reserve = realized_reserve(policy, mode, stream)?;
    let thresholds = params.thresholds(reserve);

    let mut epochs = Vec::new();
    let mut rng = stream.rng(Purpose::Increments);
    walk(params, &mut rng, |_, e| {
        epochs.push(*e);
        e.attacker >= thresholds.safety || e.defender >= thresholds.regular
    });
    let (nu, mu) = exit_indices(&epochs, &thresholds);
    Ok(GameTrajectory {
        capped: nu.is_none() && mu.is_none(),
        epochs,
        nu,
        mu,
        realized_reserve: reserve,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn epochs(attacker: &[u64], defender: &[u64]) -> Vec<Epoch> {
        attacker
            .iter()
            .zip(defender)
            .enumerate()
            .map(|(k, (&a, &h))| Epoch {
                time: k as f64,
                attacker: a,
                defender: h,
            })
            .collect()
    }

    #[test]
    fn thresholds_use_strict_majority() {
        assert_eq!(Thresholds::new(4, 0).regular, 3);
        assert_eq!(Thresholds::new(5, 0).regular, 3);
        assert_eq!(
            Thresholds::new(10, 2),
            Thresholds {
                regular: 6,
                safety: 8
            }
        );
    }

    #[test]
    fn exit_index_examples() {
        let t = Thresholds {
            regular: 3,
            safety: 5,
        };
        let path = epochs(&[0, 1, 3, 6], &[0, 0, 0, 0]);
        assert_eq!(exit_indices(&path, &t).0, Some(3));

        let path = epochs(&[0, 0, 0], &[0, 0, 2]);
        assert_eq!(exit_indices(&path, &t).1, None);

        let path = epochs(&[5], &[0]);
        assert_eq!(exit_indices(&path, &t).0, Some(0));
    }

    #[test]
    fn trigger_epoch_is_one_before_absorption() {
        let mut traj = GameTrajectory {
            epochs: vec![
                Epoch {
                    time: 0.0,
                    attacker: 0,
                    defender: 0,
                },
                Epoch {
                    time: 1.2,
                    attacker: 1,
                    defender: 0,
                },
                Epoch {
                    time: 2.5,
                    attacker: 3,
                    defender: 0,
                },
            ],
            nu: Some(2),
            mu: None,
            realized_reserve: 0,
            thresholds: Thresholds::new(4, 0),
            capped: false,
        };
        assert_eq!(safety_trigger_epoch(&traj), Some(1.2));
        traj.nu = Some(0);
        assert_eq!(safety_trigger_epoch(&traj), None);
        traj.nu = None;
        assert_eq!(safety_trigger_epoch(&traj), None);
    }

    #[test]
    fn zero_attacker_rate_never_adds_blocks() {
        let law = GameParams::new(4, 0.0, 1.0).increment_law();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_increment_pair(&law, &mut rng).attacker, 0);
        }
    }

    #[test]
    fn increment_pmf_closed_forms() {
        let law = GameParams::new(4, 1.0, 1.0).increment_law();
        assert!((law.pmf(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((law.pmf(2, 1) - 3.0 / 81.0).abs() < 1e-15);
        let single = GameParams::new(4, 1.0, 0.0).increment_law();
        assert!((single.attacker_pmf(0) - 0.5).abs() < 1e-15);
        assert!((single.attacker_pmf(3) - 1.0 / 16.0).abs() < 1e-15);
        // marginalizing the joint recovers the geometric law
        let marginal: f64 = (0..200).map(|j| law.pmf(2, j)).sum();
        assert!((marginal - law.attacker_pmf(2)).abs() < 1e-13);
    }

    #[test]
    fn starting_at_threshold_exits_at_zero() {
        let mut params = GameParams::new(4, 1.0, 1.0);
        params.initial_attacker = 3;
        let traj = sample_trajectory(&params, None, Mode::Regular, 11).unwrap();
        assert_eq!(traj.nu, Some(0));
        assert_eq!(traj.epochs.len(), 1);
        assert!(traj.burst());
    }

    #[test]
    fn silent_defender_never_exits() {
        let params = GameParams::new(4, 1.0, 0.0);
        for seed in 0..50 {
            let traj = sample_trajectory(&params, None, Mode::Regular, seed).unwrap();
            assert_eq!(traj.mu, None);
            assert!(traj.nu.is_some());
        }
    }

    #[test]
    fn full_availability_realizes_every_reserve_node() {
        let params = GameParams::new(4, 1.0, 1.0);
        let policy = ReservePolicy::new(3, 1.0);
        for seed in 0..50 {
            let traj = sample_trajectory(&params, Some(&policy), Mode::Safety, seed).unwrap();
            assert_eq!(traj.realized_reserve, 3);
            assert_eq!(traj.thresholds.safety, 6);
        }
    }

    #[test]
    fn degenerate_reserves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_reserve(&ReservePolicy::new(0, 0.7), &mut rng), 0);
        assert_eq!(sample_reserve(&ReservePolicy::new(5, 0.0), &mut rng), 0);
    }

    #[test]
    fn reserve_pmf_is_binomial() {
        let p = ReservePolicy::new(2, 0.5);
        assert_eq!(
            [p.reserve_pmf(0), p.reserve_pmf(1), p.reserve_pmf(2)],
            [0.25, 0.5, 0.25]
        );
    }

    #[test]
    fn safety_without_policy_is_rejected() {
        let params = GameParams::new(4, 1.0, 1.0);
        assert_eq!(
            sample_trajectory(&params, None, Mode::Safety, 0),
            Err(Error::MissingPolicy)
        );
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut params = GameParams::new(1, 1.0, 1.0);
        assert!(params.validate().is_err());
        params.total_nodes = 4;
        params.observation_rate = 0.0;
        assert!(params.validate().is_err());
        params.observation_rate = 1.0;
        params.initial_attacker = 5;
        assert!(params.validate().is_err());
        assert!(ReservePolicy::new(1, 1.5).validate().is_err());
    }
}
