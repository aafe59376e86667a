//! Exact absorption quantities of the observed chain `(A_k, H_k)`.
//!
//! States are the lattice of attacker/defender levels still below their
//! thresholds. Increments are non-negative, so the only cycle is the
//! `(0, 0)` self-loop and every quantity solves by one sweep over the
//! lattice in topological order. Mass leaving the lattice is computed from
//! the geometric marginals, so no increment truncation is needed for burst
//! probabilities. The epoch cap is ignored (infinite horizon).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{PreExitDistribution, TransformPoint};
use crate::process::{GameParams, IncrementLaw, Mode, ReservePolicy};

pub const MAX_LATTICE_STATES: u64 = 10_000;

/// Unaccounted tail mass above which a transform value is flagged.
pub const RESIDUAL_WARNING: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Oracle {
    params: GameParams,
    law: IncrementLaw,
}

/// Lattice dimensions relative to the initial state.
#[derive(Debug, Clone, Copy)]
struct Lattice {
    attacker: usize,
    defender: usize,
}

enum Start {
    /// Defender absorbed at epoch 0 (ties go to the defender).
    DefenderWins,
    /// Attacker absorbed at epoch 0.
    AttackerWins,
    Inside(Lattice),
}

/// Transform value with the tail mass the increment truncation left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformValue {
    pub value: f64,
    pub residual: f64,
}

impl Oracle {
    pub fn new(params: &GameParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: params.clone(),
            law: params.increment_law(),
        })
    }

    fn start(&self, reserve: u32) -> Result<Start> {
        let t = self.params.thresholds(reserve);
        let a0 = u64::from(self.params.initial_attacker);
        let h0 = u64::from(self.params.initial_defender);
        if h0 >= t.regular {
            return Ok(Start::DefenderWins);
        }
        if a0 >= t.safety {
            return Ok(Start::AttackerWins);
        }
        let lattice = Lattice {
            attacker: (t.safety - a0) as usize,
            defender: (t.regular - h0) as usize,
        };
        let states = (lattice.attacker * lattice.defender) as u64;
        if states > MAX_LATTICE_STATES {
            return Err(Error::StateSpaceTooLarge {
                states,
                cap: MAX_LATTICE_STATES,
            });
        }
        Ok(Start::Inside(lattice))
    }

    /// `pmf[i][j]` for increments that stay inside the lattice from the origin.
    fn pmf_table(&self, lattice: Lattice) -> Vec<Vec<f64>> {
        (0..lattice.attacker)
            .map(|i| {
                (0..lattice.defender)
                    .map(|j| self.law.pmf(i as u64, j as u64))
                    .collect()
            })
            .collect()
    }

    /// `P{attacker crosses, defender does not}` from state `(a, h)`.
    fn exit_mass(&self, pmf: &[Vec<f64>], lattice: Lattice, a: usize, h: usize) -> f64 {
        let need = lattice.attacker - a;
        (0..lattice.defender - h)
            .map(|j| {
                let stay: f64 = (0..need).map(|i| pmf[i][j]).sum();
                (self.law.defender_pmf(j as u64) - stay).max(0.0)
            })
            .sum()
    }

    /// Exact burst probability with a fixed reserve `reserve` (0 = Regular).
    pub fn burst_probability(&self, reserve: u32) -> Result<f64> {
        let lattice = match self.start(reserve)? {
            Start::DefenderWins => return Ok(0.0),
            Start::AttackerWins => return Ok(1.0),
            Start::Inside(l) => l,
        };
        let pmf = self.pmf_table(lattice);
        let stay = pmf[0][0];
        let mut u = vec![vec![0.0; lattice.defender]; lattice.attacker];
        for a in (0..lattice.attacker).rev() {
            for h in (0..lattice.defender).rev() {
                let mut total = self.exit_mass(&pmf, lattice, a, h);
                for i in 0..lattice.attacker - a {
                    for j in 0..lattice.defender - h {
                        if i + j > 0 {
                            total += pmf[i][j] * u[a + i][h + j];
                        }
                    }
                }
                u[a][h] = total / (1.0 - stay);
            }
        }
        Ok(u[0][0])
    }

    /// The same quantity by Jacobi value iteration from zero. Returns the
    /// value and the number of sweeps used.
    pub fn burst_probability_value_iteration(&self, reserve: u32, tol: f64) -> Result<(f64, u32)> {
        let lattice = match self.start(reserve)? {
            Start::DefenderWins => return Ok((0.0, 0)),
            Start::AttackerWins => return Ok((1.0, 0)),
            Start::Inside(l) => l,
        };
        let pmf = self.pmf_table(lattice);
        let exits: Vec<Vec<f64>> = (0..lattice.attacker)
            .map(|a| {
                (0..lattice.defender)
                    .map(|h| self.exit_mass(&pmf, lattice, a, h))
                    .collect()
            })
            .collect();
        let mut u = vec![vec![0.0; lattice.defender]; lattice.attacker];
        for sweep in 1..=1_000_000u32 {
            let mut next = exits.clone();
            let mut delta: f64 = 0.0;
            for a in 0..lattice.attacker {
                for h in 0..lattice.defender {
                    for i in 0..lattice.attacker - a {
                        for j in 0..lattice.defender - h {
                            next[a][h] += pmf[i][j] * u[a + i][h + j];
                        }
                    }
                    delta = delta.max((next[a][h] - u[a][h]).abs());
                }
            }
            u = next;
            if delta < tol {
                return Ok((u[0][0], sweep));
            }
        }
        Ok((u[0][0], 1_000_000))
    }

    /// Safety burst probability averaged over the binomial reserve law.
    pub fn safety_burst_probability(&self, policy: &ReservePolicy) -> Result<f64> {
        policy.validate()?;
        (0..=policy.reserve_count)
            .map(|b| Ok(policy.reserve_pmf(b) * self.burst_probability(b)?))
            .sum()
    }

    /// Exact law of `A_(nu-1)` under Regular thresholds, over paths where
    /// the attacker is absorbed at some `nu >= 1` (ties included).
    pub fn pre_exit_distribution(&self) -> Result<PreExitDistribution> {
        let m = self.params.total_nodes;
        let lattice = match self.start(0)? {
            Start::Inside(l) => l,
            _ => return Err(Error::NoPreExitEpoch),
        };
        let pmf = self.pmf_table(lattice);
        let stay = pmf[0][0];
        // expected visits to each transient state
        let mut visits = vec![vec![0.0; lattice.defender]; lattice.attacker];
        for a in 0..lattice.attacker {
            for h in 0..lattice.defender {
                let mut total = if a == 0 && h == 0 { 1.0 } else { 0.0 };
                for a2 in 0..=a {
                    for h2 in 0..=h {
                        if (a2, h2) != (a, h) {
                            total += visits[a2][h2] * pmf[a - a2][h - h2];
                        }
                    }
                }
                visits[a][h] = total / (1.0 - stay);
            }
        }
        let a0 = self.params.initial_attacker as usize;
        let mut weights = vec![0.0; m as usize + 1];
        for (a, row) in visits.iter().enumerate() {
            let crossing = self.law.attacker_tail((lattice.attacker - a) as u64);
            weights[a0 + a] = row.iter().sum::<f64>() * crossing;
        }
        PreExitDistribution::from_weights(weights, m)
    }

    /// Exact transform `E[ζ^ν g0^A(ν-1) g1^A(ν) z0^H(ν-1) z1^H(ν); ν < μ]`
    /// with a fixed reserve. Exit increments are enumerated up to
    /// `truncation` steps past the threshold (only when `g1 < 1`); the
    /// largest mass left out is returned as `residual`.
    pub fn joint_functional(
        &self,
        point: &TransformPoint,
        reserve: u32,
        truncation: u64,
    ) -> Result<TransformValue> {
        point.validate()?;
        let a0 = u64::from(self.params.initial_attacker);
        let h0 = u64::from(self.params.initial_defender);
        let lattice = match self.start(reserve)? {
            Start::DefenderWins => {
                return Ok(TransformValue {
                    value: 0.0,
                    residual: 0.0,
                })
            }
            Start::AttackerWins => {
                let value =
                    (point.g0 * point.g1).powf(a0 as f64) * (point.z0 * point.z1).powf(h0 as f64);
                return Ok(TransformValue {
                    value,
                    residual: 0.0,
                });
            }
            Start::Inside(l) => l,
        };
        let pmf = self.pmf_table(lattice);
        let mut residual: f64 = 0.0;
        let mut u = vec![vec![0.0; lattice.defender]; lattice.attacker];
        for a in (0..lattice.attacker).rev() {
            for h in (0..lattice.defender).rev() {
                let level_a = a0 + a as u64;
                let level_h = h0 + h as u64;
                let need = lattice.attacker - a;
                let mut exit = 0.0;
                for j in 0..lattice.defender - h {
                    let tail = (self.law.defender_pmf(j as u64)
                        - (0..need).map(|i| pmf[i][j]).sum::<f64>())
                    .max(0.0);
                    let defender_weight = point.z1.powf((level_h + j as u64) as f64);
                    if point.g1 == 1.0 {
                        exit += tail * defender_weight;
                        continue;
                    }
                    let mut covered = 0.0;
                    let mut weighted = 0.0;
                    let mut i = need as u64;
                    while i < need as u64 + truncation && tail - covered > f64::EPSILON * 1e-2 {
                        let p = self.law.pmf(i, j as u64);
                        covered += p;
                        weighted += p * point.g1.powf((level_a + i) as f64);
                        i += 1;
                    }
                    residual = residual.max(tail - covered);
                    exit += weighted * defender_weight;
                }
                let pre = point.g0.powf(level_a as f64) * point.z0.powf(level_h as f64);
                let mut total = exit * pre;
                for i in 0..need {
                    for j in 0..lattice.defender - h {
                        if i + j > 0 {
                            total += pmf[i][j] * u[a + i][h + j];
                        }
                    }
                }
                u[a][h] = point.zeta * total / (1.0 - point.zeta * pmf[0][0]);
            }
        }
        Ok(TransformValue {
            value: u[0][0],
            residual,
        })
    }
}

/// Exact burst probability for `mode`. Safety averages over the reserve law
/// of `policy`.
pub fn oracle_burst_probability(
    params: &GameParams,
    mode: Mode,
    policy: Option<&ReservePolicy>,
) -> Result<f64> {
    let oracle = Oracle::new(params)?;
    match mode {
        Mode::Regular => oracle.burst_probability(0),
        Mode::Safety => oracle.safety_burst_probability(policy.ok_or(Error::MissingPolicy)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric(m: u32) -> GameParams {
        GameParams::new(m, 1.0, 1.0)
    }

    #[test]
    fn degenerate_rates() {
        assert_eq!(
            oracle_burst_probability(&GameParams::new(6, 0.0, 1.0), Mode::Regular, None),
            Ok(0.0)
        );
        let q =
            oracle_burst_probability(&GameParams::new(6, 1.0, 0.0), Mode::Regular, None).unwrap();
        assert!((q - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_four_node_value() {
        // exact rational solve of the 3x3 lattice gives 11/32
        let q = oracle_burst_probability(&symmetric(4), Mode::Regular, None).unwrap();
        assert!((q - 11.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn value_iteration_agrees_with_direct_solve() {
        for (m, la, lh) in [(4, 1.0, 1.0), (6, 2.0, 0.5), (10, 1.0, 1.2), (2, 0.5, 2.0)] {
            let oracle = Oracle::new(&GameParams::new(m, la, lh)).unwrap();
            for b in 0..3 {
                let direct = oracle.burst_probability(b).unwrap();
                let (iterated, _) = oracle.burst_probability_value_iteration(b, 1e-15).unwrap();
                assert!((direct - iterated).abs() < 1e-10, "{m} {la} {lh} {b}");
            }
        }
    }

    #[test]
    fn initial_state_shortcuts() {
        let mut params = symmetric(4);
        params.initial_defender = 3;
        params.initial_attacker = 3;
        assert_eq!(
            oracle_burst_probability(&params, Mode::Regular, None),
            Ok(0.0)
        );
        params.initial_defender = 0;
        assert_eq!(
            oracle_burst_probability(&params, Mode::Regular, None),
            Ok(1.0)
        );
        assert_eq!(
            Oracle::new(&params).unwrap().pre_exit_distribution(),
            Err(Error::NoPreExitEpoch)
        );
    }

    #[test]
    fn oversized_lattice_is_rejected() {
        let params = GameParams::new(400, 1.0, 1.0);
        assert!(matches!(
            Oracle::new(&params).unwrap().burst_probability(0),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn symmetric_four_node_pre_exit_law() {
        // exact rational values: 5/14, 11/42, 8/21 with total mass 21/32
        let d = Oracle::new(&symmetric(4))
            .unwrap()
            .pre_exit_distribution()
            .unwrap();
        let expected = [5.0 / 14.0, 11.0 / 42.0, 8.0 / 21.0, 0.0, 0.0];
        for (got, want) in d.pmf.iter().zip(expected) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!((d.support - 21.0 / 32.0).abs() < 1e-14);
        assert!((d.p_below - 1.0).abs() < 1e-14);
    }

    #[test]
    fn transform_reduces_to_burst_probability_at_unit_point() {
        let oracle = Oracle::new(&GameParams::new(6, 2.0, 0.5)).unwrap();
        let t = oracle
            .joint_functional(&TransformPoint::UNIT, 1, 1000)
            .unwrap();
        assert!((t.value - oracle.burst_probability(1).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn zeta_weighted_symmetric_value() {
        // exact rational value 77225/302526
        let oracle = Oracle::new(&symmetric(4)).unwrap();
        let t = oracle
            .joint_functional(&TransformPoint::with_zeta(0.9), 0, 1000)
            .unwrap();
        assert!((t.value - 77225.0 / 302526.0).abs() < 1e-14);
    }

    #[test]
    fn truncated_tail_is_reported() {
        let oracle = Oracle::new(&symmetric(4)).unwrap();
        let point = TransformPoint {
            g1: 0.9,
            ..TransformPoint::UNIT
        };
        let short = oracle.joint_functional(&point, 0, 2).unwrap();
        let long = oracle.joint_functional(&point, 0, 500).unwrap();
        assert!(short.residual > RESIDUAL_WARNING);
        assert!(long.residual < RESIDUAL_WARNING);
        assert!(short.value < long.value);
    }

    #[test]
    fn safety_averages_over_reserve_law() {
        let oracle = Oracle::new(&symmetric(4)).unwrap();
        let policy = ReservePolicy::new(2, 0.5);
        let mixed = oracle.safety_burst_probability(&policy).unwrap();
        let by_hand = 0.25 * oracle.burst_probability(0).unwrap()
            + 0.5 * oracle.burst_probability(1).unwrap()
            + 0.25 * oracle.burst_probability(2).unwrap();
        assert!((mixed - by_hand).abs() < 1e-15);
        assert_eq!(
            oracle_burst_probability(&symmetric(4), Mode::Safety, None),
            Err(Error::MissingPolicy)
        );
    }
}
