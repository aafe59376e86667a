//! Node-level discrete-event simulation of a vehicle network.
//!
//! Nodes sit in three tiers: car components (edge), service-center
//! equipment (fog) and the HQ database (cloud). Three Poisson streams run in
//! continuous time: the attacker captures one honest node at a time, the
//! defender finalizes honest blocks through a uniformly elected leader, and
//! observations sample both counts. Absorption is only decided at
//! observations, so at observation epochs the captured count follows the
//! same law as the abstract process.
//!
//! In Safety mode the HQ is asked for its reserve at the first observation
//! where the captured count reaches one below the majority threshold; the
//! available reserve nodes join the network and raise the threshold.

mod log;

pub use log::{replay, Event, EventKind, EventLog};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BurstEstimate, McConfig};
use crate::process::{check_inputs, realized_reserve, GameParams, Mode, ReservePolicy};
use crate::rng::{Purpose, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Edge,
    Fog,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Honest,
    Captured,
    Reserve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: u32,
    pub tier: Tier,
    pub owner: Owner,
    pub capture_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub component_nodes: u32,
    pub service_nodes: u32,
    pub hq_nodes: u32,
}

impl Topology {
    /// Every node in the edge tier.
    pub fn flat(total_nodes: u32) -> Self {
        Self {
            component_nodes: total_nodes,
            service_nodes: 0,
            hq_nodes: 0,
        }
    }

    pub fn total(&self) -> u64 {
        u64::from(self.component_nodes) + u64::from(self.service_nodes) + u64::from(self.hq_nodes)
    }

    pub fn validate(&self, total_nodes: u32) -> Result<()> {
        if self.total() != u64::from(total_nodes) {
            return Err(Error::TopologyMismatch {
                expected: total_nodes,
                actual: self.total(),
            });
        }
        Ok(())
    }

    fn tier_of(&self, id: u32) -> Tier {
        if id < self.component_nodes {
            Tier::Edge
        } else if id < self.component_nodes + self.service_nodes {
            Tier::Fog
        } else {
            Tier::Cloud
        }
    }

    pub(crate) fn initial_nodes(&self) -> Vec<NodeState> {
        let total = self.total() as u32;
        (0..total)
            .map(|id| NodeState {
                id,
                tier: self.tier_of(id),
                owner: Owner::Honest,
                capture_time: None,
            })
            .collect()
    }
}

/// Relative capture propensity per tier. Uniform weights leave capture
/// tier-blind; anything else is an exploratory setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierWeights {
    pub edge: f64,
    pub fog: f64,
    pub cloud: f64,
}

impl Default for TierWeights {
    fn default() -> Self {
        Self {
            edge: 1.0,
            fog: 1.0,
            cloud: 1.0,
        }
    }
}

impl TierWeights {
    fn of(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Edge => self.edge,
            Tier::Fog => self.fog,
            Tier::Cloud => self.cloud,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w > 0.0;
        if !(ok(self.edge) && ok(self.fog) && ok(self.cloud)) {
            return Err(Error::invalid(
                "topology.capture_weights",
                "must be finite and > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub burst: bool,
    /// Time the reserve was requested (Safety mode only).
    pub trigger_time: Option<f64>,
    pub injected: u32,
    /// Captured nodes and finalized honest blocks at the last observation.
    pub attacker: u64,
    pub defender: u64,
    pub capped: bool,
    pub nodes: Vec<NodeState>,
    pub events: Vec<Event>,
}

/// Uniform choice among `nodes`: every node, captured or not, has the same
/// chance to produce the next ledger entry.
pub fn elect_leader<R: Rng + ?Sized>(nodes: &[NodeState], rng: &mut R) -> Result<u32> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    Ok(nodes[rng.random_range(0..nodes.len())].id)
}

fn pick_capture_target<R: Rng + ?Sized>(
    nodes: &[NodeState],
    weights: &TierWeights,
    rng: &mut R,
) -> Option<usize> {
    let open = |n: &NodeState| n.owner != Owner::Captured;
    let total: f64 = nodes
        .iter()
        .filter(|n| open(n))
        .map(|n| weights.of(n.tier))
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = None;
    for (i, n) in nodes.iter().enumerate().filter(|(_, n)| open(n)) {
        let w = weights.of(n.tier);
        if target < w {
            return Some(i);
        }
        target -= w;
        last = Some(i);
    }
    last
}

/// Network state shared by the simulator and the log replayer.
pub(crate) struct Network {
    pub nodes: Vec<NodeState>,
    pub captured: u64,
    pub finalized: u64,
    pub regular_threshold: u64,
    pub active_threshold: u64,
    pub requested: bool,
    pub trigger_time: Option<f64>,
    pub injected: u32,
    pub observations: u64,
}

pub(crate) enum Verdict {
    Continue,
    Burst,
    Defended,
}

impl Network {
    pub fn new(topology: &Topology) -> Self {
        let regular = u64::from(topology.total() as u32 / 2) + 1;
        Self {
            nodes: topology.initial_nodes(),
            captured: 0,
            finalized: 0,
            regular_threshold: regular,
            active_threshold: regular,
            requested: false,
            trigger_time: None,
            injected: 0,
            observations: 0,
        }
    }

    pub fn capture(&mut self, index: usize, time: f64) {
        let node = &mut self.nodes[index];
        node.owner = Owner::Captured;
        node.capture_time = Some(time);
        self.captured += 1;
    }

    pub fn inject(&mut self) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(NodeState {
            id,
            tier: Tier::Cloud,
            owner: Owner::Reserve,
            capture_time: None,
        });
        self.injected += 1;
        self.active_threshold += 1;
        id
    }

    /// Absorption check at an observation; ties go to the defender.
    pub fn observe(&mut self) -> Verdict {
        self.observations += 1;
        if self.finalized >= self.regular_threshold {
            Verdict::Defended
        } else if self.captured >= self.active_threshold {
            Verdict::Burst
        } else {
            Verdict::Continue
        }
    }

    /// Safety request condition at a non-absorbing observation.
    pub fn wants_reserve(&self, mode: Mode) -> bool {
        mode == Mode::Safety && !self.requested && self.captured + 1 >= self.regular_threshold
    }

    fn outcome(self, verdict: &Verdict, capped: bool, events: Vec<Event>) -> SimOutcome {
        SimOutcome {
            burst: matches!(verdict, Verdict::Burst),
            trigger_time: self.trigger_time,
            injected: self.injected,
            attacker: self.captured,
            defender: self.finalized,
            capped,
            nodes: self.nodes,
            events,
        }
    }
}

struct Recorder {
    enabled: bool,
    events: Vec<Event>,
}

impl Recorder {
    fn push(&mut self, time: f64, kind: EventKind) {
        if self.enabled {
            self.events.push(Event { time, kind });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSimOptions {
    pub capture_weights: TierWeights,
    /// Keep the event log; batch estimators turn this off.
    pub record: bool,
}

impl Default for NetSimOptions {
    fn default() -> Self {
        Self {
            capture_weights: TierWeights::default(),
            record: true,
        }
    }
}

pub fn run_network_sim(
    topology: &Topology,
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
    seed: u64,
) -> Result<SimOutcome> {
    run_network_sim_with(
        topology,
        params,
        policy,
        mode,
        Substream::new(seed, 0),
        &NetSimOptions::default(),
    )
}

pub fn run_network_sim_with(
    topology: &Topology,
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
    stream: Substream,
    options: &NetSimOptions,
) -> Result<SimOutcome> {
    check_inputs(params, policy, mode)?;
    topology.validate(params.total_nodes)?;
    options.capture_weights.validate()?;
    let reserve = realized_reserve(policy, mode, stream)?;
    let mut clock = stream.rng(Purpose::Increments);
    let mut picker = stream.rng(Purpose::Nodes);
    let mut log = Recorder {
        enabled: options.record,
        events: Vec::new(),
    };
    let mut net = Network::new(topology);

    log.push(
        0.0,
        EventKind::Start {
            mode,
            topology: *topology,
            max_epochs: params.max_epochs,
        },
    );
    for _ in 0..params.initial_attacker {
        capture(
            &mut net,
            &mut log,
            &mut picker,
            &options.capture_weights,
            0.0,
        );
    }
    for _ in 0..params.initial_defender {
        finalize(&mut net, &mut log, &mut picker, 0.0)?;
    }

    let lambda_a = params.attacker_rate;
    let lambda_h = params.defender_rate;
    let total_rate = lambda_a + lambda_h + params.observation_rate;
    let gap = Exp::new(total_rate).expect("observation rate is positive");
    let mut time = 0.0;
    let mut epoch = 0u32;
    let verdict = loop {
        log.push(time, EventKind::Observe);
        let verdict = net.observe();
        if !matches!(verdict, Verdict::Continue) {
            break verdict;
        }
        if net.wants_reserve(mode) {
            request(&mut net, &mut log, reserve, time);
        }
        if epoch == params.max_epochs {
            break Verdict::Continue;
        }
        // advance to the next observation
        loop {
            time += gap.sample(&mut clock);
            let u = clock.random::<f64>() * total_rate;
            if u < lambda_a {
                capture(
                    &mut net,
                    &mut log,
                    &mut picker,
                    &options.capture_weights,
                    time,
                );
            } else if u < lambda_a + lambda_h {
                finalize(&mut net, &mut log, &mut picker, time)?;
            } else {
                break;
            }
        }
        epoch += 1;
    };
    let capped = matches!(verdict, Verdict::Continue);
    Ok(net.outcome(&verdict, capped, log.events))
}

fn capture(
    net: &mut Network,
    log: &mut Recorder,
    picker: &mut ChaCha8Rng,
    weights: &TierWeights,
    time: f64,
) {
    // once every node is captured further captures have nothing to take
    if let Some(i) = pick_capture_target(&net.nodes, weights, picker) {
        net.capture(i, time);
        log.push(
            time,
            EventKind::Capture {
                node: net.nodes[i].id,
            },
        );
    }
}

fn finalize(
    net: &mut Network,
    log: &mut Recorder,
    picker: &mut ChaCha8Rng,
    time: f64,
) -> Result<()> {
    let leader = elect_leader(&net.nodes, picker)?;
    net.finalized += 1;
    log.push(time, EventKind::Finalize { node: leader });
    Ok(())
}

fn request(net: &mut Network, log: &mut Recorder, reserve: u32, time: f64) {
    net.requested = true;
    net.trigger_time = Some(time);
    log.push(time, EventKind::Request { granted: reserve });
    for _ in 0..reserve {
        let id = net.inject();
        log.push(time, EventKind::Inject { node: id });
    }
}

/// Burst frequency over `mc.num_trajectories` independent runs.
pub fn estimate_network_burst(
    topology: &Topology,
    params: &GameParams,
    policy: Option<&ReservePolicy>,
    mode: Mode,
    mc: &McConfig,
) -> Result<BurstEstimate> {
    mc.validate()?;
    let options = NetSimOptions {
        record: false,
        ..NetSimOptions::default()
    };
    let (bursts, capped) = (0..mc.num_trajectories)
        .into_par_iter()
        .map(|i| {
            let o = run_network_sim_with(
                topology,
                params,
                policy,
                mode,
                Substream::new(mc.seed, i),
                &options,
            )?;
            Ok((u64::from(o.burst), u64::from(o.capped)))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let n = mc.num_trajectories;
    Ok(BurstEstimate {
        mode,
        q_hat: bursts as f64 / n as f64,
        ci: crate::stats::wilson_interval(bursts, n, mc.z()),
        cap_hit_fraction: capped as f64 / n as f64,
        samples: n,
        bursts,
    })
}
