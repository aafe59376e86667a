//! Line-delimited event log and its replay.
//!
//! One JSON object per line, e.g.
//! `{"time":0.73,"type":"capture","node":4}`. The first record of a
//! non-empty log is `start`; replay re-derives the outcome from the records
//! alone.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Network, Owner, SimOutcome, Topology, Verdict};
use crate::error::{Error, Result};
use crate::process::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    Start {
        mode: Mode,
        topology: Topology,
        max_epochs: u32,
    },
    Capture {
        node: u32,
    },
    /// Honest block produced by the elected leader.
    Finalize {
        node: u32,
    },
    Observe,
    /// The defender asked the HQ for its reserve; `granted` nodes follow.
    Request {
        granted: u32,
    },
    Inject {
        node: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn new(events: Vec<Event>) -> Self {
        Self { events }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_lines(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses one record per non-blank line; errors carry the 1-based line.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::MalformedLog {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| Error::MalformedLog {
                line: i + 1,
                reason: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(Self { events })
    }
}

/// Re-derives a [`SimOutcome`] from a recorded log. The log is checked as it
/// is replayed: timestamps never decrease, nodes exist and are captured at
/// most once, reserves only arrive right after a Safety request, and nothing
/// follows the absorbing observation.
pub fn replay(log: &EventLog) -> Result<SimOutcome> {
    let Some(first) = log.events.first() else {
        return Ok(SimOutcome {
            burst: false,
            trigger_time: None,
            injected: 0,
            attacker: 0,
            defender: 0,
            capped: false,
            nodes: Vec::new(),
            events: Vec::new(),
        });
    };
    let bad = |line: usize, reason: &str| Error::MalformedLog {
        line,
        reason: reason.to_string(),
    };
    let EventKind::Start {
        mode,
        topology,
        max_epochs,
    } = first.kind
    else {
        return Err(bad(1, "log must begin with a start record"));
    };
    let mut net = Network::new(&topology);
    let mut pending_inject = 0u32;
    let mut last_time = first.time;
    let mut last_observe = None;
    let mut verdict = None;

    for (i, event) in log.events.iter().enumerate().skip(1) {
        let line = i + 1;
        if verdict.is_some() {
            return Err(bad(line, "event after the game was decided"));
        }
        if event.time.is_nan() || event.time < last_time {
            return Err(bad(line, "timestamp earlier than the previous record"));
        }
        last_time = event.time;
        if pending_inject > 0 && !matches!(event.kind, EventKind::Inject { .. }) {
            return Err(bad(line, "request granted more nodes than were injected"));
        }
        match event.kind {
            EventKind::Start { .. } => return Err(bad(line, "duplicate start record")),
            EventKind::Capture { node } => {
                let idx = node as usize;
                match net.nodes.get(idx) {
                    None => return Err(bad(line, "capture of an unknown node")),
                    Some(n) if n.owner == Owner::Captured => {
                        return Err(bad(line, "node captured twice"))
                    }
                    Some(_) => net.capture(idx, event.time),
                }
            }
            EventKind::Finalize { node } => {
                if node as usize >= net.nodes.len() {
                    return Err(bad(line, "leader is not a network node"));
                }
                net.finalized += 1;
            }
            EventKind::Observe => {
                last_observe = Some(event.time);
                match net.observe() {
                    Verdict::Continue => {}
                    v => verdict = Some(v),
                }
            }
            EventKind::Request { granted } => {
                if mode != Mode::Safety {
                    return Err(bad(line, "reserve requested outside safety mode"));
                }
                if last_observe != Some(event.time) || !net.wants_reserve(mode) {
                    return Err(bad(
                        line,
                        "request does not follow a qualifying observation",
                    ));
                }
                net.requested = true;
                net.trigger_time = Some(event.time);
                pending_inject = granted;
            }
            EventKind::Inject { node } => {
                if pending_inject == 0 {
                    return Err(bad(line, "injection without a pending request"));
                }
                if node as usize != net.nodes.len() {
                    return Err(bad(line, "reserve node id out of sequence"));
                }
                net.inject();
                pending_inject -= 1;
            }
        }
    }
    if pending_inject > 0 {
        return Err(bad(
            log.events.len() + 1,
            "log ends before every granted node was injected",
        ));
    }
    let capped = verdict.is_none() && net.observations == u64::from(max_epochs) + 1;
    let verdict = verdict.unwrap_or(Verdict::Continue);
    Ok(net.outcome(&verdict, capped, log.events.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::run_network_sim;
    use crate::process::{GameParams, ReservePolicy};

    #[test]
    fn empty_log_is_a_quiet_game() {
        let o = replay(&EventLog::default()).unwrap();
        assert!(!o.burst);
        assert_eq!(o.trigger_time, None);
        assert_eq!((o.attacker, o.defender), (0, 0));
    }

    #[test]
    fn recorded_runs_replay_exactly() {
        let params = GameParams::new(6, 1.2, 1.0);
        let topo = Topology {
            component_nodes: 4,
            service_nodes: 1,
            hq_nodes: 1,
        };
        let policy = ReservePolicy::new(3, 0.6);
        for seed in 0..100 {
            for (mode, pol) in [(Mode::Regular, None), (Mode::Safety, Some(&policy))] {
                let o = run_network_sim(&topo, &params, pol, mode, seed).unwrap();
                let log = EventLog::new(o.events.clone());
                assert_eq!(replay(&log).unwrap(), o);
                let parsed = EventLog::read_from(log.to_lines().as_bytes()).unwrap();
                assert_eq!(replay(&parsed).unwrap(), o);
            }
        }
    }

    #[test]
    fn out_of_order_timestamps_are_rejected() {
        let params = GameParams::new(6, 1.0, 1.0);
        let o = run_network_sim(&Topology::flat(6), &params, None, Mode::Regular, 8).unwrap();
        let mut events = o.events.clone();
        assert!(events.len() > 3);
        let k = events.len() - 1;
        events[k].time = -1.0;
        match replay(&EventLog::new(events)) {
            Err(Error::MalformedLog { line, .. }) => assert_eq!(line, k + 1),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_position() {
        let text = "{\"time\":0.0,\"type\":\"start\",\"mode\":\"regular\",\"topology\":{\"component_nodes\":4,\"service_nodes\":0,\"hq_nodes\":0},\"max_epochs\":10}\nnot json\n";
        assert!(matches!(
            EventLog::read_from(text.as_bytes()),
            Err(Error::MalformedLog { line: 2, .. })
        ));
        let missing_start = "{\"time\":0.0,\"type\":\"observe\"}\n";
        let log = EventLog::read_from(missing_start.as_bytes()).unwrap();
        assert!(matches!(
            replay(&log),
            Err(Error::MalformedLog { line: 1, .. })
        ));
    }

    #[test]
    fn double_capture_is_rejected() {
        let start = Event {
            time: 0.0,
            kind: EventKind::Start {
                mode: Mode::Regular,
                topology: Topology::flat(4),
                max_epochs: 5,
            },
        };
        let cap = Event {
            time: 0.5,
            kind: EventKind::Capture { node: 1 },
        };
        assert!(replay(&EventLog::new(vec![start, cap, cap])).is_err());
    }
}
