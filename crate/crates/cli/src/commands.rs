use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use bgg_core::config::ConfigError;
use bgg_core::economics::{optimize, MonteCarloModel, OracleModel};
use bgg_core::netsim::{run_network_sim_with, EventLog, NetSimOptions};
use bgg_core::report::{write_sweep, OutputRow};
use bgg_core::rng::Substream;
use bgg_core::{
    estimate_burst_probability, estimate_pre_exit_distribution, load_config, sample_trajectory,
    BurstEstimate, Error, GameParams, Mode, OptimizationResult, Oracle, PreExitDistribution,
    RunConfig,
};
use serde::Serialize;

use crate::{Command, Common, Engine, McFlags};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. }
            | Error::MissingPolicy
            | Error::StateSpaceTooLarge { .. }
            | Error::EmptyNodeSet
            | Error::TopologyMismatch { .. } => Failure::validation(e),
            Error::NoPreExitEpoch | Error::NoFeasiblePoint | Error::MalformedLog { .. } => {
                Failure::runtime(e)
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::validation(e)
    }
}

/// A diagnostic for stderr. Fatal warnings still write their report but end
/// the run with status 2.
pub struct Warning {
    pub fatal: bool,
    message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn cap_warning(label: &str, e: &BurstEstimate) -> Option<Warning> {
    e.cap_warning().then(|| Warning {
        fatal: true,
        message: format!(
            "{label}: {:.2}% of trajectories hit max_epochs; raise game.max_epochs",
            100.0 * e.cap_hit_fraction
        ),
    })
}

type Outcome = Result<Vec<Warning>, Failure>;

struct Setup {
    config: RunConfig,
    seed: u64,
}

impl Setup {
    fn new(common: &Common, mc: Option<&McFlags>) -> Result<Self, Failure> {
        let mut config = load_config(&common.config)?;
        if let Some(n) = mc.and_then(|m| m.trajectories) {
            config.mc.trajectories = n;
            config.validate()?;
        }
        let seed = match (common.seed, config.mc.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) if common.ci => {
                return Err(Failure::validation(anyhow!(
                    "--ci requires a seed (--seed or mc.seed)"
                )))
            }
            (None, None) => {
                let s = rand::random();
                eprintln!("seed: {s}");
                s
            }
        };
        Ok(Self { config, seed })
    }

    fn mc(&self) -> bgg_core::McConfig {
        self.config.mc.with_seed(self.seed)
    }

    fn game(&self) -> &GameParams {
        &self.config.game
    }
}

fn emit(out: Option<&Path>, data: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, data)
            .map_err(|e| Failure::runtime(anyhow!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(data.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::runtime(anyhow!("cannot write output: {e}")))
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Failure::runtime)?;
    text.push('\n');
    emit(out, &text)
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Simulate {
            common,
            mode,
            engine,
        } => simulate(&common, mode, engine),
        Command::Estimate { common, mode, mc } => estimate(&common, mode, &mc),
        Command::Optimize { common, mc, exact } => {
            let (setup, result, warnings) = solve(&common, &mc, exact)?;
            emit_json(
                common.out.as_deref(),
                &OptimizeReport::new(&setup, exact, result),
            )?;
            Ok(warnings)
        }
        Command::Sweep { common, mc, exact } => {
            let (_, result, warnings) = solve(&common, &mc, exact)?;
            let rows: Vec<OutputRow> = result.surface.iter().map(OutputRow::from).collect();
            emit(common.out.as_deref(), &write_sweep(&rows))?;
            Ok(warnings)
        }
        Command::Oracle { common } => oracle(&common),
    }
}

fn simulate(common: &Common, mode: Mode, engine: Engine) -> Outcome {
    let setup = Setup::new(common, None)?;
    let policy = &setup.config.policy;
    match engine {
        Engine::Process => {
            let t = sample_trajectory(setup.game(), Some(policy), mode, setup.seed)?;
            eprintln!(
                "{} epochs, burst: {}{}",
                t.epochs.len(),
                t.burst(),
                if t.capped { " (capped)" } else { "" }
            );
            emit_json(common.out.as_deref(), &t)?;
            Ok(t.capped
                .then(|| Warning {
                    fatal: true,
                    message: "trajectory hit max_epochs".into(),
                })
                .into_iter()
                .collect())
        }
        Engine::Network => {
            let (topology, capture_weights) = setup.config.topology_or_flat();
            let options = NetSimOptions {
                capture_weights,
                record: true,
            };
            let outcome = run_network_sim_with(
                &topology,
                setup.game(),
                Some(policy),
                mode,
                Substream::new(setup.seed, 0),
                &options,
            )?;
            eprintln!(
                "{} events, burst: {}, reserve injected: {}{}",
                outcome.events.len(),
                outcome.burst,
                outcome.injected,
                if outcome.capped { " (capped)" } else { "" }
            );
            let capped = outcome.capped;
            emit(
                common.out.as_deref(),
                &EventLog::new(outcome.events).to_lines(),
            )?;
            Ok(capped
                .then(|| Warning {
                    fatal: true,
                    message: "simulation hit max_epochs".into(),
                })
                .into_iter()
                .collect())
        }
    }
}

#[derive(Serialize)]
struct EstimateReport {
    seed: u64,
    trajectories: u64,
    ci_level: f64,
    reserve_count: u32,
    availability: f64,
    regular: Option<BurstEstimate>,
    safety: Option<BurstEstimate>,
    /// Null when no trajectory has a pre-exit epoch.
    pre_exit: Option<PreExitDistribution>,
}

fn estimate(common: &Common, mode: Option<Mode>, flags: &McFlags) -> Outcome {
    let setup = Setup::new(common, Some(flags))?;
    let mc = setup.mc();
    let policy = &setup.config.policy;
    let wanted = |m: Mode| mode.is_none_or(|x| x == m);
    let run = |m: Mode| -> Result<Option<BurstEstimate>, Failure> {
        if !wanted(m) {
            return Ok(None);
        }
        Ok(Some(estimate_burst_probability(
            setup.game(),
            m,
            Some(policy),
            &mc,
        )?))
    };
    let regular = run(Mode::Regular)?;
    let safety = run(Mode::Safety)?;
    let pre_exit = match estimate_pre_exit_distribution(setup.game(), &mc) {
        Ok(d) => Some(d),
        Err(Error::NoPreExitEpoch) => None,
        Err(e) => return Err(e.into()),
    };
    let mut warnings: Vec<Warning> = [("regular", &regular), ("safety", &safety)]
        .into_iter()
        .filter_map(|(label, e)| e.as_ref().and_then(|e| cap_warning(label, e)))
        .collect();
    if pre_exit.is_none() {
        warnings.push(Warning {
            fatal: false,
            message: "no trajectory reached a pre-exit epoch; pre_exit is null".into(),
        });
    }
    let report = EstimateReport {
        seed: setup.seed,
        trajectories: mc.num_trajectories,
        ci_level: mc.ci_level,
        reserve_count: policy.reserve_count,
        availability: policy.availability,
        regular,
        safety,
        pre_exit,
    };
    emit_json(common.out.as_deref(), &report)?;
    Ok(warnings)
}

fn solve(
    common: &Common,
    flags: &McFlags,
    exact: bool,
) -> Result<(Setup, OptimizationResult, Vec<Warning>), Failure> {
    let setup = Setup::new(common, Some(flags))?;
    let cfg = &setup.config;
    let mut warnings = Vec::new();
    let result = if exact {
        optimize(&OracleModel::new(&cfg.game)?, &cfg.costs, &cfg.grid)?
    } else {
        let model = MonteCarloModel::new(&cfg.game, cfg.grid.n_max, &setup.mc())?;
        warnings.extend(cap_warning("common paths", &model.paths().regular()));
        optimize(&model, &cfg.costs, &cfg.grid)?
    };
    if !result.pre_exit_defined {
        warnings.push(Warning {
            fatal: false,
            message: "no path reaches a pre-exit epoch; p_below set to 0".into(),
        });
    }
    Ok((setup, result, warnings))
}

#[derive(Serialize)]
struct OptimizeReport {
    /// Null for exact runs, which draw no randomness.
    seed: Option<u64>,
    trajectories: Option<u64>,
    model: &'static str,
    result: OptimizationResult,
}

impl OptimizeReport {
    fn new(setup: &Setup, exact: bool, result: OptimizationResult) -> Self {
        Self {
            seed: (!exact).then_some(setup.seed),
            trajectories: (!exact).then_some(setup.config.mc.trajectories),
            model: if exact { "oracle" } else { "monte-carlo" },
            result,
        }
    }
}

#[derive(Serialize)]
struct OracleReport {
    q0: f64,
    q1: f64,
    reserve_count: u32,
    availability: f64,
    /// Safety burst probability for a realized reserve of `b` nodes,
    /// `b = 0..=reserve_count`.
    by_reserve: Vec<f64>,
    pre_exit: Option<PreExitDistribution>,
}

fn oracle(common: &Common) -> Outcome {
    let setup = Setup::new(common, None)?;
    let policy = &setup.config.policy;
    let oracle = Oracle::new(setup.game())?;
    let by_reserve = (0..=policy.reserve_count)
        .map(|b| oracle.burst_probability(b))
        .collect::<Result<Vec<_>, _>>()?;
    let pre_exit = match oracle.pre_exit_distribution() {
        Ok(d) => Some(d),
        Err(Error::NoPreExitEpoch) => None,
        Err(e) => return Err(e.into()),
    };
    let report = OracleReport {
        q0: by_reserve[0],
        q1: oracle.safety_burst_probability(policy)?,
        reserve_count: policy.reserve_count,
        availability: policy.availability,
        by_reserve,
        pre_exit,
    };
    emit_json(common.out.as_deref(), &report)?;
    Ok(Vec::new())
}
