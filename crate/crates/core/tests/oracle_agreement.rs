//! Monte Carlo estimators, the network simulation and the exact oracle on
//! small instances.

use bgg_core::estimators::oracle::Oracle;
use bgg_core::netsim::estimate_network_burst;
use bgg_core::stats::{wilson_interval, Interval};
use bgg_core::{
    elect_leader, estimate_burst_probability, estimate_joint_functional,
    estimate_pre_exit_distribution, oracle_burst_probability, GameParams, McConfig, Mode,
    ReservePolicy, Topology, TransformPoint,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const GOLDEN: &str = include_str!("golden/symmetric_m4.json");

fn golden() -> Value {
    serde_json::from_str(GOLDEN).unwrap()
}

fn three_sigma(successes: u64, trials: u64) -> Interval {
    wilson_interval(successes, trials, 3.0)
}

#[test]
fn golden_values_match_oracle() {
    let g = golden();
    let oracle = Oracle::new(&GameParams::new(4, 1.0, 1.0)).unwrap();
    let q = oracle.burst_probability(0).unwrap();
    assert!((q - g["regular_burst"]["value"].as_f64().unwrap()).abs() < 1e-15);

    let (iterated, _) = oracle.burst_probability_value_iteration(0, 1e-15).unwrap();
    assert!((iterated - q).abs() < 1e-10);

    let pre = oracle.pre_exit_distribution().unwrap();
    for (k, want) in g["pre_exit_pmf"].as_array().unwrap().iter().enumerate() {
        assert!((pre.pmf[k] - want["value"].as_f64().unwrap()).abs() < 1e-14);
    }
    assert!((pre.support - g["pre_exit_support"]["value"].as_f64().unwrap()).abs() < 1e-14);

    let zeta = oracle
        .joint_functional(&TransformPoint::with_zeta(0.9), 0, 1000)
        .unwrap();
    assert!((zeta.value - g["zeta_transform"]["value"].as_f64().unwrap()).abs() < 1e-14);

    let synthetic = Oracle::new(&GameParams::new(10, 1.0, 1.2)).unwrap();
    for (b, want) in g["synthetic_safety_burst_rho1"]["by_reserve"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
    {
        let got = synthetic.burst_probability(b as u32).unwrap();
        assert!((got - want.as_f64().unwrap()).abs() < 1e-13, "B = {b}");
    }
}

#[test]
fn regular_estimate_brackets_oracle() {
    let params = GameParams::new(4, 1.0, 1.0);
    let exact = oracle_burst_probability(&params, Mode::Regular, None).unwrap();
    let est = estimate_burst_probability(&params, Mode::Regular, None, &McConfig::new(100_000, 1))
        .unwrap();
    assert!(
        three_sigma(est.bursts, est.samples).contains(exact),
        "{} vs {exact}",
        est.q_hat
    );
}

#[test]
fn safety_estimate_brackets_oracle() {
    for (m, la, lh) in [(4, 1.0, 1.0), (6, 2.0, 1.0), (2, 0.5, 0.5)] {
        let params = GameParams::new(m, la, lh);
        let policy = ReservePolicy::new(3, 0.6);
        let exact = oracle_burst_probability(&params, Mode::Safety, Some(&policy)).unwrap();
        let est = estimate_burst_probability(
            &params,
            Mode::Safety,
            Some(&policy),
            &McConfig::new(100_000, 8),
        )
        .unwrap();
        assert!(
            three_sigma(est.bursts, est.samples).contains(exact),
            "M={m}: {} vs {exact}",
            est.q_hat
        );
    }
}

#[test]
fn pre_exit_pmf_brackets_oracle() {
    let params = GameParams::new(4, 1.0, 1.0);
    let exact = Oracle::new(&params)
        .unwrap()
        .pre_exit_distribution()
        .unwrap();
    let mc = estimate_pre_exit_distribution(&params, &McConfig::new(100_000, 5)).unwrap();
    let used = mc.support as u64;
    for (k, (&got, &want)) in mc.pmf.iter().zip(&exact.pmf).enumerate() {
        let hits = (got * mc.support).round() as u64;
        assert!(
            three_sigma(hits, used).contains(want),
            "k = {k}: {got} vs {want}"
        );
    }
    assert!((mc.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // support fraction itself
    assert!(three_sigma(used, 100_000).contains(exact.support));
}

fn transform_agrees(params: &GameParams, point: TransformPoint, seed: u64) {
    let n = 100_000u64;
    let exact = Oracle::new(params)
        .unwrap()
        .joint_functional(&point, 0, 2_000)
        .unwrap();
    assert!(exact.residual < 1e-9);
    let est = estimate_joint_functional(params, &point, None, &McConfig::new(n, seed)).unwrap();
    // each sample lies in [0, 1], so its variance is at most the mean
    let sigma = (exact.value / n as f64).sqrt();
    assert!(
        (est - exact.value).abs() <= 3.0 * sigma,
        "{est} vs {}",
        exact.value
    );
}

#[test]
fn zeta_transform_brackets_oracle() {
    transform_agrees(
        &GameParams::new(4, 1.0, 1.0),
        TransformPoint::with_zeta(0.9),
        21,
    );
}

#[test]
fn full_transform_brackets_oracle() {
    let point = TransformPoint {
        zeta: 0.95,
        g0: 0.9,
        g1: 0.8,
        z0: 0.97,
        z1: 0.85,
    };
    transform_agrees(&GameParams::new(6, 1.5, 1.0), point, 22);
}

#[test]
fn unit_transform_is_the_burst_probability() {
    let params = GameParams::new(6, 1.3, 1.0);
    let policy = ReservePolicy::new(2, 0.5);
    let mc = McConfig::new(20_000, 3);
    let phi =
        estimate_joint_functional(&params, &TransformPoint::UNIT, Some(&policy), &mc).unwrap();
    let q = estimate_burst_probability(&params, Mode::Safety, Some(&policy), &mc).unwrap();
    assert_eq!(phi, q.q_hat);
}

#[test]
fn network_simulation_brackets_oracle() {
    let params = GameParams::new(4, 1.0, 1.0);
    let exact = oracle_burst_probability(&params, Mode::Regular, None).unwrap();
    let topo = Topology {
        component_nodes: 2,
        service_nodes: 1,
        hq_nodes: 1,
    };
    let est = estimate_network_burst(
        &topo,
        &params,
        None,
        Mode::Regular,
        &McConfig::new(100_000, 77),
    )
    .unwrap();
    assert!(
        three_sigma(est.bursts, est.samples).contains(exact),
        "{} vs {exact}",
        est.q_hat
    );
}

#[test]
fn leader_election_is_uniform() {
    let nodes = Topology::flat(5);
    let params = GameParams::new(5, 1.0, 1.0);
    // borrow node states from a finished simulation
    let state = bgg_core::run_network_sim(&nodes, &params, None, Mode::Regular, 0)
        .unwrap()
        .nodes;
    let draws = 1_000_000u64;
    let mut counts = [0u64; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..draws {
        counts[elect_leader(&state, &mut rng).unwrap() as usize] += 1;
    }
    let sigma = (draws as f64 * 0.2 * 0.8).sqrt();
    for c in counts {
        assert!((c as f64 - 0.2 * draws as f64).abs() <= 5.0 * sigma);
    }
}

#[test]
fn results_do_not_depend_on_pool_size() {
    let params = GameParams::new(6, 1.0, 1.2);
    let mc = McConfig::new(30_000, 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let q = estimate_burst_probability(&params, Mode::Regular, None, &mc).unwrap();
                let phi =
                    estimate_joint_functional(&params, &TransformPoint::with_zeta(0.8), None, &mc)
                        .unwrap();
                (q, phi)
            })
    };
    assert_eq!(run(1), run(4));
}
