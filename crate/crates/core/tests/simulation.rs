mod common;

use proptest::prelude::*;

use shsbarrier::catalog::kuramoto_complement_automaton;
use shsbarrier::dfa::{Dfa, LabelRegion, RunEnumeration, SpecTask};
use shsbarrier::model::{constant_rates, BoxRegion, InputSet, Mode, Network, Region};
use shsbarrier::poly::{var_names, Polynomial};
use shsbarrier::sim::{
    estimate_satisfaction, simulate, wilson, ClosedLoop, InitialStates, Policy, SimConfig, TraceReport,
};

use common::*;

fn open_loop(sub: shsbarrier::model::Subsystem, x0: f64) -> ClosedLoop {
    ClosedLoop {
        net: Network { subsystems: vec![sub] },
        labeling: None,
        spec: None,
        policy: Policy::Open,
        initial: InitialStates::Fixed(vec![vec![x0]]),
        initial_modes: vec![0],
        unsafe_set: None,
    }
}

fn final_state(cl: &ClosedLoop, dt: f64, horizon: f64) -> f64 {
    let cfg = SimConfig { dt, horizon, trajectories: 1, keep_paths: 1, decimation: 1, ..SimConfig::default() };
    let rep = simulate(cl, &cfg).unwrap();
    rep.trajectories[0].path.last().unwrap().state[0]
}

#[test]
fn static_system_stays_put() {
    let sub = scalar_system(0.0, 0.0, 0.0, 0.0, (0.0, 1.0), InputSet::Free { dim: 0 });
    let mut cl = open_loop(sub, 0.25);
    cl.initial = InitialStates::Uniform(vec![Region::from_box(BoxRegion::new(&[(0.0, 0.5)]))]);
    cl.unsafe_set = Some(LabelRegion::Uniform { region: Region::from_box(BoxRegion::new(&[(0.6, 1.0)])) });
    let cfg = SimConfig { dt: 0.01, horizon: 1.0, trajectories: 50, keep_paths: 50, decimation: 1, ..SimConfig::default() };
    let rep = simulate(&cl, &cfg).unwrap();
    assert_eq!(rep.unsafe_frequency.count, 0);
    for t in &rep.trajectories {
        let x0 = t.path[0].state[0];
        assert!(t.path.iter().all(|s| s.state[0] == x0));
        assert_eq!(t.path.len(), 101);
    }
}

#[test]
fn two_state_chain_occupancy_matches_stationary_law() {
    let sv = var_names(&["x"]);
    let still = || Mode {
        drift: vec![Polynomial::zero(&sv)],
        diffusion: vec![vec![Polynomial::zero(&sv)]],
        reset: vec![vec![]],
        controller: None,
    };
    let mut sub = scalar_system(0.0, 0.0, 0.0, 0.0, (0.0, 1.0), InputSet::Free { dim: 0 });
    sub.modes = vec![still(), still()];
    sub.transition_rates = constant_rates(&sv, &[vec![-0.9, 0.9], vec![0.8, -0.8]]);
    let cl = open_loop(sub, 0.5);
    let cfg = SimConfig { dt: 0.01, horizon: 1e4, trajectories: 1, seed: 5, ..SimConfig::default() };
    let rep = simulate(&cl, &cfg).unwrap();
    let occ = rep.mode_occupancy[0][0];
    // time averages of the chain have variance 2 pi_0 pi_1 / ((q01 + q10) T)
    let expect: f64 = 0.8 / 1.7;
    let sigma = (2.0 * expect * (1.0 - expect) / (1.7 * 1e4)).sqrt();
    assert!((occ - expect).abs() <= 3.0 * sigma, "occupancy {occ}, expected {expect} +- {}", 3.0 * sigma);
}

#[test]
fn same_seed_same_report() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(21);
    let sub = random_switched_system(&mut rng);
    let cl = open_loop(sub, 0.3);
    let cfg = SimConfig { dt: 1e-3, horizon: 1.0, trajectories: 64, keep_paths: 4, seed: 8, ..SimConfig::default() };
    let a = serde_json::to_string(&simulate(&cl, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&simulate(&cl, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = serde_json::to_string(&simulate(&cl, &SimConfig { seed: 9, ..cfg }).unwrap()).unwrap();
    assert_ne!(a, other);
}

#[test]
fn noiseless_system_follows_the_ode_to_first_order() {
    let sub = scalar_system(-1.0, 0.0, 0.0, 0.0, (-5.0, 5.0), InputSet::Free { dim: 0 });
    let cl = open_loop(sub, 2.0);
    let exact = 2.0 * (-1.0f64).exp();
    let mut errors = Vec::new();
    for dt in [0.02, 0.01, 0.005] {
        let reference = final_state(&cl, dt / 100.0, 1.0);
        assert!((reference - exact).abs() < dt / 50.0);
        let e = (final_state(&cl, dt, 1.0) - reference).abs();
        assert!(e <= dt, "dt {dt}: error {e}");
        errors.push(e);
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "error ratio {ratio}");
    }
}

fn spec() -> SpecTask {
    let dfa = Dfa::from_spec(&kuramoto_complement_automaton()).unwrap();
    let runs = RunEnumeration::simple(&dfa);
    SpecTask::build(dfa, &runs).unwrap()
}

/// Traces with the given label words and nothing else recorded.
fn traces(words: &[Vec<&str>]) -> TraceReport {
    let t: Vec<serde_json::Value> = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            serde_json::json!({
                "index": i, "labels": w, "reached_unsafe": false, "accepted": false, "steps": 1, "path": [],
            })
        })
        .collect();
    let est = serde_json::to_value(wilson(0, words.len(), 1.96)).unwrap();
    serde_json::from_value(serde_json::json!({
        "trajectories": t, "unsafe_frequency": est, "violation_frequency": est,
        "mode_occupancy": [], "dt": 0.01, "horizon": 1.0,
    }))
    .unwrap()
}

#[test]
fn satisfaction_counts_violating_words() {
    let s = spec();
    let mut words = Vec::new();
    for i in 0..40 {
        words.push(match i % 5 {
            0 => vec!["p1", "p0"],
            1 => vec!["p4", "p1"],
            2 => vec!["p4", "p5", "p4"],
            _ => vec!["p1"],
        });
    }
    let r = estimate_satisfaction(&traces(&words), &s).unwrap();
    assert_eq!(r.violation.count, 16);
    assert_eq!(r.violation.trials, 40);
    assert!((r.satisfaction - 0.6).abs() < 1e-15);
    assert!(r.lo <= 0.6 && 0.6 <= r.hi);

    let constant = traces(&vec![vec!["p1"]; 10]);
    assert_eq!(estimate_satisfaction(&constant, &s).unwrap().satisfaction, 1.0);
}

#[test]
fn wilson_reference_values() {
    let e = wilson(50, 100, 1.96);
    assert!((e.lo - 0.403831).abs() < 1e-5 && (e.hi - 0.596169).abs() < 1e-5, "{e:?}");
    let z = wilson(0, 100, 1.96);
    assert_eq!(z.lo, 0.0);
    assert!((z.hi - 0.036995).abs() < 1e-5, "{z:?}");
}

proptest! {
    #[test]
    fn wilson_interval_contains_the_frequency(n in 1usize..5000, f in 0.0f64..=1.0) {
        let k = ((n as f64) * f).floor() as usize;
        let e = wilson(k, n, 1.96);
        prop_assert!(e.lo <= e.frequency + 1e-15 && e.frequency <= e.hi + 1e-15);
        prop_assert!(e.lo >= 0.0 && e.hi <= 1.0);
        let wider = wilson(k, n, 2.58);
        prop_assert!(wider.lo <= e.lo + 1e-15 && wider.hi >= e.hi - 1e-15);
    }
}
