mod common;

use std::f64::consts::TAU;

use shsbarrier::catalog::{kuramoto_subsystem, kuramoto_tasks, KuramotoParams};
use shsbarrier::certificate::{mode_controllers, verify_cpbf, Status, TaskRegions, VerifyConfig};
use shsbarrier::dfa::LabelRegion;
use shsbarrier::model::{BoxRegion, InputSet, Network, Region};
use shsbarrier::probability::{reach_bound, BoundInput};
use shsbarrier::sim::{simulate, ClosedLoop, InitialStates, Policy, SimConfig};
use shsbarrier::synthesis::{
    candidate_feasible, initial_points, synthesize_cpbf, SynthesisConfig, Template,
};

use common::*;

fn unit_box() -> InputSet {
    InputSet::Box { bounds: BoxRegion::new(&[(-1.0, 1.0)]) }
}

/// `dx = nu dt + 0.1 dW` on [0, 2 pi], started in the middle and kept away
/// from both edges.
fn steered() -> (shsbarrier::model::Subsystem, TaskRegions) {
    let sub = scalar_system(0.0, 1.0, 0.0, 0.1, (0.0, TAU), unit_box());
    let task = TaskRegions {
        initial: Region::from_box(BoxRegion::new(&[(2.8, 3.5)])),
        unsafe_region: Region(vec![BoxRegion::new(&[(0.0, 0.3)]), BoxRegion::new(&[(6.0, TAU)])]),
    };
    (sub, task)
}

fn steered_config() -> SynthesisConfig {
    SynthesisConfig { lambda: 100.0, seed: 3, ..SynthesisConfig::default() }
}

#[test]
fn static_safe_system_needs_no_iterations_beyond_the_first() {
    let sub = scalar_system(0.0, 0.0, 0.0, 0.0, (0.0, 1.0), InputSet::Finite { points: vec![vec![0.0]] });
    let task = TaskRegions { initial: Region::from_box(BoxRegion::new(&[(0.0, 0.5)])), unsafe_region: Region::default() };
    // kappa_hat must stay positive, so psi can only vanish with it; the drift
    // margin would otherwise put a floor under psi
    let cfg = SynthesisConfig {
        template: Template { degree: 0, ..Template::default() },
        kappa_range: [1e-8, 1e-8],
        drift_margin: 1e-9,
        ..SynthesisConfig::default()
    };
    let r = synthesize_cpbf(&sub, &task, &cfg).unwrap();
    assert_eq!(r.iterations, 1);
    let m = &r.certificate.modes[0];
    assert!(m.psi <= 1e-5, "psi {} gamma {}", m.psi, m.gamma);
    assert!(m.barrier.degree() == 0);
    assert_eq!(r.report.status, Status::Verified);
}

#[test]
fn steered_scalar_system_bound_dominates_monte_carlo() {
    let (sub, task) = steered();
    let cfg = steered_config();
    let r = synthesize_cpbf(&sub, &task, &cfg).unwrap();
    let m = &r.certificate.modes[0];
    let b = reach_bound(&BoundInput {
        gamma: m.gamma,
        lambda: m.lambda,
        psi: m.psi,
        kappa_hat: r.kappa_hat,
        horizon: cfg.horizon,
    })
    .unwrap();
    assert!(b.delta < 1.0, "{b:?}");

    let cl = ClosedLoop {
        net: Network { subsystems: vec![sub.clone()] },
        labeling: None,
        spec: None,
        policy: Policy::Static(vec![mode_controllers(&sub, &r.certificate, &cfg.verify).unwrap()]),
        initial: InitialStates::Uniform(vec![task.initial.clone()]),
        initial_modes: vec![0],
        unsafe_set: Some(LabelRegion::Uniform { region: task.unsafe_region.clone() }),
    };
    let sim = SimConfig { dt: 2e-3, horizon: cfg.horizon, trajectories: 10_000, seed: 9, ..SimConfig::default() };
    let rep = simulate(&cl, &sim).unwrap();
    let e = rep.unsafe_frequency;
    let sigma = (b.delta * (1.0 - b.delta) / e.trials as f64).sqrt();
    assert!(e.frequency <= b.delta + 3.0 * sigma, "empirical {} vs bound {}", e.frequency, b.delta);
}

#[test]
fn returned_certificates_re_verify() {
    let (sub, task) = steered();
    let cfg = steered_config();
    let r = synthesize_cpbf(&sub, &task, &cfg).unwrap();
    let rep = verify_cpbf(&sub, &r.certificate, &task, &cfg.verify).unwrap();
    assert_eq!(rep.status, Status::Verified);
    let fine = VerifyConfig { points_per_dim: 4001, ..cfg.verify.clone() };
    assert_ne!(verify_cpbf(&sub, &r.certificate, &task, &fine).unwrap().status, Status::Falsified);
}

#[test]
fn adding_points_never_enlarges_the_feasible_set() {
    let params = KuramotoParams::new(10, unit_box());
    let sub = kuramoto_subsystem(0, &params);
    let task = &kuramoto_tasks()[0];
    let cfg = SynthesisConfig { lambda: 4300.0, ..SynthesisConfig::default() };
    let full = initial_points(&sub, task, &cfg).unwrap();
    for kappa in [1e-6, 1e-3, 0.1, 1.0] {
        let mut subsets = Vec::new();
        for keep in [full.points.len() / 4, full.points.len() / 2, full.points.len()] {
            let mut s = full.clone();
            s.points.truncate(keep);
            subsets.push(candidate_feasible(&sub, task, &cfg, &s, kappa).unwrap().is_some());
        }
        // feasible with more points implies feasible with fewer
        for w in subsets.windows(2) {
            assert!(!w[1] || w[0], "kappa {kappa}: {subsets:?}");
        }
    }
}

#[test]
fn identical_seeds_give_identical_certificates() {
    let (sub, task) = steered();
    let cfg = steered_config();
    let a = serde_json::to_string(&synthesize_cpbf(&sub, &task, &cfg).unwrap().certificate).unwrap();
    let b = serde_json::to_string(&synthesize_cpbf(&sub, &task, &cfg).unwrap().certificate).unwrap();
    assert_eq!(a, b);
}
