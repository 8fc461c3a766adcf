//! Ready-made models and automata: the switched stochastic Kuramoto network
//! and a six-location demonstration automaton.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::certificate::{ControlLaw, ModeCertificate, PseudoCertificate, TaskRegions};
use crate::dfa::{DfaSpec, EdgeSpec, LabelEntry, LabelRegion, Labeling};
use crate::model::{
    constant_rates, BoxRegion, DisturbanceSource, InputSet, Mode, Network, Region, Subsystem,
};
use crate::poly::{var_names, Polynomial, ScalarGainFunction};

#[derive(Clone, Debug)]
pub struct KuramotoParams {
    pub oscillators: usize,
    pub coupling: f64,
    pub omega: [f64; 2],
    pub diffusion: [f64; 2],
    pub jump: [f64; 2],
    pub jump_rate: f64,
    pub rates: [[f64; 2]; 2],
    pub input: InputSet,
}

impl KuramotoParams {
    pub fn new(oscillators: usize, input: InputSet) -> Self {
        KuramotoParams {
            oscillators,
            coupling: 0.001,
            omega: [0.1, 0.12],
            diffusion: [0.1, 0.12],
            jump: [0.1, 0.12],
            jump_rate: 0.1,
            rates: [[-0.9, 0.9], [0.8, -0.8]],
            input,
        }
    }
}

pub fn two_pi_box() -> BoxRegion {
    BoxRegion::new(&[(0.0, 2.0 * PI)])
}

/// Phase bands of the oscillators; `band(0)` .. `band(5)`.
pub fn band(z: usize) -> BoxRegion {
    let (a, b) = match z {
        0 => (0.0, PI / 16.0),
        1 => (5.8 * PI / 12.0, 6.2 * PI / 12.0),
        2 => (5.7 * PI / 6.0, PI),
        3 => (PI, 6.2 * PI / 6.0),
        4 => (17.8 * PI / 12.0, 18.2 * PI / 12.0),
        5 => (11.8 * PI / 6.0, 2.0 * PI),
        _ => panic!("no band {z}"),
    };
    BoxRegion::new(&[(a, b)])
}

pub fn subsystem_id(i: usize) -> String {
    format!("osc{i}")
}

/// Oscillator `i` of an all-to-all network. The coupling sum
/// `(K/N) sum_j sin(w_j - theta)` is written as `K (N-1)/N * d` with the
/// disturbance `d` in `[-1, 1]`; simulation realizes `d` as the mean sine.
pub fn kuramoto_subsystem(i: usize, p: &KuramotoParams) -> Subsystem {
    let n = p.oscillators;
    let sv = var_names(&["theta"]);
    let internal: Vec<String> =
        (0..n).filter(|&j| j != i).map(|j| format!("w{j}")).collect();
    let mut all = sv.clone();
    all.push("u".into());
    all.extend(internal.iter().cloned());
    all.push("d".into());
    let c = if n > 0 { p.coupling * (n as f64 - 1.0) / n as f64 } else { 0.0 };
    let modes = (0..2)
        .map(|m| {
            let mut a = vec![0.0; all.len()];
            a[1] = 1.0;
            *a.last_mut().unwrap() = c;
            Mode {
                drift: vec![Polynomial::affine(&all, p.omega[m], &a)],
                diffusion: vec![vec![Polynomial::constant(&sv, p.diffusion[m])]],
                reset: vec![vec![Polynomial::constant(&sv, p.jump[m])]],
                controller: None,
            }
        })
        .collect();
    let mut outputs = BTreeMap::new();
    for j in 0..n {
        if j != i {
            outputs.insert(subsystem_id(j), vec![Polynomial::var(&sv, 0)]);
        }
    }
    Subsystem {
        id: subsystem_id(i),
        state_vars: sv.clone(),
        input_vars: var_names(&["u"]),
        internal_box: BoxRegion::cube(internal.len(), 0.0, 2.0 * PI),
        internal_vars: internal,
        disturbance_vars: var_names(&["d"]),
        state_box: two_pi_box(),
        external_input: p.input.clone(),
        disturbance_box: BoxRegion::new(&[(-1.0, 1.0)]),
        disturbance_source: DisturbanceSource::MeanSineOfInternalInputs,
        modes,
        transition_rates: constant_rates(
            &sv,
            &[p.rates[0].to_vec(), p.rates[1].to_vec()],
        ),
        poisson_rates: vec![p.jump_rate],
        outputs,
        initial: Region::default(),
        unsafe_region: Region::default(),
    }
}

pub fn kuramoto_network(p: &KuramotoParams) -> Network {
    Network { subsystems: (0..p.oscillators).map(|i| kuramoto_subsystem(i, p)).collect() }
}

pub fn kuramoto_labeling() -> Labeling {
    Labeling {
        entries: (0..6)
            .map(|z| LabelEntry {
                symbol: format!("p{z}"),
                region: LabelRegion::Uniform { region: Region::from_box(band(z)) },
            })
            .collect(),
        otherwise: Some("p6".into()),
    }
}

fn edge(from: &str, symbols: &[&str], to: &str) -> EdgeSpec {
    EdgeSpec {
        from: from.into(),
        symbols: symbols.iter().map(|s| s.to_string()).collect(),
        to: to.into(),
    }
}

/// Automaton accepting the traces that violate "start in band 1 and avoid
/// bands 0 and 2, or start in band 4 and avoid bands 3 and 5".
pub fn kuramoto_complement_automaton() -> DfaSpec {
    DfaSpec {
        locations: var_names(&["q0", "q1", "q2", "q3"]),
        alphabet: (0..7).map(|z| format!("p{z}")).collect(),
        initial: "q0".into(),
        accepting: vec!["q3".into()],
        edges: vec![
            edge("q0", &["p1"], "q1"),
            edge("q0", &["p4"], "q2"),
            edge("q0", &["p0", "p2", "p3", "p5", "p6"], "q3"),
            edge("q1", &["p0", "p2"], "q3"),
            edge("q2", &["p3", "p5"], "q3"),
        ],
        complete_with_self_loops: true,
    }
}

/// Six-location automaton with five accepting runs; missing transitions are
/// self-loops and `q3` is absorbing.
pub fn demo_automaton() -> DfaSpec {
    DfaSpec {
        locations: var_names(&["q0", "q1", "q2", "q3", "q4", "q5"]),
        alphabet: var_names(&["p0", "p1", "p2", "p3"]),
        initial: "q0".into(),
        accepting: vec!["q3".into()],
        edges: vec![
            edge("q0", &["p0"], "q1"),
            edge("q0", &["p1", "p3"], "q3"),
            edge("q0", &["p2"], "q4"),
            edge("q1", &["p1"], "q2"),
            edge("q1", &["p2"], "q5"),
            edge("q2", &["p2"], "q3"),
            edge("q5", &["p1"], "q3"),
            edge("q4", &["p3"], "q3"),
            edge("q4", &["p0"], "q5"),
        ],
        complete_with_self_loops: true,
    }
}

/// Reach-avoid regions of the two Kuramoto elements, per oscillator.
pub fn kuramoto_tasks() -> [TaskRegions; 2] {
    [
        TaskRegions {
            initial: Region::from_box(band(1)),
            unsafe_region: Region(vec![band(0), band(2)]),
        },
        TaskRegions {
            initial: Region::from_box(band(4)),
            unsafe_region: Region(vec![band(3), band(5)]),
        },
    ]
}

struct Printed {
    coeffs: [f64; 7],
    law: [f64; 2],
    gamma: f64,
    lambda: f64,
    psi: f64,
    kappa: f64,
    alpha: f64,
    rho: f64,
}

fn printed_cert(id: &str, modes: [Printed; 2]) -> PseudoCertificate {
    PseudoCertificate {
        subsystem: id.into(),
        modes: modes
            .iter()
            .map(|m| ModeCertificate {
                barrier: Polynomial::univariate("theta", &m.coeffs),
                alpha: ScalarGainFunction::Power { a: m.alpha, b: 0.5 },
                kappa: ScalarGainFunction::Linear { a: m.kappa },
                rho_int: ScalarGainFunction::Power { a: m.rho, b: 0.5 },
                gamma: m.gamma,
                lambda: m.lambda,
                psi: m.psi,
                controller: ControlLaw::Feedback {
                    laws: vec![Polynomial::univariate("theta", &m.law)],
                },
            })
            .collect(),
    }
}

/// Degree-6 reference certificates with affine controllers for the two
/// reach-avoid elements of the Kuramoto specification.
pub fn kuramoto_reference_certificates(id: &str) -> [PseudoCertificate; 2] {
    [
        printed_cert(
            id,
            [
                Printed {
                    coeffs: [6245.0, -1038.0, 4791.0, -36.0, 8.9, -310.0, 85.0],
                    law: [7000.0, -5356.0],
                    gamma: 3.0,
                    lambda: 4300.0,
                    psi: 50.0,
                    kappa: 5e-5,
                    alpha: 0.8,
                    rho: 4e-7,
                },
                Printed {
                    coeffs: [6286.0, -1040.0, 4756.0, -9.5, 2.8, -308.0, 84.0],
                    law: [5000.0, -4229.0],
                    gamma: 3.2,
                    lambda: 4400.0,
                    psi: 52.0,
                    kappa: 53e-6,
                    alpha: 0.85,
                    rho: 4.2e-7,
                },
            ],
        ),
        printed_cert(
            id,
            [
                Printed {
                    coeffs: [24559.0, -6365.0, 20.0, -1.1, 6.7, -0.028, 0.2],
                    law: [6900.0, -1733.0],
                    gamma: 300.0,
                    lambda: 5000.0,
                    psi: 64.0,
                    kappa: 5e-5,
                    alpha: 0.8,
                    rho: 4e-7,
                },
                Printed {
                    coeffs: [22215.0, -5801.0, 21.0, -5.5, 8.7, -0.038, 0.11],
                    law: [21870.0, -1678.0],
                    gamma: 340.0,
                    lambda: 4500.0,
                    psi: 66.0,
                    kappa: 51e-6,
                    alpha: 0.82,
                    rho: 4.1e-7,
                },
            ],
        ),
    ]
}
