//! Independent oracles shared by the integration tests. Nothing here goes
//! through the generator module: derivatives are taken term by term and
//! the stochastic process is simulated directly.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use shsbarrier::catalog::{kuramoto_reference_certificates, kuramoto_subsystem, kuramoto_tasks, KuramotoParams};
use shsbarrier::certificate::{
    assemble_sos_expressions, initial_margin, lower_bound_margin, unsafe_margin, ControlLaw, PseudoCertificate,
    SosMultipliers,
};
use shsbarrier::compose::SmallGainData;
use shsbarrier::generator::{apply_generator, assemble_drift_condition, mode_coupling, DriftParams};
use shsbarrier::model::{
    constant_rates, BoxRegion, DisturbanceSource, InputSet, Mode, Region, Subsystem,
};
use shsbarrier::poly::{var_names, Polynomial, ScalarGainFunction};

/// First and second partial derivatives of each mode barrier.
pub struct Derivatives {
    d1: Vec<Vec<Polynomial>>,
    d2: Vec<Vec<Vec<Polynomial>>>,
}

impl Derivatives {
    pub fn new(barriers: &[Polynomial]) -> Self {
        let d1: Vec<Vec<Polynomial>> = barriers.iter().map(|b| b.gradient()).collect();
        let d2 = d1.iter().map(|g| g.iter().map(|d| d.gradient()).collect()).collect();
        Derivatives { d1, d2 }
    }
}

/// `L B_p` at the full variable vector `z`, including mode switching.
pub fn generator_at(sub: &Subsystem, barriers: &[Polynomial], p: usize, z: &[f64]) -> f64 {
    generator_with(sub, barriers, &Derivatives::new(barriers), p, z)
}

pub fn generator_with(
    sub: &Subsystem,
    barriers: &[Polynomial],
    der: &Derivatives,
    p: usize,
    z: &[f64],
) -> f64 {
    let n = sub.n();
    let x = &z[..n];
    let b = &barriers[p];
    let mode = &sub.modes[p];
    let mut v = 0.0;
    for k in 0..n {
        v += mode.drift[k].eval_unchecked(z) * der.d1[p][k].eval_unchecked(x);
    }
    let cols = mode.diffusion.first().map_or(0, |r| r.len());
    for c in 0..cols {
        for k in 0..n {
            for l in 0..n {
                let s = mode.diffusion[k][c].eval_unchecked(x) * mode.diffusion[l][c].eval_unchecked(x);
                v += 0.5 * s * der.d2[p][k][l].eval_unchecked(x);
            }
        }
    }
    for (j, &rate) in sub.poisson_rates.iter().enumerate() {
        let moved: Vec<f64> = (0..n).map(|k| x[k] + mode.reset[k][j].eval_unchecked(x)).collect();
        v += rate * (b.eval_unchecked(&moved) - b.eval_unchecked(x));
    }
    for (q, r) in sub.transition_rates[p].iter().enumerate() {
        v += r.eval_unchecked(x) * (barriers[q].eval_unchecked(x) - b.eval_unchecked(x));
    }
    v
}

/// Left side of the drift condition of mode `p`, which must be <= 0.
pub fn drift_lhs(sub: &Subsystem, cert: &PseudoCertificate, p: usize, z: &[f64]) -> f64 {
    let m = &cert.modes[p];
    let barriers = cert.barriers();
    let lay = sub.layout();
    let x = &z[..sub.n()];
    let w2: f64 = z[lay.internal()].iter().map(|w| w * w).sum();
    generator_at(sub, &barriers, p, z) + m.kappa.eval(barriers[p].eval_unchecked(x))
        - m.rho_int.eval(w2)
        - m.psi
}

/// One-dimensional two-mode switched jump diffusion with affine data.
pub fn random_switched_system(rng: &mut ChaCha8Rng) -> Subsystem {
    let sv = var_names(&["x"]);
    let mut modes = Vec::new();
    for _ in 0..2 {
        let a = rng.random_range(-1.5..-0.2);
        let c = rng.random_range(-0.5..0.5);
        let s = rng.random_range(0.05..0.4);
        let r = rng.random_range(0.2..0.6) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        modes.push(Mode {
            drift: vec![Polynomial::affine(&sv, c, &[a])],
            diffusion: vec![vec![Polynomial::affine(&sv, s, &[0.1])]],
            reset: vec![vec![Polynomial::affine(&sv, r, &[0.0])]],
            controller: None,
        });
    }
    let (q01, q10) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
    Subsystem {
        id: "s".into(),
        state_vars: sv.clone(),
        input_vars: vec![],
        internal_vars: vec![],
        disturbance_vars: vec![],
        state_box: BoxRegion::new(&[(-50.0, 50.0)]),
        external_input: InputSet::Free { dim: 0 },
        internal_box: BoxRegion(vec![]),
        disturbance_box: BoxRegion(vec![]),
        disturbance_source: DisturbanceSource::Zero,
        modes,
        transition_rates: constant_rates(&sv, &[vec![-q01, q01], vec![q10, -q10]]),
        poisson_rates: vec![rng.random_range(0.2..1.5)],
        outputs: Default::default(),
        initial: Region::default(),
        unsafe_region: Region::default(),
    }
}

pub struct DynkinEstimate {
    /// Sample mean of `B(X_T) - B(X_0) - int_0^T L B ds`.
    pub mean: f64,
    pub std_err: f64,
}

/// Monte Carlo check of Dynkin's formula for a system without inputs;
/// `gen(p, x)` is the generator under test applied to the mode barriers.
pub fn dynkin_residual(
    sub: &Subsystem,
    barriers: &[Polynomial],
    gen: &dyn Fn(usize, f64) -> f64,
    x0: f64,
    horizon: f64,
    dt: f64,
    paths: usize,
    seed: u64,
) -> DynkinEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (horizon / dt).round() as usize;
    let jump = Poisson::new(sub.poisson_rates[0] * dt).unwrap();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..paths {
        let (mut x, mut p) = (x0, 0usize);
        let mut integral = 0.0;
        for _ in 0..steps {
            let lb = gen(p, x);
            let m = &sub.modes[p];
            let g: f64 = rng.sample(StandardNormal);
            let k: f64 = jump.sample(&mut rng);
            let nx = x
                + m.drift[0].eval_unchecked(&[x]) * dt
                + m.diffusion[0][0].eval_unchecked(&[x]) * dt.sqrt() * g
                + m.reset[0][0].eval_unchecked(&[x]) * k;
            let out = -sub.transition_rates[p][p].eval_unchecked(&[x]);
            if rng.random::<f64>() < out * dt {
                p = 1 - p;
            }
            // trapezoid in time for the integral term
            let lb_next = gen(p, nx);
            integral += 0.5 * (lb + lb_next) * dt;
            x = nx;
        }
        let d = barriers[p].eval_unchecked(&[x]) - barriers[0].eval_unchecked(&[x0]) - integral;
        s1 += d;
        s2 += d * d;
    }
    let n = paths as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    DynkinEstimate { mean, std_err: (var / n).sqrt() }
}

/// Quadratic barriers, one per mode.
pub fn quadratic_barriers(rng: &mut ChaCha8Rng) -> Vec<Polynomial> {
    (0..2)
        .map(|_| {
            Polynomial::univariate(
                "x",
                &[rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0)],
            )
        })
        .collect()
}

/// `dx = (a x + b u + c) dt + s dW` on a box, one mode, no jumps.
pub fn scalar_system(a: f64, b: f64, c: f64, s: f64, state: (f64, f64), input: InputSet) -> Subsystem {
    let sv = var_names(&["x"]);
    let (vars, iv) = if input.dim() == 0 { (sv.clone(), vec![]) } else { (var_names(&["x", "u"]), var_names(&["u"])) };
    let coeffs: Vec<f64> = if input.dim() == 0 { vec![a] } else { vec![a, b] };
    Subsystem {
        id: "s".into(),
        state_vars: sv.clone(),
        input_vars: iv,
        internal_vars: vec![],
        disturbance_vars: vec![],
        state_box: BoxRegion::new(&[state]),
        external_input: input,
        internal_box: BoxRegion(vec![]),
        disturbance_box: BoxRegion(vec![]),
        disturbance_source: DisturbanceSource::Zero,
        modes: vec![Mode {
            drift: vec![Polynomial::affine(&vars, c, &coeffs)],
            diffusion: vec![vec![Polynomial::constant(&sv, s)]],
            reset: vec![vec![]],
            controller: None,
        }],
        transition_rates: constant_rates(&sv, &[vec![0.0]]),
        poisson_rates: vec![],
        outputs: Default::default(),
        initial: Region::default(),
        unsafe_region: Region::default(),
    }
}

/// A project file shipped with the crate.
pub fn project(name: &str) -> shsbarrier::project::Project {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("projects").join(name);
    shsbarrier::project::Project::load(&p).unwrap()
}

/// Largest eigenvalue modulus of `Lambda^-1 Delta` by dense Schur
/// decomposition.
pub fn dense_spectral_radius(sgd: &SmallGainData) -> f64 {
    let n = sgd.lambda.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { sgd.delta[i][j] / sgd.lambda[i] });
    // QR iteration can stall on nilpotent blocks; a diagonal shift moves the
    // spectrum without changing the eigenvectors
    for shift in [0.0, 0.5, -0.7, 1.3] {
        let shifted = &m + nalgebra::DMatrix::identity(n, n) * shift;
        if let Some(s) = shifted.try_schur(1e-15, 100_000) {
            return s
                .complex_eigenvalues()
                .iter()
                .map(|z| (z - nalgebra::Complex::new(shift, 0.0)).norm())
                .fold(0.0, f64::max);
        }
    }
    panic!("Schur decomposition did not converge for any shift");
}

/// Dynkin residual of the library generator on the random system drawn
/// from `seed`.
pub fn dynkin_switched(seed: u64) -> DynkinEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub = random_switched_system(&mut rng);
    let b = quadratic_barriers(&mut rng);
    let vars = sub.all_vars();
    let g: Vec<_> = (0..2)
        .map(|p| {
            &apply_generator(&sub, p, &b[p]).unwrap().total()
                + &mode_coupling(&sub, p, &b).unwrap().embed(&vars).unwrap()
        })
        .collect();
    dynkin_residual(&sub, &b, &|p, x| g[p].eval_unchecked(&[x]), 0.7, 1.0, 1e-3, 10000, seed)
}

/// Largest relative gap between the zero-multiplier sum-of-squares
/// expressions and the pointwise certificate conditions, over random points,
/// for the reference certificates.
pub fn sos_pointwise_gap(seed: u64, points: usize) -> f64 {
    let params = KuramotoParams::new(100, InputSet::Free { dim: 1 });
    let sub = kuramoto_subsystem(0, &params);
    let vars = sub.all_vars();
    let lay = sub.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut gap = |a: f64, b: f64| worst = worst.max((a - b).abs() / b.abs().max(1.0));
    for (cert, task) in kuramoto_reference_certificates(&sub.id).iter().zip(kuramoto_tasks().iter()) {
        // the sum-of-squares form needs a polynomial lower-bound gain
        let mut cert = cert.clone();
        for m in cert.modes.iter_mut() {
            m.alpha = ScalarGainFunction::Linear { a: 0.8 };
        }
        for p in 0..2 {
            let m = &cert.modes[p];
            let sos = assemble_sos_expressions(&sub, &cert, p, task, &SosMultipliers::zero(&sub, task)).unwrap();
            let ControlLaw::Feedback { laws } = &m.controller else { unreachable!() };
            let drift = assemble_drift_condition(
                &sub,
                p,
                &cert.barriers(),
                &DriftParams { kappa: &m.kappa, rho_int: &m.rho_int, psi: m.psi },
            )
            .unwrap();
            for _ in 0..points {
                let x = rng.random_range(0.0..std::f64::consts::TAU);
                gap(sos.lower_bound.eval_unchecked(&[x]), lower_bound_margin(&sub, m).eval(&[x]));
                for e in &sos.initial {
                    gap(e.eval_unchecked(&[x]), initial_margin(&sub, m).eval(&[x]));
                }
                for e in &sos.unsafe_region {
                    gap(e.eval_unchecked(&[x]), unsafe_margin(&sub, m).eval(&[x]));
                }
                let mut z: Vec<f64> = (0..vars.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                z[0] = x;
                z[lay.input().start] = laws[0].eval_unchecked(&[x]);
                let lhs = drift_lhs(&sub, &cert, p, &z);
                gap(-sos.drift.eval(&z), lhs);
                gap(drift.eval(&z), lhs);
            }
        }
    }
    worst
}

/// Random gains for `n` subsystems; each off-diagonal entry is kept with
/// probability `density`.
pub fn random_gains(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SmallGainData {
    let lambda = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let delta = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = rng.random_range(0.01..1.0) / n as f64;
                    if i == j || rng.random::<f64>() >= density { 0.0 } else { d }
                })
                .collect()
        })
        .collect();
    SmallGainData { lambda, delta, barrier_max: vec![f64::INFINITY; n] }
}
