//! Acceptance run: one PASS or FAIL line per criterion, nonzero exit when
//! any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shsbarrier::catalog::{
    demo_automaton, kuramoto_complement_automaton, kuramoto_reference_certificates, kuramoto_subsystem,
    kuramoto_tasks, KuramotoParams,
};
use shsbarrier::certificate::{verify_cpbf, Status, VerifyConfig};
use shsbarrier::compose::{check_small_gain, weighted_columns, SmallGainData};
use shsbarrier::dfa::{Dfa, RunEnumeration, SpecTask};
use shsbarrier::model::{BoxRegion, InputSet};
use shsbarrier::probability::{reach_bound, BoundInput};
use shsbarrier::project::{report_json, run_pipeline, Pipeline, Stage};
use shsbarrier::synthesis::{synthesize_cpbf, SynthesisConfig};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(dt: Duration, limit: Duration) -> bool {
    dt <= limit
}

fn bounds() -> Outcome {
    let t = Instant::now();
    let a = reach_bound(&BoundInput { gamma: 320.0, lambda: 430000.0, psi: 5200.0, kappa_hat: 5e-7, horizon: 5.0 });
    let b = reach_bound(&BoundInput { gamma: 34000.0, lambda: 450000.0, psi: 6400.0, kappa_hat: 5e-7, horizon: 5.0 });
    let dt = t.elapsed();
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let (sa, sb) = (1.0 - a.delta, 1.0 - b.delta);
            let pass = (0.935..=0.945).contains(&sa) && (0.850..=0.860).contains(&sb) && within(dt, Duration::from_millis(10));
            outcome(pass, format!("1-delta = {sa:.4} and {sb:.4} in {dt:?}"))
        }
        (a, b) => outcome(false, format!("{a:?} {b:?}")),
    }
}

fn small_gain() -> Outcome {
    let t = Instant::now();
    let sgd = SmallGainData::uniform(100, 5e-5, 5e-7);
    let r = match check_small_gain(&sgd) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let cols = weighted_columns(&sgd, &[1.0; 100]);
    let dt = t.elapsed();
    let ok = (r.spectral_radius - 0.99).abs() <= 1e-6 && cols.iter().all(|&c| c < 0.0);
    let worst = cols.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        ok && within(dt, Duration::from_secs(1)),
        format!("rho = {:.9}, largest weighted column with mu = 1 is {worst:.3e}, in {dt:?}", r.spectral_radius),
    )
}

fn close(got: [f64; 4], expect: [f64; 4]) -> bool {
    got.iter().zip(expect).all(|(g, e)| (g - e).abs() <= 1e-9 * e.abs())
}

fn composition() -> Outcome {
    let t = Instant::now();
    let mut p = Pipeline::new(project("kuramoto100_reference.json"));
    // the supplied certificates are checked separately below
    if let shsbarrier::project::CertificateSource::Supplied { verify, .. } = &mut p.project.certificates {
        *verify = shsbarrier::project::SuppliedCheck::Skip;
    }
    p.run(Stage::Compose);
    let dt = t.elapsed();
    if let Some(f) = &p.report.failure {
        return outcome(false, format!("{}: {}", f.stage, f.message));
    }
    let expect = [[320.0, 430000.0, 5200.0, 5e-7], [34000.0, 450000.0, 6400.0, 5e-7]];
    let mut pass = p.report.composition.len() == 2;
    let mut detail = Vec::new();
    for (c, e) in p.report.composition.iter().zip(expect) {
        let n = &c.certificate;
        let got = [n.gamma, n.lambda, n.psi, n.kappa_hat];
        pass &= close(got, e);
        detail.push(format!("{}: ({}, {}, {}, {:e})", c.partition, got[0], got[1], got[2], got[3]));
    }
    pass &= within(dt, Duration::from_secs(1));
    outcome(pass, format!("{} in {dt:?}", detail.join("; ")))
}

fn decomposition() -> Outcome {
    let t = Instant::now();
    let build = |spec| {
        let dfa = Dfa::from_spec(&spec).unwrap();
        let cfg = RunEnumeration::simple(&dfa);
        SpecTask::build(dfa, &cfg).unwrap()
    };
    let demo = build(demo_automaton());
    let kur = build(kuramoto_complement_automaton());
    let dt = t.elapsed();
    let elements = |s: &SpecTask, label: &str| -> Vec<Vec<String>> {
        s.decompose(label)
            .unwrap()
            .iter()
            .map(|(_, ts)| ts.iter().map(|&t| s.triple_name(t)).collect())
            .collect()
    };
    let names = |v: &[&str]| -> Vec<String> { v.iter().map(|s| s.to_string()).collect() };
    let mut pass = demo.runs.len() == 5 && !demo.truncated;
    pass &= elements(&demo, "p0")
        == vec![names(&["(q0, q1, q2)", "(q1, q2, q3)"]), names(&["(q0, q1, q5)", "(q1, q5, q3)"])];
    pass &= elements(&demo, "p2") == vec![names(&["(q0, q4, q3)"]), names(&["(q0, q4, q5)", "(q4, q5, q3)"])];
    pass &= elements(&demo, "p1") == vec![Vec::<String>::new()];
    pass &= elements(&demo, "p3") == vec![Vec::<String>::new()];
    let q = |s: &SpecTask, n: &str| s.dfa.location_index(n).unwrap();
    let shared = demo.partitions.iter().find(|p| p.key == (q(&demo, "q0"), q(&demo, "q1")));
    pass &= shared.is_some_and(|p| {
        p.triples.len() == 2
            && p.initial_symbols == vec![demo.dfa.symbol_index("p0").unwrap()]
            && p.unsafe_symbols == vec![demo.dfa.symbol_index("p1").unwrap(), demo.dfa.symbol_index("p2").unwrap()]
    });
    let nontrivial: usize =
        kur.dfa.alphabet.iter().map(|a| elements(&kur, a).iter().map(|e| e.len()).sum::<usize>()).sum();
    pass &= kur.runs.len() == 3 && nontrivial == 2 && kur.partitions.len() == 2;
    pass &= within(dt, Duration::from_secs(1));
    outcome(
        pass,
        format!(
            "demo: {} runs, {} partitions; Kuramoto: {} runs, {nontrivial} elements; in {dt:?}",
            demo.runs.len(),
            demo.partitions.len(),
            kur.runs.len()
        ),
    )
}

fn verification() -> Outcome {
    let params = KuramotoParams::new(100, InputSet::Free { dim: 1 });
    let sub = kuramoto_subsystem(0, &params);
    let cfg = VerifyConfig { points_per_dim: 2001, ..VerifyConfig::default() };
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, (cert, task)) in kuramoto_reference_certificates(&sub.id).iter().zip(kuramoto_tasks().iter()).enumerate() {
        let t = Instant::now();
        let r = match verify_cpbf(&sub, cert, task, &cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        let dt = t.elapsed();
        let min = r.conditions.iter().map(|c| c.worst_margin).fold(f64::INFINITY, f64::min);
        let ok = match r.status {
            Status::Verified => true,
            Status::Inconclusive => min > 0.0,
            Status::Falsified => false,
        };
        pass &= ok && within(dt, Duration::from_secs(30));
        let failing: Vec<String> = r
            .conditions
            .iter()
            .filter(|c| c.status != Status::Verified)
            .map(|c| format!("{}[{}] {:.3e}", c.condition.name(), c.mode, c.worst_margin))
            .collect();
        detail.push(format!("element {}: {:?} in {dt:?} ({})", k + 1, r.status, failing.join(", ")));
    }
    outcome(pass, detail.join("; "))
}

fn synthesis() -> Outcome {
    let params = KuramotoParams::new(10, InputSet::Box { bounds: BoxRegion::new(&[(-1.0, 1.0)]) });
    let sub = kuramoto_subsystem(0, &params);
    let mut pass = true;
    let mut detail = Vec::new();
    for seed in [1u64, 2, 3] {
        let cfg = SynthesisConfig { lambda: 4300.0, seed, ..SynthesisConfig::default() };
        for (k, task) in kuramoto_tasks().iter().enumerate() {
            match synthesize_cpbf(&sub, task, &cfg) {
                Ok(r) => {
                    let again = verify_cpbf(&sub, &r.certificate, task, &cfg.verify).map(|v| v.status).ok();
                    let ok = r.iterations <= 50 && again == Some(Status::Verified) && r.certificate.modes.len() == 2;
                    pass &= ok;
                    detail.push(format!("seed {seed} element {}: {} iterations", k + 1, r.iterations));
                }
                Err(e) => {
                    pass = false;
                    detail.push(format!("seed {seed} element {}: {e}", k + 1));
                }
            }
        }
    }
    outcome(pass, detail.join("; "))
}

fn simulation() -> Outcome {
    let t = Instant::now();
    let mut project = project("kuramoto10_desk.json");
    if let Some(sim) = &mut project.simulation {
        sim.config.trajectories = 10_000;
    }
    let p = run_pipeline(project);
    let dt = t.elapsed();
    if let Some(f) = &p.report.failure {
        return outcome(false, format!("{}: {}", f.stage, f.message));
    }
    let mut pass = p.report.simulation.len() == 2 && within(dt, Duration::from_secs(600));
    let mut detail = Vec::new();
    for s in &p.report.simulation {
        let v = &s.violation;
        let lower = v.frequency - 3.0 * v.half_width;
        pass &= v.trials == 10_000 && lower <= s.analytic_violation;
        detail.push(format!(
            "{}: {} of {} violate, frequency - 3 half-widths {lower:.4} vs delta {:.4}",
            s.label, v.count, v.trials, s.analytic_violation
        ));
    }
    outcome(pass, format!("{} in {dt:?}", detail.join("; ")))
}

fn oracles() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for seed in [11u64, 12, 13] {
        let e = dynkin_switched(seed);
        pass &= e.mean.abs() <= 3.0 * e.std_err + 1e-3;
        detail.push(format!("Dynkin {seed}: {:.2e} (se {:.2e})", e.mean, e.std_err));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let sgd = random_gains(&mut rng, 2 + k % 9, 1.0);
        match check_small_gain(&sgd) {
            Ok(r) => {
                let d = dense_spectral_radius(&sgd);
                worst = worst.max((r.spectral_radius - d).abs() / d.max(1.0));
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    pass &= worst <= 1e-8;
    detail.push(format!("spectral radius gap {worst:.1e}"));
    let gap = sos_pointwise_gap(5, 200);
    pass &= gap <= 1e-9;
    detail.push(format!("zero-multiplier gap {gap:.1e}"));
    outcome(pass, detail.join("; "))
}

fn determinism() -> Outcome {
    let a = report_json(&run_pipeline(project("kuramoto3.json")).report);
    let b = report_json(&run_pipeline(project("kuramoto3.json")).report);
    match (a, b) {
        (Ok(a), Ok(b)) => outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b)),
        (a, b) => outcome(false, format!("{:?} {:?}", a.err(), b.err())),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("probability bounds", bounds),
        ("small-gain spectral radius", small_gain),
        ("composed network constants", composition),
        ("automaton decomposition", decomposition),
        ("supplied certificate verification", verification),
        ("desk-scale synthesis", synthesis),
        ("simulation soundness", simulation),
        ("oracle equivalences", oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {} ({name}): {} {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
