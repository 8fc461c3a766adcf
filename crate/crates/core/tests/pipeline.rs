mod common;

use shsbarrier::model::Region;
use shsbarrier::project::{report_json, run_pipeline, CertificateSource, Pipeline, Stage};

use common::*;

fn assert_constants(c: &shsbarrier::compose::NetworkCertificate, expect: [f64; 4]) {
    let got = [c.gamma, c.lambda, c.psi, c.kappa_hat];
    for (g, e) in got.iter().zip(expect) {
        assert!((g - e).abs() <= 1e-9 * e, "{got:?} vs {expect:?}");
    }
}

fn satisfaction(p: &Pipeline, label: &str) -> f64 {
    p.report.satisfaction.iter().find(|b| b.label == label).unwrap().satisfaction_lower
}

#[test]
fn reference_network_reproduces_the_published_numbers() {
    let project = project("kuramoto100_reference.json");
    let supplied = match &project.certificates {
        CertificateSource::Supplied { bundle, .. } => bundle.clone().unwrap(),
        _ => unreachable!(),
    };
    let mut p = Pipeline::new(project);
    p.run(Stage::Bounds);
    assert!(p.report.failure.is_none(), "{:?}", p.report.failure);
    assert_eq!(p.report.composition.len(), 2);
    for c in &p.report.composition {
        assert!((c.spectral_radius - 0.99).abs() < 1e-6);
        assert!(c.mu.iter().all(|&m| m == 1.0));
    }
    assert_constants(&p.report.composition[0].certificate, [320.0, 430000.0, 5200.0, 5e-7]);
    // the published 6400 is not the worst-mode maximum of the supplied psi values
    assert_constants(&p.report.composition[1].certificate, [34000.0, 450000.0, 6600.0, 5e-7]);
    assert!((satisfaction(&p, "p1") - 0.9388).abs() < 1e-4);
    assert!((satisfaction(&p, "p4") - 0.8511).abs() < 1e-4);
    assert_eq!(p.bundle(), supplied, "supplied certificates must come back unchanged");
    assert_eq!(p.report.exit_code(), 0);
}

#[test]
fn empty_unsafe_sets_give_certain_satisfaction() {
    let mut project = project("kuramoto3.json");
    for e in project.labeling.entries.iter_mut() {
        if ["p0", "p2", "p3", "p5"].contains(&e.symbol.as_str()) {
            e.region = shsbarrier::dfa::LabelRegion::Uniform { region: Region::default() };
        }
    }
    project.simulation = None;
    let p = run_pipeline(project);
    assert!(p.report.failure.is_none(), "{:?}", p.report.failure);
    for c in &p.report.certificates {
        assert_eq!(c.source, "trivial");
    }
    assert_eq!(satisfaction(&p, "p1"), 1.0);
    assert_eq!(satisfaction(&p, "p4"), 1.0);
    assert_eq!(p.report.overall_satisfaction, Some(1.0));
}

#[test]
fn three_oscillator_pipeline_succeeds_and_repeats_exactly() {
    let a = run_pipeline(project("kuramoto3.json"));
    assert!(a.report.failure.is_none(), "{:?}", a.report.failure);
    assert_eq!(a.report.exit_code(), 0);
    assert_eq!(a.report.certificates.iter().filter(|c| c.source == "synthesized").count(), 2);
    for s in &a.report.simulation {
        assert!(s.consistent, "{s:?}");
    }
    let b = run_pipeline(project("kuramoto3.json"));
    assert_eq!(report_json(&a.report).unwrap(), report_json(&b.report).unwrap());
}

#[test]
fn stages_stop_where_asked() {
    let mut p = Pipeline::new(project("kuramoto3.json"));
    p.run(Stage::Decompose);
    assert_eq!(p.report.stages, vec!["validate", "decompose"]);
    let d = p.report.decomposition.as_ref().unwrap();
    assert_eq!(d.runs.len(), 3);
    assert_eq!(d.partitions.len(), 2);
    assert!(p.report.certificates.is_empty());
}
