//! Runs a project file end to end and prints the per-label bounds.
//! Usage: cargo run --release --example pipeline [project.json]

use std::path::PathBuf;

use shsbarrier::project::{report_json, run_pipeline, Project};

fn main() -> shsbarrier::Result<()> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("projects/kuramoto100_reference.json")
    });
    let p = run_pipeline(Project::load(&path)?);
    let r = &p.report;
    println!("stages: {}", r.stages.join(", "));
    if let Some(f) = &r.failure {
        println!("failed in {}: {}", f.stage, f.message);
    }
    for c in &r.composition {
        let nc = &c.certificate;
        println!(
            "partition {}: rho {:.6}, gamma {:.2} lambda {:.2} psi {:.2} kappa_hat {:.3e}",
            c.partition, c.spectral_radius, nc.gamma, nc.lambda, nc.psi, nc.kappa_hat
        );
    }
    for s in &r.satisfaction {
        println!("start {}: satisfaction >= {:.4}", s.label, s.satisfaction_lower);
    }
    for s in &r.simulation {
        println!(
            "start {}: simulated violation {:.4} +- {:.4}, bound {:.4}",
            s.label, s.violation.frequency, s.violation.half_width, s.analytic_violation
        );
    }
    if std::env::args().any(|a| a == "--json") {
        println!("{}", report_json(r)?);
    }
    Ok(())
}
