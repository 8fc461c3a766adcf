//! Synthesizes certificates for a ten-oscillator network and simulates the
//! resulting closed loop from both start bands.

use std::path::PathBuf;

use shsbarrier::project::{Pipeline, Project, Stage};

fn main() -> shsbarrier::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("projects/kuramoto10_desk.json");
    let mut project = Project::load(&path)?;
    if let Some(sim) = &mut project.simulation {
        sim.config.trajectories = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    }
    let mut p = Pipeline::new(project);
    p.run(Stage::Simulate);
    if let Some(f) = &p.report.failure {
        println!("failed in {}: {}", f.stage, f.message);
        return Ok(());
    }
    for s in &p.report.simulation {
        println!(
            "start {}: {} of {} trajectories violate (Wilson interval [{:.4}, {:.4}]), bound {:.4}, consistent {}",
            s.label, s.violation.count, s.violation.trials, s.violation.lo, s.violation.hi, s.analytic_violation, s.consistent
        );
        for (i, occ) in s.mode_occupancy.iter().enumerate().take(3) {
            println!("  osc{i} mode occupancy {:.3} / {:.3}", occ[0], occ[1]);
        }
    }
    Ok(())
}
