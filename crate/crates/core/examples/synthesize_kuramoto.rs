//! Synthesizes a two-mode degree-6 certificate for one oscillator of a
//! ten-oscillator network and each of the two reach-avoid elements.

use shsbarrier::catalog::{kuramoto_subsystem, kuramoto_tasks, KuramotoParams};
use shsbarrier::model::{BoxRegion, InputSet};
use shsbarrier::synthesis::{synthesize_cpbf, SynthesisConfig};

fn main() -> shsbarrier::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let params = KuramotoParams::new(10, InputSet::Box { bounds: BoxRegion::new(&[(-1.0, 1.0)]) });
    let sub = kuramoto_subsystem(0, &params);
    let cfg = SynthesisConfig { lambda: 4300.0, seed, ..SynthesisConfig::default() };
    for (k, task) in kuramoto_tasks().iter().enumerate() {
        let t = std::time::Instant::now();
        let r = synthesize_cpbf(&sub, task, &cfg)?;
        eprintln!("element {} took {:?}", k + 1, t.elapsed());
        println!(
            "element {}: {} iterations, {} counterexamples, kappa_hat {:.3e}",
            k + 1,
            r.iterations,
            r.counterexamples,
            r.kappa_hat
        );
        for (p, m) in r.certificate.modes.iter().enumerate() {
            println!("  mode {}: gamma {:.4} lambda {} psi {:.4}", p + 1, m.gamma, m.lambda, m.psi);
            println!("    B = {}", m.barrier);
        }
    }
    Ok(())
}
