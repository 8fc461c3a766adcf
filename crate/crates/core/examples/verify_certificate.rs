//! Checks the degree-6 reference certificates of both Kuramoto elements on a
//! 2001-point grid and prints the per-condition margins.

use shsbarrier::catalog::{
    kuramoto_reference_certificates, kuramoto_subsystem, kuramoto_tasks, KuramotoParams,
};
use shsbarrier::certificate::{verify_cpbf, VerifyConfig};
use shsbarrier::model::InputSet;

fn main() -> shsbarrier::Result<()> {
    let params = KuramotoParams::new(100, InputSet::Free { dim: 1 });
    let sub = kuramoto_subsystem(0, &params);
    let cfg = VerifyConfig { points_per_dim: 2001, ..VerifyConfig::default() };
    let certs = kuramoto_reference_certificates(&sub.id);
    for (k, (cert, task)) in certs.iter().zip(kuramoto_tasks().iter()).enumerate() {
        let rep = verify_cpbf(&sub, cert, task, &cfg)?;
        println!("element {}: {:?}", k + 1, rep.status);
        for c in &rep.conditions {
            println!(
                "  mode {} {:<16} {:?} worst margin {:.4e} at {:?}",
                c.mode + 1,
                c.condition.name(),
                c.status,
                c.worst_margin,
                c.worst_point
            );
        }
    }
    Ok(())
}
