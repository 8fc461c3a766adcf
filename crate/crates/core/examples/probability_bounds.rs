//! Finite-horizon reach bounds for the composed Kuramoto constants, plus the
//! infinite-horizon bound and a sweep over the horizon.

use shsbarrier::probability::{reach_bound, reach_bound_infinite, BoundInput};

fn main() -> shsbarrier::Result<()> {
    let tuples = [(320.0, 430000.0, 5200.0), (34000.0, 450000.0, 6400.0), (34000.0, 450000.0, 6600.0)];
    for (gamma, lambda, psi) in tuples {
        let b = reach_bound(&BoundInput { gamma, lambda, psi, kappa_hat: 5e-7, horizon: 5.0 })?;
        println!(
            "gamma {gamma:>7} lambda {lambda:>7} psi {psi:>5}: delta {:.6} ({:?}), satisfaction >= {:.4}",
            b.delta,
            b.branch,
            1.0 - b.delta
        );
    }
    println!("infinite horizon, c = 0: {:.6}", reach_bound_infinite(320.0, 430000.0, 0.0)?);
    for t in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
        let b = reach_bound(&BoundInput {
            gamma: 320.0,
            lambda: 430000.0,
            psi: 5200.0,
            kappa_hat: 5e-7,
            horizon: t,
        })?;
        println!("T = {t:>4}: delta {:.6}", b.delta);
    }
    Ok(())
}
