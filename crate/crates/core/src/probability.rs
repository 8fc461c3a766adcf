//! Finite- and infinite-horizon probability bounds and their combination
//! along accepting runs of the complement automaton.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dfa::{Dfa, Triple};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub kappa_hat: f64,
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `lambda >= psi / kappa_hat`.
    LevelDominates,
    /// `lambda < psi / kappa_hat`.
    DecayDominates,
    /// Both branches hold to rounding; the larger value is reported.
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub branch: Branch,
    pub level_branch: f64,
    pub decay_branch: f64,
}

fn check_common(gamma: f64, lambda: f64, psi: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    if !(lambda > gamma && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must exceed gamma (lambda = {lambda}, gamma = {gamma})"
        )));
    }
    if !(psi >= 0.0 && psi.is_finite()) {
        return Err(Error::InvalidInput(format!("psi must be finite and >= 0, got {psi}")));
    }
    Ok(())
}

/// Upper bound on the probability of reaching the unsafe set within the
/// horizon from the initial set.
pub fn reach_bound(input: &BoundInput) -> Result<BoundReport> {
    let BoundInput { gamma, lambda, psi, kappa_hat, horizon } = *input;
    check_common(gamma, lambda, psi)?;
    if !(kappa_hat > 0.0 && kappa_hat.is_finite()) {
        return Err(Error::InvalidInput(format!("kappa_hat must be > 0, got {kappa_hat}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
    }
    let level = 1.0 - (1.0 - gamma / lambda) * (-psi * horizon / lambda).exp();
    let e = (kappa_hat * horizon).exp();
    let decay = (kappa_hat * gamma + (e - 1.0) * psi) / (kappa_hat * lambda * e);
    let threshold = psi / kappa_hat;
    let rel = (lambda - threshold).abs() / lambda.max(threshold).max(f64::MIN_POSITIVE);
    let (branch, raw) = if rel <= 1e-12 {
        (Branch::Boundary, level.max(decay))
    } else if lambda >= threshold {
        (Branch::LevelDominates, level)
    } else {
        (Branch::DecayDominates, decay)
    };
    if !raw.is_finite() {
        return Err(Error::Numeric(format!("bound evaluated to {raw}")));
    }
    Ok(BoundReport {
        delta: raw.clamp(0.0, 1.0),
        branch,
        level_branch: level,
        decay_branch: decay,
    })
}

/// Infinite-horizon bound `gamma / lambda`, valid only without drift slack.
pub fn reach_bound_infinite(gamma: f64, lambda: f64, psi: f64) -> Result<f64> {
    check_common(gamma, lambda, psi)?;
    if psi != 0.0 {
        return Err(Error::InvalidInput(format!(
            "the infinite-horizon bound requires psi = 0, got {psi}"
        )));
    }
    Ok((gamma / lambda).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunBound {
    pub locations: Vec<String>,
    pub product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedBound {
    pub label: String,
    /// Upper bound on the probability that the specification is violated.
    pub violation_upper: f64,
    /// Lower bound on the satisfaction probability.
    pub satisfaction_lower: f64,
    /// True when some run has no reach-avoid element, so the bound is 1.
    pub trivial: bool,
    pub runs: Vec<RunBound>,
}

/// Sums, over the accepting runs starting with `label`, the product of the
/// element bounds along each run. A run that consists of a single edge has
/// an empty product, equal to one.
pub fn combine_runs(
    dfa: &Dfa,
    runs: &[(Vec<usize>, Vec<Triple>)],
    label: &str,
    bounds: &BTreeMap<Triple, f64>,
) -> Result<CombinedBound> {
    let mut total = 0.0;
    let mut trivial = false;
    let mut out_runs = Vec::new();
    for (locs, triples) in runs {
        let mut prod = 1.0;
        if triples.is_empty() {
            trivial = true;
        }
        for t in triples {
            let d = bounds.get(t).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "no bound for element ({}, {}, {})",
                    dfa.locations[t.0], dfa.locations[t.1], dfa.locations[t.2]
                ))
            })?;
            prod *= d;
        }
        total += prod;
        out_runs.push(RunBound {
            locations: locs.iter().map(|&q| dfa.locations[q].clone()).collect(),
            product: prod,
        });
    }
    let upper = total.clamp(0.0, 1.0);
    Ok(CombinedBound {
        label: label.to_string(),
        violation_upper: upper,
        satisfaction_lower: 1.0 - upper,
        trivial,
        runs: out_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_branches_closed_form() {
        let r = reach_bound(&BoundInput {
            gamma: 1.0,
            lambda: 10.0,
            psi: 0.5,
            kappa_hat: 1.0,
            horizon: 2.0,
        })
        .unwrap();
        assert_eq!(r.branch, Branch::LevelDominates);
        let expect = 1.0 - (1.0 - 0.1) * (-0.1f64).exp();
        assert!((r.delta - expect).abs() < 1e-15);

        let r = reach_bound(&BoundInput {
            gamma: 1.0,
            lambda: 10.0,
            psi: 20.0,
            kappa_hat: 1.0,
            horizon: 2.0,
        })
        .unwrap();
        assert_eq!(r.branch, Branch::DecayDominates);
        let e = 2f64.exp();
        let expect = (1.0 + (e - 1.0) * 20.0) / (10.0 * e);
        assert!((r.delta - expect.min(1.0)).abs() < 1e-15);
    }

    #[test]
    fn branches_agree_at_threshold() {
        let r = reach_bound(&BoundInput {
            gamma: 2.0,
            lambda: 50.0,
            psi: 5.0,
            kappa_hat: 0.1,
            horizon: 3.0,
        })
        .unwrap();
        assert_eq!(r.branch, Branch::Boundary);
        assert!((r.level_branch - r.decay_branch).abs() < 1e-12);
    }

    #[test]
    fn infinite_horizon_requires_zero_psi() {
        assert!(reach_bound_infinite(1.0, 4.0, 0.1).is_err());
        assert_eq!(reach_bound_infinite(1.0, 4.0, 0.0).unwrap(), 0.25);
        assert!(reach_bound_infinite(5.0, 4.0, 0.0).is_err());
    }
}
