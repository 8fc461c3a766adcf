//! Infinitesimal generator of a subsystem mode and the assembled drift
//! condition of a pseudo-barrier certificate.

use crate::error::{Error, Result};
use crate::model::{encode_joint_mode, Network, Subsystem};
use crate::poly::{Polynomial, ScalarGainFunction};

/// The three parts of `L B` for one mode, each over the subsystem's full
/// variable list.
#[derive(Clone, Debug)]
pub struct GeneratorTerms {
    pub drift: Polynomial,
    pub diffusion: Polynomial,
    pub jump: Polynomial,
}

impl GeneratorTerms {
    pub fn total(&self) -> Polynomial {
        &(&self.drift + &self.diffusion) + &self.jump
    }
}

fn mode_checked(sub: &Subsystem, p: usize) -> Result<()> {
    if p >= sub.modes.len() {
        return Err(Error::InvalidInput(format!("{}: no mode {p}", sub.id)));
    }
    Ok(())
}

/// Applies the generator of mode `p` to a polynomial `b` over the state.
pub fn apply_generator(sub: &Subsystem, p: usize, b: &Polynomial) -> Result<GeneratorTerms> {
    mode_checked(sub, p)?;
    if b.variables() != sub.state_vars.as_slice() {
        return Err(Error::Poly(format!(
            "{}: barrier must be over the state variables {:?}",
            sub.id, sub.state_vars
        )));
    }
    let all = sub.all_vars();
    let mode = &sub.modes[p];
    let n = sub.n();
    let grad = b.gradient();

    let mut drift = Polynomial::zero(&all);
    for k in 0..n {
        if grad[k].is_zero() {
            continue;
        }
        drift = &drift + &(&grad[k].embed(&all)? * &mode.drift[k]);
    }

    let mut diffusion = Polynomial::zero(&sub.state_vars);
    if !mode.diffusion.is_empty() {
        for k in 0..n {
            for l in 0..n {
                let hess = grad[k].partial(l);
                if hess.is_zero() {
                    continue;
                }
                let mut a = Polynomial::zero(&sub.state_vars);
                for c in 0..mode.diffusion[k].len() {
                    a = &a + &(&mode.diffusion[k][c] * &mode.diffusion[l][c]);
                }
                diffusion = &diffusion + &(&a * &hess);
            }
        }
        diffusion = diffusion.scale(0.5);
    }

    let mut jump = Polynomial::zero(&sub.state_vars);
    for (j, &rate) in sub.poisson_rates.iter().enumerate() {
        if rate == 0.0 {
            continue;
        }
        let subs: Vec<Polynomial> = (0..n)
            .map(|k| &Polynomial::var(&sub.state_vars, k) + &mode.reset[k][j])
            .collect();
        let shifted = b.compose(&subs)?;
        jump = &jump + &(&shifted - b).scale(rate);
    }

    Ok(GeneratorTerms { drift, diffusion: diffusion.embed(&all)?, jump: jump.embed(&all)? })
}

/// `sum_{p'} lambda~_{pp'}(x) B_{p'}(x)` over the state variables.
pub fn mode_coupling(sub: &Subsystem, p: usize, barriers: &[Polynomial]) -> Result<Polynomial> {
    mode_checked(sub, p)?;
    if barriers.len() != sub.num_modes() {
        return Err(Error::InvalidInput(format!(
            "{}: {} barriers for {} modes",
            sub.id,
            barriers.len(),
            sub.num_modes()
        )));
    }
    let mut out = Polynomial::zero(&sub.state_vars);
    for (q, bq) in barriers.iter().enumerate() {
        out = &out + &(&sub.transition_rates[p][q] * bq);
    }
    Ok(out)
}

/// A term `sign * gain(arg(z))` that could not be expanded into a polynomial.
#[derive(Clone, Debug)]
pub struct Penalty {
    pub gain: ScalarGainFunction,
    pub arg: Polynomial,
    pub sign: f64,
}

impl Penalty {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.sign * self.gain.eval(self.arg.eval_unchecked(z))
    }
}

/// Left-hand side of the drift condition,
/// `L B_p + sum lambda~ B_p' + kappa(B_p) - rho_int(|w|^2) - psi`, which must
/// be non-positive. Non-polynomial gain terms are kept numerically.
#[derive(Clone, Debug)]
pub struct DriftExpression {
    pub poly: Polynomial,
    pub penalties: Vec<Penalty>,
}

impl DriftExpression {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut v = self.poly.eval_unchecked(z);
        for pen in &self.penalties {
            v += pen.eval(z);
        }
        v
    }

    pub fn variables(&self) -> &[String] {
        self.poly.variables()
    }

    /// Fixes variables to values in every part of the expression.
    pub fn fix_many(&self, assignments: &[(usize, f64)]) -> DriftExpression {
        DriftExpression {
            poly: self.poly.fix_many(assignments),
            penalties: self
                .penalties
                .iter()
                .map(|p| Penalty { gain: p.gain, arg: p.arg.fix_many(assignments), sign: p.sign })
                .collect(),
        }
    }

    /// Substitutes polynomials for the given variables (feedback laws).
    pub fn substitute(&self, subs: &[Polynomial]) -> Result<DriftExpression> {
        Ok(DriftExpression {
            poly: self.poly.compose(subs)?,
            penalties: self
                .penalties
                .iter()
                .map(|p| {
                    Ok(Penalty { gain: p.gain, arg: p.arg.compose(subs)?, sign: p.sign })
                })
                .collect::<Result<_>>()?,
        })
    }

    pub fn embed(&self, vars: &[String]) -> Result<DriftExpression> {
        Ok(DriftExpression {
            poly: self.poly.embed(vars)?,
            penalties: self
                .penalties
                .iter()
                .map(|p| Ok(Penalty { gain: p.gain, arg: p.arg.embed(vars)?, sign: p.sign }))
                .collect::<Result<_>>()?,
        })
    }
}

pub struct DriftParams<'a> {
    pub kappa: &'a ScalarGainFunction,
    pub rho_int: &'a ScalarGainFunction,
    pub psi: f64,
}

pub fn assemble_drift_condition(
    sub: &Subsystem,
    p: usize,
    barriers: &[Polynomial],
    params: &DriftParams<'_>,
) -> Result<DriftExpression> {
    let all = sub.all_vars();
    let lay = sub.layout();
    let gen = apply_generator(sub, p, &barriers[p])?.total();
    let coupling = mode_coupling(sub, p, barriers)?.embed(&all)?;
    let mut poly = &gen + &coupling;
    let mut penalties = Vec::new();

    let bp = barriers[p].embed(&all)?;
    match params.kappa.apply_polynomial(&bp) {
        Some(k) => poly = &poly + &k,
        None => penalties.push(Penalty { gain: *params.kappa, arg: bp, sign: 1.0 }),
    }

    let mut w2 = Polynomial::zero(&all);
    for k in lay.internal() {
        let wk = Polynomial::var(&all, k);
        w2 = &w2 + &(&wk * &wk);
    }
    if !params.rho_int.is_zero() {
        match params.rho_int.apply_polynomial(&w2) {
            Some(r) => poly = &poly - &r,
            None => penalties.push(Penalty { gain: *params.rho_int, arg: w2, sign: -1.0 }),
        }
    }
    poly = &poly - &Polynomial::constant(&all, params.psi);
    Ok(DriftExpression { poly, penalties })
}

/// Mode coupling of the weighted-sum barrier computed through the joint
/// mode-rate matrix, at joint mode `joint` and joint state `x`.
pub fn joint_mode_coupling(
    net: &Network,
    q: &[Vec<Polynomial>],
    barriers: &[Vec<Polynomial>],
    mu: &[f64],
    joint: &[usize],
    states: &[Vec<f64>],
) -> f64 {
    let sizes: Vec<usize> = net.subsystems.iter().map(|s| s.num_modes()).collect();
    let flat: Vec<f64> = states.iter().flatten().copied().collect();
    let a = encode_joint_mode(joint, &sizes);
    let mut s = 0.0;
    for (b, qab) in q[a].iter().enumerate() {
        let rate = qab.eval_unchecked(&flat);
        if rate == 0.0 {
            continue;
        }
        let pb = crate::model::decode_joint_mode(b, &sizes);
        let val: f64 = (0..net.len())
            .map(|i| mu[i] * barriers[i][pb[i]].eval_unchecked(&states[i]))
            .sum();
        s += rate * val;
    }
    s
}

/// The same quantity as [`joint_mode_coupling`] computed per subsystem, which
/// never touches the joint mode space.
pub fn compositional_mode_coupling(
    net: &Network,
    barriers: &[Vec<Polynomial>],
    mu: &[f64],
    joint: &[usize],
    states: &[Vec<f64>],
) -> f64 {
    let mut s = 0.0;
    for (i, sub) in net.subsystems.iter().enumerate() {
        let row = sub.rate_row(joint[i], &states[i]);
        let inner: f64 = row
            .iter()
            .zip(&barriers[i])
            .map(|(r, b)| r * b.eval_unchecked(&states[i]))
            .sum();
        s += mu[i] * inner;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use crate::poly::var_names;

    fn ou() -> Subsystem {
        // dx = (-a x + u) dt + s x dW + jumps of size c*x at rate l
        let sv = var_names(&["x"]);
        let all = var_names(&["x", "u"]);
        let drift = vec![Polynomial::affine(&all, 0.0, &[-2.0, 1.0])];
        let diffusion = vec![vec![Polynomial::affine(&sv, 0.0, &[0.5])]];
        let reset = vec![vec![Polynomial::affine(&sv, 0.0, &[0.3])]];
        Subsystem {
            id: "s".into(),
            state_vars: sv.clone(),
            input_vars: var_names(&["u"]),
            internal_vars: vec![],
            disturbance_vars: vec![],
            state_box: BoxRegion::new(&[(-1.0, 1.0)]),
            external_input: InputSet::Free { dim: 1 },
            internal_box: BoxRegion(vec![]),
            disturbance_box: BoxRegion(vec![]),
            disturbance_source: DisturbanceSource::Zero,
            modes: vec![Mode { drift, diffusion, reset, controller: None }],
            transition_rates: constant_rates(&sv, &[vec![0.0]]),
            poisson_rates: vec![1.5],
            outputs: Default::default(),
            initial: Region::default(),
            unsafe_region: Region::default(),
        }
    }

    #[test]
    fn generator_of_square_closed_form() {
        // B = x^2: LB = 2x(-2x+u) + 0.25x^2 + 1.5((1.3x)^2 - x^2)
        let s = ou();
        let b = Polynomial::univariate("x", &[0.0, 0.0, 1.0]);
        let g = apply_generator(&s, 0, &b).unwrap().total();
        for &(x, u) in &[(0.3, 0.1), (-0.7, 2.0), (1.0, -1.0)] {
            let expect = 2.0 * x * (-2.0 * x + u) + 0.25 * x * x + 1.5 * (1.69 - 1.0) * x * x;
            assert!((g.eval(&[x, u]).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_condition_contains_all_terms() {
        let s = ou();
        let b = Polynomial::univariate("x", &[1.0, 0.0, 1.0]);
        let kappa = ScalarGainFunction::Power { a: 0.2, b: 0.5 };
        let rho = ScalarGainFunction::Zero;
        let e = assemble_drift_condition(
            &s,
            0,
            std::slice::from_ref(&b),
            &DriftParams { kappa: &kappa, rho_int: &rho, psi: 0.7 },
        )
        .unwrap();
        assert_eq!(e.penalties.len(), 1);
        let (x, u) = (0.4, -0.2);
        let lb = 2.0 * x * (-2.0 * x + u) + 0.25 * x * x + 1.5 * 0.69 * x * x;
        let expect = lb + 0.2 * (1.0 + x * x as f64).sqrt() - 0.7;
        assert!((e.eval(&[x, u]) - expect).abs() < 1e-12);
    }
}
