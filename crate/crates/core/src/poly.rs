//! Sparse multivariate polynomials over named variables, and the scalar gain
//! functions used by the certificate conditions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A polynomial stored as a map from exponent vectors to coefficients. Terms
/// with a zero coefficient are never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyRepr", into = "PolyRepr")]
pub struct Polynomial {
    vars: Vec<String>,
    terms: BTreeMap<Vec<u32>, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PolyRepr {
    variables: Vec<String>,
    terms: Vec<TermRepr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TermRepr {
    coeff: f64,
    exps: Vec<u32>,
}

impl TryFrom<PolyRepr> for Polynomial {
    type Error = Error;

    fn try_from(r: PolyRepr) -> Result<Self> {
        let mut p = Polynomial::zero(&r.variables);
        for t in r.terms {
            if t.exps.len() != r.variables.len() {
                return Err(Error::Poly(format!(
                    "term has {} exponents but {} variables are declared",
                    t.exps.len(),
                    r.variables.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::Poly("non-finite coefficient".into()));
            }
            p.add_term(t.exps, t.coeff);
        }
        Ok(p)
    }
}

impl From<Polynomial> for PolyRepr {
    fn from(p: Polynomial) -> Self {
        PolyRepr {
            terms: p
                .terms
                .into_iter()
                .map(|(exps, coeff)| TermRepr { coeff, exps })
                .collect(),
            variables: p.vars,
        }
    }
}

pub fn var_names<S: AsRef<str>>(names: &[S]) -> Vec<String> {
    names.iter().map(|s| s.as_ref().to_string()).collect()
}

/// `x^e` by repeated squaring; avoids the libm call inside hot loops.
#[inline]
fn ipow(mut x: f64, mut e: u32) -> f64 {
    let mut r = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            r *= x;
        }
        x *= x;
        e >>= 1;
    }
    r
}

impl Polynomial {
    pub fn zero<S: AsRef<str>>(vars: &[S]) -> Self {
        Polynomial { vars: var_names(vars), terms: BTreeMap::new() }
    }

    pub fn constant<S: AsRef<str>>(vars: &[S], c: f64) -> Self {
        let mut p = Self::zero(vars);
        p.add_term(vec![0; p.vars.len()], c);
        p
    }

    /// The polynomial `x_k` for the variable at index `k`.
    pub fn var<S: AsRef<str>>(vars: &[S], k: usize) -> Self {
        let mut p = Self::zero(vars);
        assert!(k < p.vars.len(), "variable index {k} out of range");
        let mut e = vec![0; p.vars.len()];
        e[k] = 1;
        p.add_term(e, 1.0);
        p
    }

    pub fn var_named<S: AsRef<str>>(vars: &[S], name: &str) -> Result<Self> {
        let k = vars
            .iter()
            .position(|v| v.as_ref() == name)
            .ok_or_else(|| Error::Poly(format!("unknown variable `{name}`")))?;
        Ok(Self::var(vars, k))
    }

    pub fn monomial<S: AsRef<str>>(vars: &[S], exps: Vec<u32>, coeff: f64) -> Self {
        let mut p = Self::zero(vars);
        assert_eq!(exps.len(), p.vars.len(), "exponent vector length");
        p.add_term(exps, coeff);
        p
    }

    /// Univariate polynomial from coefficients in ascending degree order.
    pub fn univariate(var: &str, coeffs: &[f64]) -> Self {
        let mut p = Self::zero(&[var]);
        for (d, &c) in coeffs.iter().enumerate() {
            p.add_term(vec![d as u32], c);
        }
        p
    }

    /// Affine polynomial `c0 + sum_k a_k x_k`.
    pub fn affine<S: AsRef<str>>(vars: &[S], c0: f64, a: &[f64]) -> Self {
        let mut p = Self::constant(vars, c0);
        assert_eq!(a.len(), p.vars.len());
        for (k, &ak) in a.iter().enumerate() {
            let mut e = vec![0; a.len()];
            e[k] = 1;
            p.add_term(e, ak);
        }
        p
    }

    pub fn add_term(&mut self, exps: Vec<u32>, coeff: f64) {
        debug_assert_eq!(exps.len(), self.vars.len());
        if coeff == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + coeff;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, exps: &[u32]) -> f64 {
        self.terms.get(exps).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    pub fn degree_in(&self, k: usize) -> u32 {
        self.terms.keys().map(|e| e[k]).max().unwrap_or(0)
    }

    pub fn depends_on(&self, k: usize) -> bool {
        self.terms.keys().any(|e| e[k] > 0)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Evaluates at a point; terms are accumulated in lexicographic order of
    /// their exponent vectors so results are reproducible bit for bit.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.vars.len() {
            return Err(Error::Poly(format!(
                "evaluation point has {} entries, polynomial has {} variables",
                x.len(),
                self.vars.len()
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (e, &c) in &self.terms {
            let mut m = c;
            for (xi, &ei) in x.iter().zip(e) {
                if ei > 0 {
                    m *= ipow(*xi, ei);
                }
            }
            s += m;
        }
        s
    }

    /// Sum of absolute term values at `x`, a scale for rounding error.
    pub fn eval_abs(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (e, &c) in &self.terms {
            let mut m = c.abs();
            for (xi, &ei) in x.iter().zip(e) {
                if ei > 0 {
                    m *= ipow(xi.abs(), ei);
                }
            }
            s += m;
        }
        s
    }

    /// Natural interval enclosure over the box `[lo, hi]`, widened slightly
    /// to absorb floating-point rounding.
    pub fn eval_interval(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        let (mut a, mut b, mut mag) = (0.0, 0.0, 0.0);
        for (e, &c) in &self.terms {
            let (mut pl, mut ph) = (1.0f64, 1.0f64);
            for k in 0..e.len() {
                if e[k] == 0 {
                    continue;
                }
                let (il, ih) = interval_pow(lo[k], hi[k], e[k]);
                let cands = [pl * il, pl * ih, ph * il, ph * ih];
                pl = cands.iter().copied().fold(f64::INFINITY, f64::min);
                ph = cands.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            let (tl, th) = ((c * pl).min(c * ph), (c * pl).max(c * ph));
            a += tl;
            b += th;
            mag += tl.abs().max(th.abs());
        }
        let slack = 1e-13 * mag;
        (a - slack, b + slack)
    }

    pub fn partial(&self, k: usize) -> Polynomial {
        let mut out = Polynomial { vars: self.vars.clone(), terms: BTreeMap::new() };
        for (e, &c) in &self.terms {
            if e[k] > 0 {
                let mut e2 = e.clone();
                e2[k] -= 1;
                out.add_term(e2, c * e[k] as f64);
            }
        }
        out
    }

    pub fn partial_named(&self, name: &str) -> Result<Polynomial> {
        let k = self
            .var_index(name)
            .ok_or_else(|| Error::Poly(format!("unknown variable `{name}`")))?;
        Ok(self.partial(k))
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.vars.len()).map(|k| self.partial(k)).collect()
    }

    pub fn scale(&self, a: f64) -> Polynomial {
        let mut out = Polynomial { vars: self.vars.clone(), terms: BTreeMap::new() };
        if a != 0.0 {
            for (e, &c) in &self.terms {
                out.add_term(e.clone(), c * a);
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Polynomial {
        let mut out = Polynomial::constant(&self.vars, 1.0);
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                out = &out * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        out
    }

    fn check_same_vars(&self, other: &Polynomial) -> Result<()> {
        if self.vars != other.vars {
            return Err(Error::Poly(format!(
                "variable lists differ: {:?} vs {:?}",
                self.vars, other.vars
            )));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same_vars(other)?;
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same_vars(other)?;
        let mut out = Polynomial { vars: self.vars.clone(), terms: BTreeMap::new() };
        for (e1, &c1) in &self.terms {
            for (e2, &c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        Ok(out)
    }

    /// Substitutes `subs[k]` for variable `k`. All substitutions must share one
    /// variable list, which becomes the variable list of the result.
    pub fn compose(&self, subs: &[Polynomial]) -> Result<Polynomial> {
        if subs.len() != self.vars.len() {
            return Err(Error::Poly(format!(
                "{} substitutions for {} variables",
                subs.len(),
                self.vars.len()
            )));
        }
        let target: Vec<String> = match subs.first() {
            Some(s) => s.vars.clone(),
            None => Vec::new(),
        };
        for s in subs {
            if s.vars != target {
                return Err(Error::Poly("substitutions use different variable lists".into()));
            }
        }
        let mut cache: HashMap<(usize, u32), Polynomial> = HashMap::new();
        let mut out = Polynomial::zero(&target);
        for (e, &c) in &self.terms {
            let mut m = Polynomial::constant(&target, c);
            for (k, &ek) in e.iter().enumerate() {
                if ek == 0 {
                    continue;
                }
                let pk = cache.entry((k, ek)).or_insert_with(|| subs[k].pow(ek)).clone();
                m = &m * &pk;
            }
            out = &out + &m;
        }
        Ok(out)
    }

    /// Substitution by name. Variables without an entry are mapped to the
    /// variable of the same name in `target` (identity substitution).
    pub fn compose_named(
        &self,
        target: &[String],
        subs: &BTreeMap<String, Polynomial>,
    ) -> Result<Polynomial> {
        let mut list = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            match subs.get(v) {
                Some(s) => list.push(s.embed(target)?),
                None => list.push(Polynomial::var_named(target, v).map_err(|_| {
                    Error::Poly(format!("variable `{v}` has no substitution"))
                })?),
            }
        }
        if list.is_empty() {
            return Ok(Polynomial::constant(target, self.coefficient(&[])));
        }
        self.compose(&list)
    }

    /// Shift-and-scale change of variables `x_k -> offset_k + scale_k * x_k`.
    pub fn compose_shift(&self, offset: &[f64], scale: &[f64]) -> Result<Polynomial> {
        let n = self.vars.len();
        if offset.len() != n || scale.len() != n {
            return Err(Error::Poly("shift/scale length mismatch".into()));
        }
        let subs: Vec<Polynomial> = (0..n)
            .map(|k| {
                let mut a = vec![0.0; n];
                a[k] = scale[k];
                Polynomial::affine(&self.vars, offset[k], &a)
            })
            .collect();
        if n == 0 {
            return Ok(self.clone());
        }
        self.compose(&subs)
    }

    /// Fixes variable `k` to a value; the variable stays in the list with
    /// exponent zero everywhere.
    pub fn fix(&self, k: usize, value: f64) -> Polynomial {
        let mut out = Polynomial { vars: self.vars.clone(), terms: BTreeMap::new() };
        for (e, &c) in &self.terms {
            let mut e2 = e.clone();
            let p = e2[k];
            e2[k] = 0;
            out.add_term(e2, c * value.powi(p as i32));
        }
        out
    }

    pub fn fix_many(&self, assignments: &[(usize, f64)]) -> Polynomial {
        let mut out = self.clone();
        for &(k, v) in assignments {
            out = out.fix(k, v);
        }
        out
    }

    /// Re-expresses the polynomial over `new_vars`, matching by name. Every
    /// variable that actually occurs must exist in `new_vars`.
    pub fn embed<S: AsRef<str>>(&self, new_vars: &[S]) -> Result<Polynomial> {
        let new_vars = var_names(new_vars);
        let mut map = Vec::with_capacity(self.vars.len());
        for (k, v) in self.vars.iter().enumerate() {
            let idx = new_vars.iter().position(|w| w == v);
            if idx.is_none() && self.depends_on(k) {
                return Err(Error::Poly(format!("variable `{v}` missing from target list")));
            }
            map.push(idx);
        }
        let mut out = Polynomial::zero(&new_vars);
        for (e, &c) in &self.terms {
            let mut e2 = vec![0; new_vars.len()];
            for (k, &ek) in e.iter().enumerate() {
                if ek > 0 {
                    e2[map[k].unwrap()] = ek;
                }
            }
            out.add_term(e2, c);
        }
        Ok(out)
    }

    /// Renames variables positionally.
    pub fn with_variables<S: AsRef<str>>(&self, names: &[S]) -> Result<Polynomial> {
        if names.len() != self.vars.len() {
            return Err(Error::Poly("rename length mismatch".into()));
        }
        Ok(Polynomial { vars: var_names(names), terms: self.terms.clone() })
    }

    pub fn map_coeffs(&self, f: impl Fn(f64) -> f64) -> Polynomial {
        let mut out = Polynomial { vars: self.vars.clone(), terms: BTreeMap::new() };
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), f(c));
        }
        out
    }

    /// Sum of squares of the given polynomials.
    pub fn sum_of_squares(items: &[Polynomial], vars: &[String]) -> Result<Polynomial> {
        let mut out = Polynomial::zero(vars);
        for p in items {
            out = out.try_add(&p.try_mul(p)?)?;
        }
        Ok(out)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, &c) in self.terms.iter().rev() {
            if !first {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            first = false;
            let mut mono = String::new();
            for (v, &ek) in self.vars.iter().zip(e) {
                match ek {
                    0 => {}
                    1 => mono.push_str(&format!("*{v}")),
                    _ => mono.push_str(&format!("*{v}^{ek}")),
                }
            }
            write!(f, "{}{}", c.abs(), mono)?;
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial addition")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(&rhs.scale(-1.0)).expect("polynomial subtraction")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial multiplication")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

fn interval_pow(lo: f64, hi: f64, e: u32) -> (f64, f64) {
    let (pl, ph) = (lo.powi(e as i32), hi.powi(e as i32));
    if e % 2 == 1 || lo >= 0.0 {
        (pl, ph)
    } else if hi <= 0.0 {
        (ph, pl)
    } else {
        (0.0, pl.max(ph))
    }
}

/// Lexicographically ordered monomial basis of total degree at most `degree`.
pub fn monomial_basis(nvars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(k: usize, n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if k == n {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(k + 1, n, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, nvars, degree, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Scalar comparison functions of class K-infinity (or identically zero).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarGainFunction {
    Zero,
    Linear { a: f64 },
    /// `a * s^b`.
    Power { a: f64, b: f64 },
}

impl ScalarGainFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarGainFunction::Zero => Ok(()),
            ScalarGainFunction::Linear { a } if a > 0.0 && a.is_finite() => Ok(()),
            ScalarGainFunction::Power { a, b }
                if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::InvalidInput(format!("not a class-K function: {other:?}"))),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            ScalarGainFunction::Zero => 0.0,
            ScalarGainFunction::Linear { a } => a * s,
            ScalarGainFunction::Power { a, b } => a * s.powf(b),
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        let y = y.max(0.0);
        match *self {
            ScalarGainFunction::Zero => Err(Error::Numeric("zero gain has no inverse".into())),
            ScalarGainFunction::Linear { a } => Ok(y / a),
            ScalarGainFunction::Power { a, b } => Ok((y / a).powf(1.0 / b)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarGainFunction::Zero)
    }

    /// Exponent of the leading power of `s` (1 for linear, 0 never used).
    fn as_power(&self) -> Option<(f64, f64)> {
        match *self {
            ScalarGainFunction::Zero => None,
            ScalarGainFunction::Linear { a } => Some((a, 1.0)),
            ScalarGainFunction::Power { a, b } => Some((a, b)),
        }
    }

    /// `self(arg)` as a polynomial when the gain is polynomial (integer power).
    pub fn apply_polynomial(&self, arg: &Polynomial) -> Option<Polynomial> {
        match *self {
            ScalarGainFunction::Zero => Some(Polynomial::zero(arg.variables())),
            ScalarGainFunction::Linear { a } => Some(arg.scale(a)),
            ScalarGainFunction::Power { a, b } => {
                if b >= 1.0 && b.fract() == 0.0 && b <= 16.0 {
                    Some(arg.pow(b as u32).scale(a))
                } else {
                    None
                }
            }
        }
    }

    /// Largest `c` with `self(s) >= c * s` on `[0, s_max]`.
    pub fn linear_lower_bound(&self, s_max: f64) -> f64 {
        match self.as_power() {
            None => 0.0,
            Some((a, b)) if b == 1.0 => a,
            Some((a, b)) if b < 1.0 => a * s_max.powf(b - 1.0),
            Some(_) => 0.0,
        }
    }

    /// Smallest `c` with `self(s) <= c * s` on `[0, s_max]`, or `None` when the
    /// ratio is unbounded near zero.
    pub fn linear_upper_bound(&self, s_max: f64) -> Option<f64> {
        match self.as_power() {
            None => Some(0.0),
            Some((a, b)) if b == 1.0 => Some(a),
            Some((a, b)) if b > 1.0 => Some(a * s_max.powf(b - 1.0)),
            Some(_) => None,
        }
    }

    /// `self(c * inner^{-1}(s))` for power-type gains, in closed form.
    pub fn compose_with_inverse(&self, c: f64, inner: &ScalarGainFunction) -> Result<Self> {
        let Some((ao, bo)) = self.as_power() else {
            return Ok(ScalarGainFunction::Zero);
        };
        let (ai, bi) = inner
            .as_power()
            .ok_or_else(|| Error::GainExtraction("inner gain is identically zero".into()))?;
        let a = ao * c.powf(bo) * ai.powf(-bo / bi);
        let b = bo / bi;
        if (b - 1.0).abs() < 1e-12 {
            Ok(ScalarGainFunction::Linear { a })
        } else {
            Ok(ScalarGainFunction::Power { a, b })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1() -> Polynomial {
        // 3 x^2 y - 2 y + 5
        let v = ["x", "y"];
        let mut p = Polynomial::zero(&v);
        p.add_term(vec![2, 1], 3.0);
        p.add_term(vec![0, 1], -2.0);
        p.add_term(vec![0, 0], 5.0);
        p
    }

    #[test]
    fn eval_and_partials() {
        let p = p1();
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 3.0 * 4.0 * 3.0 - 6.0 + 5.0);
        let dx = p.partial(0);
        assert_eq!(dx.eval(&[2.0, 3.0]).unwrap(), 6.0 * 2.0 * 3.0);
        let dy = p.partial_named("y").unwrap();
        assert_eq!(dy.eval(&[2.0, 3.0]).unwrap(), 3.0 * 4.0 - 2.0);
        assert!(p.eval(&[1.0]).is_err());
    }

    #[test]
    fn compose_shift_matches_direct_eval() {
        let p = p1();
        let q = p.compose_shift(&[1.0, -2.0], &[0.5, 3.0]).unwrap();
        let z = [0.7, -0.3];
        let x = [1.0 + 0.5 * z[0], -2.0 + 3.0 * z[1]];
        assert!((q.eval(&z).unwrap() - p.eval(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn compose_named_identity_default() {
        let p = p1();
        let target = var_names(&["x", "y", "w"]);
        let mut subs = BTreeMap::new();
        subs.insert("y".to_string(), Polynomial::affine(&target, 1.0, &[0.0, 0.0, 2.0]));
        let q = p.compose_named(&target, &subs).unwrap();
        let v = q.eval(&[2.0, 100.0, 0.5]).unwrap();
        assert!((v - p.eval(&[2.0, 2.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let p = p1();
        let s = serde_json::to_string(&p).unwrap();
        let q: Polynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = r#"{"variables":["x"],"terms":[{"coeff":1.0,"exps":[1,2]}]}"#;
        assert!(serde_json::from_str::<Polynomial>(bad).is_err());
    }

    #[test]
    fn embed_and_fix() {
        let p = p1();
        let q = p.embed(&["w", "y", "x"]).unwrap();
        assert_eq!(q.eval(&[9.0, 3.0, 2.0]).unwrap(), p.eval(&[2.0, 3.0]).unwrap());
        let f = p.fix(0, 2.0);
        assert!(!f.depends_on(0));
        assert_eq!(f.eval(&[123.0, 3.0]).unwrap(), p.eval(&[2.0, 3.0]).unwrap());
        assert!(p.embed(&["x"]).is_err());
    }

    #[test]
    fn basis_size() {
        assert_eq!(monomial_basis(1, 6).len(), 7);
        assert_eq!(monomial_basis(2, 2).len(), 6);
        assert_eq!(monomial_basis(3, 2).len(), 10);
    }

    #[test]
    fn gain_functions() {
        let a = ScalarGainFunction::Power { a: 0.8, b: 0.5 };
        assert!((a.eval(4.0) - 1.6).abs() < 1e-15);
        assert!((a.inverse(1.6).unwrap() - 4.0).abs() < 1e-12);
        let r = ScalarGainFunction::Power { a: 4e-7, b: 0.5 };
        let g = r.compose_with_inverse(99.0, &a).unwrap();
        match g {
            ScalarGainFunction::Linear { a } => {
                assert!((a - 4e-7 * 99f64.sqrt() / 0.8).abs() < 1e-18)
            }
            other => panic!("expected linear, got {other:?}"),
        }
        assert_eq!(ScalarGainFunction::Linear { a: 2.0 }.linear_lower_bound(10.0), 2.0);
        assert!(r.linear_upper_bound(1.0).is_none());
        let k = ScalarGainFunction::Power { a: 2.0, b: 2.0 };
        let x = Polynomial::var(&["x"], 0);
        let kp = k.apply_polynomial(&x).unwrap();
        assert_eq!(kp.eval(&[3.0]).unwrap(), 18.0);
        assert!(a.apply_polynomial(&x).is_none());
    }
}
