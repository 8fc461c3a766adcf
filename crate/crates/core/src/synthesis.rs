//! Counterexample-guided synthesis of pseudo-barrier certificates: a linear
//! program over template coefficients proposes candidates, a sampled
//! falsifier and the grid verifier refute them.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::certificate::{
    default_input_candidates, falsify, uncertainty_instances, verify_cpbf,
    ConditionKind, ControlLaw, FalsifyEffort, ModeCertificate, PseudoCertificate, Status,
    TaskRegions, VerificationReport, VerifyConfig,
};
use crate::error::{Error, Result};
use crate::generator::{apply_generator, mode_coupling, DriftExpression};
use crate::model::{BoxRegion, Subsystem};
use crate::probability::{reach_bound, BoundInput};
use crate::poly::{monomial_basis, Polynomial, ScalarGainFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerTemplate {
    /// Finite candidate inputs, chosen pointwise; defaults to the declared
    /// input set (box vertices and centre for a box).
    Selection {
        #[serde(default)]
        inputs: Option<Vec<Vec<f64>>>,
    },
    /// Supplied feedback law per mode; only the barrier is synthesized.
    Fixed { laws: Vec<Vec<Polynomial>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Template {
    pub degree: u32,
    /// Explicit exponent vectors; overrides `degree` when present.
    pub basis: Option<Vec<Vec<u32>>>,
    pub alpha: ScalarGainFunction,
    /// Exponent `b` of the internal-input gain `r s^b`; `r` is an unknown.
    pub rho_exponent: f64,
    pub rho_max: f64,
    pub controller: ControllerTemplate,
}

impl Default for Template {
    fn default() -> Self {
        Template {
            degree: 6,
            basis: None,
            alpha: ScalarGainFunction::Power { a: 0.4, b: 0.5 },
            rho_exponent: 0.5,
            rho_max: 1e6,
            controller: ControllerTemplate::Selection { inputs: None },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub template: Template,
    /// `lambda_p`, fixed for every mode; it sets the scale of the barrier.
    pub lambda: f64,
    pub horizon: f64,
    pub kappa_range: [f64; 2],
    pub bisection_steps: usize,
    /// Fractions of the largest feasible `kappa_hat` that are tried; the one
    /// with the smallest reach bound wins.
    pub kappa_backoffs: Vec<f64>,
    pub budget: usize,
    pub seed: u64,
    /// Initial sample grid on the state set, per dimension.
    pub seed_points: usize,
    /// Initial sample grid on each initial and unsafe box, per dimension.
    pub region_points: usize,
    /// Constraint margins relative to `lambda`.
    pub margin: f64,
    pub drift_margin: f64,
    /// Upper cap on the barrier at state samples, relative to `lambda`.
    pub barrier_cap: f64,
    /// Rounds of input reassignment after each candidate.
    pub assign_rounds: usize,
    pub verify: VerifyConfig,
    pub effort: FalsifyEffort,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            template: Template::default(),
            lambda: 1000.0,
            horizon: 5.0,
            kappa_range: [1e-8, 1.0],
            bisection_steps: 20,
            kappa_backoffs: vec![0.5, 0.1, 1e-2, 1e-4],
            budget: 50,
            seed: 0,
            seed_points: 33,
            region_points: 9,
            margin: 1e-3,
            drift_margin: 1e-4,
            barrier_cap: 20.0,
            assign_rounds: 8,
            verify: VerifyConfig::default(),
            effort: FalsifyEffort::default(),
        }
    }
}

/// A stored sample point and the constraint it contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexamplePoint {
    pub condition: ConditionKind,
    pub mode: usize,
    pub x: Vec<f64>,
    /// Candidate input index for drift points.
    pub input: Option<usize>,
    /// Uncertainty instance indices for drift points.
    pub instances: Vec<usize>,
    /// True for points found by the falsifier or verifier, as opposed to the
    /// initial sample grid.
    pub refuted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSet {
    pub points: Vec<CounterexamplePoint>,
}

impl CounterexampleSet {
    pub fn refuted(&self) -> usize {
        self.points.iter().filter(|p| p.refuted).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub certificate: PseudoCertificate,
    pub kappa_hat: f64,
    pub iterations: usize,
    pub counterexamples: usize,
    pub report: VerificationReport,
}

/// LP data for one subsystem and task, independent of the candidate.
struct CandidateProgram {
    sub: Subsystem,
    task: TaskRegions,
    basis: Vec<Polynomial>,
    inputs: Vec<Vec<f64>>,
    laws: Option<Vec<Vec<Polynomial>>>,
    /// `drift[p][p2][k]`: contribution of coefficient `k` of mode `p2` to the
    /// drift left-hand side of mode `p`, over all variables.
    drift: Vec<Vec<Vec<Polynomial>>>,
    instances: Vec<Vec<Vec<(usize, f64)>>>,
    cfg: SynthesisConfig,
}

#[derive(Clone, Debug)]
struct Candidate {
    theta: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    psi: Vec<f64>,
    rho: Vec<f64>,
    kappa: f64,
    objective: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum Margin {
    Level,
    Drift,
    None,
}

struct Row {
    coeffs: Vec<(usize, f64)>,
    /// Coefficients multiplied by `kappa_hat`.
    kappa: Vec<(usize, f64)>,
    op: ComparisonOp,
    rhs: f64,
    margin: Margin,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn scaled_basis(sub: &Subsystem, exps: &[Vec<u32>]) -> Result<Vec<Polynomial>> {
    let c = sub.state_box.center();
    let h: Vec<f64> = sub.state_box.half_widths().iter().map(|w| if *w > 0.0 { *w } else { 1.0 }).collect();
    let offset: Vec<f64> = c.iter().zip(&h).map(|(c, h)| -c / h).collect();
    let scale: Vec<f64> = h.iter().map(|h| 1.0 / h).collect();
    exps.iter()
        .map(|e| Polynomial::monomial(&sub.state_vars, e.clone(), 1.0).compose_shift(&offset, &scale))
        .collect()
}

impl CandidateProgram {
    fn new(sub: &Subsystem, task: &TaskRegions, cfg: &SynthesisConfig) -> Result<CandidateProgram> {
        let n = sub.n();
        let exps = match &cfg.template.basis {
            Some(b) => b.clone(),
            None => monomial_basis(n, cfg.template.degree),
        };
        if exps.is_empty() || exps.iter().any(|e| e.len() != n) {
            return Err(Error::Template("basis exponents must match the state dimension".into()));
        }
        let mut sorted = exps.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != exps.len() {
            return Err(Error::Template("basis monomials must be distinct".into()));
        }
        cfg.template.alpha.validate()?;
        if cfg.template.alpha.is_zero() {
            return Err(Error::Template("alpha must be of class K".into()));
        }
        let basis = scaled_basis(sub, &exps)?;
        let lay = sub.layout();
        let (inputs, laws) = match &cfg.template.controller {
            ControllerTemplate::Selection { inputs } => {
                let c = match inputs {
                    Some(i) => i.clone(),
                    None => default_input_candidates(&sub.external_input)?,
                };
                if c.is_empty() || c.iter().any(|u| u.len() != lay.m || !sub.external_input.contains(u)) {
                    return Err(Error::Template("candidate inputs must lie in the input set".into()));
                }
                (c, None)
            }
            ControllerTemplate::Fixed { laws } => {
                if laws.len() != sub.num_modes() || laws.iter().any(|l| l.len() != lay.m) {
                    return Err(Error::Template("one law per input and mode is required".into()));
                }
                let laws: Vec<Vec<Polynomial>> = laws
                    .iter()
                    .map(|l| l.iter().map(|q| q.with_variables(&sub.state_vars)).collect())
                    .collect::<Result<_>>()?;
                (vec![vec![0.0; lay.m]], Some(laws))
            }
        };
        let all = sub.all_vars();
        let pm = sub.num_modes();
        let zero = Polynomial::zero(&sub.state_vars);
        let mut drift = Vec::with_capacity(pm);
        for p in 0..pm {
            let mut per = Vec::with_capacity(pm);
            for p2 in 0..pm {
                let mut ks = Vec::with_capacity(basis.len());
                for m in &basis {
                    let mut bars = vec![zero.clone(); pm];
                    bars[p2] = m.clone();
                    let mut poly = mode_coupling(sub, p, &bars)?.embed(&all)?;
                    if p2 == p {
                        poly = &poly + &apply_generator(sub, p, m)?.total();
                    }
                    ks.push(poly);
                }
                per.push(ks);
            }
            drift.push(per);
        }
        let mut instances = Vec::with_capacity(pm);
        for p in 0..pm {
            let mut probe = Polynomial::zero(&all);
            for per in &drift[p] {
                for (k, q) in per.iter().enumerate() {
                    probe = &probe + &q.scale(1.0 + k as f64 * 0.618);
                }
            }
            let e = DriftExpression { poly: probe, penalties: vec![] };
            instances.push(uncertainty_instances(sub, &e, &cfg.verify)?);
        }
        Ok(CandidateProgram {
            sub: sub.clone(),
            task: task.clone(),
            basis,
            inputs,
            laws,
            drift,
            instances,
            cfg: cfg.clone(),
        })
    }

    fn nb(&self) -> usize {
        self.basis.len()
    }

    fn pm(&self) -> usize {
        self.sub.num_modes()
    }

    // variable layout: theta[p][k], gamma[p], psi[p], rho[p], Gamma, Psi
    fn v_theta(&self, p: usize, k: usize) -> usize {
        p * self.nb() + k
    }
    fn v_gamma(&self, p: usize) -> usize {
        self.pm() * self.nb() + p
    }
    fn v_psi(&self, p: usize) -> usize {
        self.pm() * (self.nb() + 1) + p
    }
    fn v_rho(&self, p: usize) -> usize {
        self.pm() * (self.nb() + 2) + p
    }
    fn v_gmax(&self) -> usize {
        self.pm() * (self.nb() + 3)
    }
    fn v_pmax(&self) -> usize {
        self.v_gmax() + 1
    }
    fn nvars(&self) -> usize {
        self.v_pmax() + 1
    }

    fn input_at(&self, p: usize, j: usize, x: &[f64]) -> Vec<f64> {
        match &self.laws {
            Some(l) => l[p].iter().map(|q| q.eval_unchecked(x)).collect(),
            None => self.inputs[j].clone(),
        }
    }

    fn drift_point(&self, p: usize, x: &[f64], j: usize, inst: usize) -> Vec<f64> {
        let lay = self.sub.layout();
        let mut z = vec![0.0; lay.total()];
        z[..lay.n].copy_from_slice(x);
        for (k, v) in lay.input().zip(self.input_at(p, j, x)) {
            z[k] = v;
        }
        for &(k, v) in &self.instances[p][inst] {
            z[k] = v;
        }
        z
    }

    fn rows_for(&self, c: &CounterexamplePoint) -> Vec<Row> {
        let p = c.mode;
        let x = &c.x;
        let bvals: Vec<f64> = self.basis.iter().map(|m| m.eval_unchecked(x)).collect();
        let bcoef = |scale: f64| -> Vec<(usize, f64)> {
            bvals.iter().enumerate().map(|(k, &v)| (self.v_theta(p, k), scale * v)).collect()
        };
        let lam = self.cfg.lambda;
        match c.condition {
            ConditionKind::LowerBound => vec![
                Row {
                    coeffs: bcoef(1.0),
                    kappa: vec![],
                    op: ComparisonOp::Ge,
                    rhs: self.cfg.template.alpha.eval(norm2(x)),
                    margin: Margin::Level,
                },
                Row {
                    coeffs: bcoef(1.0),
                    kappa: vec![],
                    op: ComparisonOp::Le,
                    rhs: self.cfg.barrier_cap * lam,
                    margin: Margin::None,
                },
            ],
            ConditionKind::Initial => {
                let mut coeffs = bcoef(-1.0);
                coeffs.push((self.v_gamma(p), 1.0));
                vec![Row { coeffs, kappa: vec![], op: ComparisonOp::Ge, rhs: 0.0, margin: Margin::Level }]
            }
            ConditionKind::Unsafe => vec![Row {
                coeffs: bcoef(1.0),
                kappa: vec![],
                op: ComparisonOp::Ge,
                rhs: lam,
                margin: Margin::Level,
            }],
            ConditionKind::Drift => {
                let j = c.input.unwrap_or(0);
                let lay = self.sub.layout();
                let mut out = Vec::new();
                for &inst in &c.instances {
                    let z = self.drift_point(p, x, j, inst);
                    let mut coeffs = Vec::new();
                    for p2 in 0..self.pm() {
                        for k in 0..self.nb() {
                            let v = self.drift[p][p2][k].eval_unchecked(&z);
                            if v != 0.0 {
                                coeffs.push((self.v_theta(p2, k), -v));
                            }
                        }
                    }
                    coeffs.push((self.v_psi(p), 1.0));
                    let w2: f64 = lay.internal().map(|k| z[k] * z[k]).sum();
                    if w2 > 0.0 {
                        coeffs.push((self.v_rho(p), w2.powf(self.cfg.template.rho_exponent)));
                    }
                    out.push(Row {
                        coeffs,
                        kappa: bcoef(-1.0),
                        op: ComparisonOp::Ge,
                        rhs: 0.0,
                        margin: Margin::Drift,
                    });
                }
                out
            }
            ConditionKind::InputAdmissible => vec![],
        }
    }

    fn solve(&self, rows: &[Row], kappa: f64, eps: f64) -> Result<Option<Candidate>> {
        self.solve_weighted(rows, kappa, eps, None)
    }

    /// `theta_weights` replaces the objective on the coefficients, used for
    /// the reference candidate.
    fn solve_weighted(
        &self,
        rows: &[Row],
        kappa: f64,
        eps: f64,
        theta_weights: Option<&[Vec<f64>]>,
    ) -> Result<Option<Candidate>> {
        let pm = self.pm();
        let lam = self.cfg.lambda;
        let c_psi = ((kappa * self.cfg.horizon).exp_m1()) / kappa;
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        // unknowns are measured in units of lambda
        let bound = 1e2 * self.cfg.barrier_cap;
        let mut vars = Vec::with_capacity(self.nvars());
        for p in 0..pm {
            for k in 0..self.nb() {
                let w = theta_weights.map_or(0.0, |t| t[p][k]);
                vars.push(lp.add_var(w, (-bound, bound)));
            }
        }
        for _ in 0..pm {
            vars.push(lp.add_var(1e-6, (0.0, bound)));
        }
        for _ in 0..pm {
            vars.push(lp.add_var(1e-6 * c_psi, (0.0, bound)));
        }
        for _ in 0..pm {
            vars.push(lp.add_var(1e-6, (0.0, self.cfg.template.rho_max / lam)));
        }
        vars.push(lp.add_var(1.0, (0.0, bound)));
        vars.push(lp.add_var(c_psi, (0.0, bound)));
        for p in 0..pm {
            lp.add_constraint(
                &[(vars[self.v_gmax()], 1.0), (vars[self.v_gamma(p)], -1.0)],
                ComparisonOp::Ge,
                0.0,
            );
            lp.add_constraint(
                &[(vars[self.v_pmax()], 1.0), (vars[self.v_psi(p)], -1.0)],
                ComparisonOp::Ge,
                0.0,
            );
        }
        let mut acc = vec![0.0; self.nvars()];
        for r in rows {
            for &(i, v) in &r.coeffs {
                acc[i] += v;
            }
            for &(i, v) in &r.kappa {
                acc[i] += kappa * v;
            }
            let mut expr = Vec::new();
            for &(i, _) in r.coeffs.iter().chain(&r.kappa) {
                if acc[i] != 0.0 {
                    expr.push((vars[i], acc[i]));
                    acc[i] = 0.0;
                }
            }
            let m = match r.margin {
                Margin::Level => eps,
                Margin::Drift => eps * self.cfg.drift_margin / self.cfg.margin,
                Margin::None => 0.0,
            };
            let rhs = match r.op {
                ComparisonOp::Ge => r.rhs / lam + m,
                _ => r.rhs / lam - m,
            };
            lp.add_constraint(expr.as_slice(), r.op, rhs);
        }
        let out = match lp.solve() {
            Ok(o) => o,
            Err(microlp::Error::Infeasible) => return Ok(None),
            Err(e) => return Err(Error::Solver(format!("{e:?}"))),
        };
        let sol = out.solution().ok_or_else(|| Error::Solver("LP solve interrupted".into()))?;
        let val = |i: usize| lam * sol.var_value(vars[i]);
        Ok(Some(Candidate {
            theta: (0..pm).map(|p| (0..self.nb()).map(|k| val(self.v_theta(p, k))).collect()).collect(),
            gamma: (0..pm).map(|p| val(self.v_gamma(p)).max(0.0)).collect(),
            psi: (0..pm).map(|p| val(self.v_psi(p)).max(0.0)).collect(),
            rho: (0..pm).map(|p| val(self.v_rho(p)).max(0.0)).collect(),
            kappa,
            objective: val(self.v_gmax()) + c_psi * val(self.v_pmax()),
        }))
    }

    fn certificate(&self, c: &Candidate) -> PseudoCertificate {
        let b = self.cfg.template.rho_exponent;
        let modes = (0..self.pm())
            .map(|p| {
                let mut barrier = Polynomial::zero(&self.sub.state_vars);
                for (m, t) in self.basis.iter().zip(&c.theta[p]) {
                    barrier = &barrier + &m.scale(*t);
                }
                let rho_int = if c.rho[p] > 0.0 {
                    if (b - 1.0).abs() < 1e-15 {
                        ScalarGainFunction::Linear { a: c.rho[p] }
                    } else {
                        ScalarGainFunction::Power { a: c.rho[p], b }
                    }
                } else {
                    ScalarGainFunction::Zero
                };
                ModeCertificate {
                    barrier: barrier.map_coeffs(|v| if v.abs() < 1e-13 { 0.0 } else { v }),
                    alpha: self.cfg.template.alpha,
                    kappa: ScalarGainFunction::Linear { a: c.kappa },
                    rho_int,
                    gamma: c.gamma[p],
                    lambda: self.cfg.lambda,
                    psi: c.psi[p],
                    controller: match &self.laws {
                        Some(l) => ControlLaw::Feedback { laws: l[p].clone() },
                        None => ControlLaw::Selection { inputs: self.inputs.clone() },
                    },
                }
            })
            .collect();
        PseudoCertificate { subsystem: self.sub.id.clone(), modes }
    }

    fn seed_points(&self) -> CounterexampleSet {
        let mut pts = Vec::new();
        let cap = 2000usize;
        let per = |b: &BoxRegion, m: usize| {
            let mut m = m.max(2);
            while m > 2 && (m as f64).powi(b.dim() as i32) > cap as f64 {
                m -= 1;
            }
            b.grid(m)
        };
        for p in 0..self.pm() {
            for x in per(&self.sub.state_box, self.cfg.seed_points) {
                pts.push(self.point(ConditionKind::LowerBound, p, x.clone(), false));
                let mut c = self.point(ConditionKind::Drift, p, x, false);
                if self.laws.is_none() && self.inputs.len() > 1 {
                    // assigned from a first candidate
                    c.input = None;
                }
                pts.push(c);
            }
            for b in self.task.initial.boxes() {
                for x in per(b, self.cfg.region_points) {
                    pts.push(self.point(ConditionKind::Initial, p, x, false));
                }
            }
            for b in self.task.unsafe_region.boxes() {
                for x in per(b, self.cfg.region_points) {
                    pts.push(self.point(ConditionKind::Unsafe, p, x, false));
                }
            }
        }
        CounterexampleSet { points: pts }
    }

    fn point(&self, condition: ConditionKind, mode: usize, x: Vec<f64>, refuted: bool) -> CounterexamplePoint {
        let instances = if condition == ConditionKind::Drift {
            (0..self.instances[mode].len()).collect()
        } else {
            vec![]
        };
        CounterexamplePoint { condition, mode, x, input: Some(0), instances, refuted }
    }

    /// Slack of a drift row for the given candidate; negative means violated.
    fn drift_slack(&self, c: &Candidate, p: usize, x: &[f64], j: usize, inst: usize) -> f64 {
        let z = self.drift_point(p, x, j, inst);
        let lay = self.sub.layout();
        let mut lhs = 0.0;
        for p2 in 0..self.pm() {
            for k in 0..self.nb() {
                lhs += c.theta[p2][k] * self.drift[p][p2][k].eval_unchecked(&z);
            }
        }
        let bp: f64 =
            self.basis.iter().zip(&c.theta[p]).map(|(m, t)| t * m.eval_unchecked(x)).sum();
        let w2: f64 = lay.internal().map(|k| z[k] * z[k]).sum();
        let rho = if w2 > 0.0 { c.rho[p] * w2.powf(self.cfg.template.rho_exponent) } else { 0.0 };
        c.psi[p] + rho - lhs - c.kappa * bp
    }

    /// Input preferred by the candidate at `x`: largest worst-case slack,
    /// earliest on ties.
    fn best_input(&self, c: &Candidate, p: usize, x: &[f64]) -> usize {
        if self.laws.is_some() {
            return 0;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..self.inputs.len() {
            let s = (0..self.instances[p].len())
                .map(|i| self.drift_slack(c, p, x, j, i))
                .fold(f64::INFINITY, f64::min);
            if s > best.1 {
                best = (j, s);
            }
        }
        best.0
    }

    fn drift_instances(&self, c: &Candidate, p: usize, x: &[f64], j: usize) -> Vec<usize> {
        let n = self.instances[p].len();
        if n <= 16 {
            return (0..n).collect();
        }
        let mut s: Vec<(usize, f64)> = (0..n).map(|i| (i, self.drift_slack(c, p, x, j, i))).collect();
        s.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut v: Vec<usize> = s.iter().take(4).map(|e| e.0).collect();
        v.sort();
        v
    }

    fn build_rows(&self, set: &CounterexampleSet) -> Vec<Row> {
        set.points.iter().flat_map(|c| self.rows_for(c)).collect()
    }

    /// Log-scale bisection for the largest `kappa_hat` with a feasible LP,
    /// then the backoff giving the smallest reach bound.
    fn choose_kappa(&self, rows: &[Row], hi: f64, eps: f64) -> Result<Option<Candidate>> {
        let lo0 = self.cfg.kappa_range[0];
        let Some(base) = self.solve(rows, lo0, eps)? else { return Ok(None) };
        let (mut lo, mut hi) = (lo0.ln(), hi.min(self.cfg.kappa_range[1]).ln());
        if self.solve(rows, hi.exp(), eps)?.is_some() {
            lo = hi;
        } else {
            for _ in 0..self.cfg.bisection_steps {
                let mid = 0.5 * (lo + hi);
                if self.solve(rows, mid.exp(), eps)?.is_some() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let kmax = lo.exp();
        let mut best = base;
        let mut best_bound = self.bound(&best);
        for f in &self.cfg.kappa_backoffs {
            let k = (kmax * f).max(lo0);
            if let Some(c) = self.solve(rows, k, eps)? {
                let b = self.bound(&c);
                if b < best_bound {
                    best = c;
                    best_bound = b;
                }
            }
        }
        Ok(Some(best))
    }

    /// Reach bound of the candidate's worst-mode constants.
    fn bound(&self, c: &Candidate) -> f64 {
        let input = BoundInput {
            gamma: c.gamma.iter().copied().fold(0.0, f64::max),
            lambda: self.cfg.lambda,
            psi: c.psi.iter().copied().fold(0.0, f64::max),
            kappa_hat: c.kappa,
            horizon: self.cfg.horizon,
        };
        reach_bound(&input).map_or(f64::INFINITY, |r| r.delta)
    }

    /// Alternates between solving the LP and moving each drift point to the
    /// input the candidate prefers, while the objective does not grow.
    fn improve_assignment(
        &self,
        set: &mut CounterexampleSet,
        cand: Candidate,
        eps: f64,
    ) -> Result<Candidate> {
        if self.laws.is_some() || self.inputs.len() <= 1 {
            return Ok(cand);
        }
        let mut cur = cand;
        for _ in 0..self.cfg.assign_rounds {
            let mut next = set.clone();
            let mut changed = false;
            for pt in next.points.iter_mut() {
                if pt.condition != ConditionKind::Drift {
                    continue;
                }
                let j = self.best_input(&cur, pt.mode, &pt.x);
                if Some(j) != pt.input {
                    pt.input = Some(j);
                    pt.instances = self.drift_instances(&cur, pt.mode, &pt.x, j);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            match self.solve(&self.build_rows(&next), cur.kappa, eps)? {
                Some(c) if c.objective <= cur.objective * (1.0 + 1e-9) => {
                    *set = next;
                    cur = c;
                }
                _ => break,
            }
        }
        Ok(cur)
    }

    /// Mean of each basis function over the state samples, per mode.
    fn mass(&self) -> Vec<Vec<f64>> {
        let xs = self.sub.state_box.grid(self.cfg.seed_points.max(2).min(64));
        let m: Vec<f64> = self
            .basis
            .iter()
            .map(|b| xs.iter().map(|x| b.eval_unchecked(x)).sum::<f64>() / xs.len() as f64)
            .collect();
        vec![m; self.pm()]
    }

    fn assign_inputs(&self, set: &mut CounterexampleSet, c: &Candidate) {
        for pt in set.points.iter_mut() {
            if pt.condition == ConditionKind::Drift && pt.input.is_none() {
                pt.input = Some(self.best_input(c, pt.mode, &pt.x));
            }
        }
    }
}

fn best_margins(report: &VerificationReport) -> String {
    report
        .conditions
        .iter()
        .map(|c| format!("{}[{}]={:.3e}", c.condition.name(), c.mode, c.worst_margin))
        .collect::<Vec<_>>()
        .join(", ")
}

/// CEGIS loop for one subsystem and one reachability task.
pub fn synthesize_cpbf(
    sub: &Subsystem,
    task: &TaskRegions,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    let prob = CandidateProgram::new(sub, task, cfg)?;
    let mut set = prob.seed_points();
    let mut eps = cfg.margin;
    let mut last_report: Option<VerificationReport> = None;
    // inputs of unassigned seed drift points come from a first candidate
    // solved on the level conditions alone, then improve by alternation
    if set.points.iter().any(|p| p.condition == ConditionKind::Drift && p.input.is_none()) {
        let mut pre = set.clone();
        pre.points.retain(|p| p.condition != ConditionKind::Drift);
        let first = prob
            .solve_weighted(&prob.build_rows(&pre), cfg.kappa_range[0], eps, Some(&prob.mass()))?
            .ok_or_else(|| Error::Template("template infeasible on the level conditions".into()))?;
        prob.assign_inputs(&mut set, &first);
        match prob.solve(&prob.build_rows(&set), cfg.kappa_range[0], eps)? {
            Some(c) => {
                prob.improve_assignment(&mut set, c, eps)?;
            }
            None => set = pre,
        }
    }
    let mut candidate: Option<Candidate> = None;
    for it in 1..=cfg.budget {
        let rows = prob.build_rows(&set);
        let mut cand = match &candidate {
            Some(c) => prob.solve(&rows, c.kappa, eps)?,
            None => None,
        };
        if cand.is_none() {
            let hi = candidate.as_ref().map_or(cfg.kappa_range[1], |c| c.kappa);
            cand = prob.choose_kappa(&rows, hi, eps)?;
        }
        let cand = match cand {
            Some(c) => c,
            None => {
                if !reassign(&prob, &mut set, eps)? {
                    if set.refuted() == 0 {
                        return Err(Error::Template(
                            "the template is infeasible on the initial sample grid".into(),
                        ));
                    }
                    return Err(Error::SynthesisFailed {
                        iterations: it,
                        reason: match &last_report {
                            Some(r) => format!("LP infeasible; best margins {}", best_margins(r)),
                            None => "LP infeasible".into(),
                        },
                    });
                }
                continue;
            }
        };
        let cand = prob.improve_assignment(&mut set, cand, eps)?;
        let cert = prob.certificate(&cand);
        let effort =
            FalsifyEffort { seed: cfg.effort.seed ^ cfg.seed ^ ((it as u64) << 16), ..cfg.effort };
        let cexs = falsify(sub, &cert, task, &cfg.verify, &effort)?;
        let mut added = 0;
        if cexs.is_empty() {
            let report = verify_cpbf(sub, &cert, task, &cfg.verify)?;
            if report.status == Status::Verified {
                return Ok(SynthesisResult {
                    certificate: cert,
                    kappa_hat: cand.kappa,
                    iterations: it,
                    counterexamples: set.refuted(),
                    report,
                });
            }
            for c in &report.conditions {
                if c.status != Status::Verified {
                    let x = c.witness.clone().unwrap_or_else(|| c.worst_point.clone());
                    added += add_point(&prob, &mut set, &cand, c.condition, c.mode, x);
                }
            }
            if report.status == Status::Inconclusive {
                eps *= 2.0;
            }
            last_report = Some(report);
        } else {
            for c in cexs {
                added += add_point(&prob, &mut set, &cand, c.condition, c.mode, c.point);
            }
        }
        if added == 0 {
            // the refuting points are already stored; ask for more slack
            eps *= 2.0;
        }
        candidate = Some(cand);
    }
    let reason = match &last_report {
        Some(r) => format!("budget exhausted; best margins {}", best_margins(r)),
        None => "budget exhausted before any candidate survived falsification".into(),
    };
    Err(Error::SynthesisFailed { iterations: cfg.budget, reason })
}

fn add_point(
    prob: &CandidateProgram,
    set: &mut CounterexampleSet,
    cand: &Candidate,
    kind: ConditionKind,
    mode: usize,
    x: Vec<f64>,
) -> usize {
    if kind == ConditionKind::InputAdmissible {
        return 0;
    }
    let mut pt = prob.point(kind, mode, x, true);
    if kind == ConditionKind::Drift {
        let j = prob.best_input(cand, mode, &pt.x);
        pt.input = Some(j);
        pt.instances = prob.drift_instances(cand, mode, &pt.x, j);
    }
    if set.points.iter().any(|q| q == &pt) {
        return 0;
    }
    set.points.push(pt);
    1
}

/// On infeasibility, reassigns the inputs of refuting drift points in
/// declared order, keeping the first assignment that restores feasibility.
fn reassign(prob: &CandidateProgram, set: &mut CounterexampleSet, eps: f64) -> Result<bool> {
    if prob.inputs.len() <= 1 {
        return Ok(false);
    }
    let k = prob.cfg.kappa_range[0];
    let idx: Vec<usize> = set
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.refuted && p.condition == ConditionKind::Drift)
        .map(|(i, _)| i)
        .collect();
    for &i in idx.iter().rev() {
        let orig = set.points[i].input;
        for j in 0..prob.inputs.len() {
            if Some(j) == orig {
                continue;
            }
            set.points[i].input = Some(j);
            set.points[i].instances = (0..prob.instances[set.points[i].mode].len()).collect();
            if prob.solve(&prob.build_rows(set), k, eps)?.is_some() {
                return Ok(true);
            }
        }
        set.points[i].input = orig;
    }
    Ok(false)
}

/// Solves the candidate LP for a given point set and `kappa_hat`; `None` when
/// infeasible. Exposed for monotonicity checks.
pub fn candidate_feasible(
    sub: &Subsystem,
    task: &TaskRegions,
    cfg: &SynthesisConfig,
    set: &CounterexampleSet,
    kappa: f64,
) -> Result<Option<PseudoCertificate>> {
    let prob = CandidateProgram::new(sub, task, cfg)?;
    let rows = prob.build_rows(set);
    Ok(prob.solve(&rows, kappa, cfg.margin)?.map(|c| prob.certificate(&c)))
}

/// The initial sample set used by the synthesis loop, with every drift point
/// assigned the first candidate input.
pub fn initial_points(sub: &Subsystem, task: &TaskRegions, cfg: &SynthesisConfig) -> Result<CounterexampleSet> {
    let prob = CandidateProgram::new(sub, task, cfg)?;
    let mut s = prob.seed_points();
    for p in s.points.iter_mut() {
        if p.input.is_none() {
            p.input = Some(0);
        }
    }
    Ok(s)
}

