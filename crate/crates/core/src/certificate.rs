//! Pseudo-barrier certificates, their grid-based verification and the
//! falsification search used by synthesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{assemble_drift_condition, DriftExpression, DriftParams, Penalty};
use crate::model::{tensor, BoxRegion, InputSet, Region, Subsystem};
use crate::poly::{Polynomial, ScalarGainFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlLaw {
    None,
    /// Polynomial feedback `nu = l(x)`, one law per input.
    Feedback { laws: Vec<Polynomial> },
    /// Pointwise choice among fixed inputs: the input with the largest drift
    /// margin at the current state, earliest on ties.
    Selection { inputs: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCertificate {
    pub barrier: Polynomial,
    pub alpha: ScalarGainFunction,
    pub kappa: ScalarGainFunction,
    pub rho_int: ScalarGainFunction,
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub controller: ControlLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoCertificate {
    pub subsystem: String,
    pub modes: Vec<ModeCertificate>,
}

impl PseudoCertificate {
    pub fn barriers(&self) -> Vec<Polynomial> {
        self.modes.iter().map(|m| m.barrier.clone()).collect()
    }
    pub fn check_shape(&self, sub: &Subsystem) -> Result<()> {
        if self.modes.len() != sub.num_modes() {
            return Err(Error::InvalidInput(format!(
                "{}: certificate has {} modes, subsystem has {}",
                sub.id,
                self.modes.len(),
                sub.num_modes()
            )));
        }
        for (p, m) in self.modes.iter().enumerate() {
            if m.barrier.variables() != sub.state_vars.as_slice() {
                return Err(Error::InvalidInput(format!(
                    "{} mode {p}: barrier must be over {:?}",
                    sub.id, sub.state_vars
                )));
            }
            for g in [&m.alpha, &m.kappa, &m.rho_int] {
                g.validate()?;
            }
            if !(m.gamma.is_finite() && m.lambda.is_finite() && m.psi >= 0.0) {
                return Err(Error::InvalidInput(format!("{} mode {p}: bad constants", sub.id)));
            }
            if let ControlLaw::Feedback { laws } = &m.controller {
                if laws.len() != sub.input_vars.len()
                    || laws.iter().any(|l| l.variables() != sub.state_vars.as_slice())
                {
                    return Err(Error::InvalidInput(format!(
                        "{} mode {p}: feedback laws must be over the state, one per input",
                        sub.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Initial and unsafe sets of one reach-avoid task, in subsystem coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskRegions {
    pub initial: Region,
    pub unsafe_region: Region,
}

impl TaskRegions {
    pub fn from_subsystem(sub: &Subsystem) -> Self {
        TaskRegions { initial: sub.initial.clone(), unsafe_region: sub.unsafe_region.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LipschitzMode {
    /// Per-cell interval enclosure of the gradient (mean-value form).
    Interval,
    /// Global constant: 1.5 times the largest sampled gradient norm.
    Sampled,
    /// Per-cell constant from gradients at the cell centre and corners.
    LocalSampled,
    Supplied { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub points_per_dim: usize,
    pub refine_levels: usize,
    pub refine_factor: usize,
    pub lipschitz: LipschitzMode,
    pub strict: bool,
    /// Grid points per dimension for internal inputs or disturbances that
    /// enter non-affinely.
    pub uncertainty_points: usize,
    pub max_uncertainty_samples: usize,
    pub max_cells: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            points_per_dim: 101,
            refine_levels: 4,
            refine_factor: 4,
            lipschitz: LipschitzMode::Interval,
            strict: false,
            uncertainty_points: 5,
            max_uncertainty_samples: 4096,
            max_cells: 2_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    LowerBound,
    Initial,
    Unsafe,
    Drift,
    InputAdmissible,
}

impl ConditionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConditionKind::LowerBound => "lower_bound",
            ConditionKind::Initial => "initial",
            ConditionKind::Unsafe => "unsafe",
            ConditionKind::Drift => "drift",
            ConditionKind::InputAdmissible => "input_admissible",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Verified,
    Inconclusive,
    Falsified,
}

impl Status {
    pub fn combine(self, other: Status) -> Status {
        self.max(other)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub nodes: usize,
    pub cells: usize,
    pub unresolved_cells: usize,
    pub deepest_level: usize,
    pub lipschitz: f64,
    pub finest_half_diagonal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    pub mode: usize,
    pub status: Status,
    /// Smallest margin seen at any evaluated point; negative means violated.
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    /// Violating point, present when the status is falsified.
    pub witness: Option<Vec<f64>>,
    pub grid: GridStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub subsystem: String,
    pub status: Status,
    pub conditions: Vec<ConditionReport>,
}

/// A scalar function of the state: polynomial part plus numeric gain terms.
#[derive(Clone, Debug)]
pub struct Field {
    pub poly: Polynomial,
    grad: Vec<Polynomial>,
    pub penalties: Vec<Penalty>,
}

fn is_squared_norm(p: &Polynomial) -> Option<Vec<usize>> {
    let n = p.nvars();
    let mut idx = Vec::new();
    for (e, c) in p.terms() {
        if c != 1.0 {
            return None;
        }
        let nz: Vec<usize> = (0..n).filter(|&k| e[k] != 0).collect();
        if nz.len() != 1 || e[nz[0]] != 2 {
            return None;
        }
        idx.push(nz[0]);
    }
    if idx.is_empty() {
        None
    } else {
        Some(idx)
    }
}

fn gain_derivative_bound(g: &ScalarGainFunction, s_lo: f64, s_hi: f64) -> f64 {
    match *g {
        ScalarGainFunction::Zero => 0.0,
        ScalarGainFunction::Linear { a } => a,
        ScalarGainFunction::Power { a, b } => {
            if b >= 1.0 {
                a * b * s_hi.max(0.0).powf(b - 1.0)
            } else if s_lo > 0.0 {
                a * b * s_lo.powf(b - 1.0)
            } else {
                f64::INFINITY
            }
        }
    }
}

impl Field {
    pub fn new(poly: Polynomial, penalties: Vec<Penalty>) -> Field {
        let grad = poly.gradient();
        Field { poly, grad, penalties }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.poly.eval_unchecked(x);
        for p in &self.penalties {
            v += p.eval(x);
        }
        v
    }

    fn rounding(&self, x: &[f64]) -> f64 {
        1e-12 * self.poly.eval_abs(x)
    }

    /// Componentwise bound on `|df/dx_k|` over the cell.
    fn gradient_bound(&self, lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let n = lo.len();
        let mut g: Vec<f64> = self
            .grad
            .iter()
            .map(|d| {
                let (a, b) = d.eval_interval(lo, hi);
                a.abs().max(b.abs())
            })
            .collect();
        for pen in &self.penalties {
            let (s_lo, s_hi) = pen.arg.eval_interval(lo, hi);
            if let Some(idx) = is_squared_norm(&pen.arg) {
                // gain(r^2) with r = |x_idx| is Lipschitz in r, and r is
                // 1-Lipschitz in each coordinate.
                let (r_lo, r_hi) = (s_lo.max(0.0).sqrt(), s_hi.max(0.0).sqrt());
                let d = match pen.gain {
                    ScalarGainFunction::Zero => 0.0,
                    ScalarGainFunction::Linear { a } => 2.0 * a * r_hi,
                    ScalarGainFunction::Power { a, b } => {
                        let e = 2.0 * b;
                        if e >= 1.0 {
                            a * e * r_hi.powf(e - 1.0)
                        } else if r_lo > 0.0 {
                            a * e * r_lo.powf(e - 1.0)
                        } else {
                            f64::INFINITY
                        }
                    }
                };
                for &k in &idx {
                    g[k] += d;
                }
            } else {
                let d = gain_derivative_bound(&pen.gain, s_lo, s_hi);
                for k in 0..n {
                    let (a, b) = pen.arg.partial(k).eval_interval(lo, hi);
                    g[k] += d * a.abs().max(b.abs());
                }
            }
        }
        g
    }

    pub fn gradient_norm_at(&self, x: &[f64]) -> f64 {
        let mut g: Vec<f64> = self.grad.iter().map(|d| d.eval_unchecked(x)).collect();
        if !self.penalties.is_empty() {
            for (k, gk) in g.iter_mut().enumerate() {
                let h = 1e-6 * (1.0 + x[k].abs());
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                let pen = |y: &[f64]| self.penalties.iter().map(|p| p.eval(y)).sum::<f64>();
                *gk += (pen(&xp) - pen(&xm)) / (2.0 * h);
            }
        }
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn interval_lower_bound(&self, c: &[f64], r: &[f64]) -> f64 {
        let lo: Vec<f64> = c.iter().zip(r).map(|(a, b)| a - b).collect();
        let hi: Vec<f64> = c.iter().zip(r).map(|(a, b)| a + b).collect();
        let g = self.gradient_bound(&lo, &hi);
        let spread: f64 = g.iter().zip(r).map(|(a, b)| a * b).sum();
        self.eval(c) - self.rounding(c) - spread
    }
}

/// `margin(x) = max_b min_s field_{b,s}(x)`: non-negative where the condition
/// holds. Branches are candidate inputs, inner entries are uncertainty
/// instances.
#[derive(Clone, Debug)]
pub struct MarginFn {
    pub branches: Vec<Vec<Field>>,
}

impl MarginFn {
    pub fn single(f: Field) -> MarginFn {
        MarginFn { branches: vec![vec![f]] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.branches
            .iter()
            .map(|b| b.iter().map(|f| f.eval(x)).fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the best branch at `x`, earliest on ties.
    pub fn best_branch(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, b) in self.branches.iter().enumerate() {
            let v = b.iter().map(|f| f.eval(x)).fold(f64::INFINITY, f64::min);
            if v > best.1 {
                best = (k, v);
            }
        }
        best
    }

    fn fields(&self) -> impl Iterator<Item = &Field> {
        self.branches.iter().flatten()
    }

    fn max_gradient_norm(&self, points: &[Vec<f64>]) -> f64 {
        let mut l: f64 = 0.0;
        for f in self.fields() {
            for x in points {
                l = l.max(f.gradient_norm_at(x));
            }
        }
        l
    }

    fn cell_lower_bound(&self, c: &[f64], r: &[f64], mode: &CellBound) -> (f64, f64) {
        let hd = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        match mode {
            CellBound::Interval => {
                let lb = self
                    .branches
                    .iter()
                    .map(|b| {
                        b.iter()
                            .map(|f| f.interval_lower_bound(c, r))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let m = self.eval(c);
                let l = if hd > 0.0 { ((m - lb) / hd).max(0.0) } else { 0.0 };
                (lb, l)
            }
            CellBound::Constant(l) => (self.eval(c) - l * hd, *l),
            CellBound::Local => {
                let lo: Vec<f64> = c.iter().zip(r).map(|(a, b)| a - b).collect();
                let hi: Vec<f64> = c.iter().zip(r).map(|(a, b)| a + b).collect();
                let mut pts = BoxRegion(
                    lo.iter().zip(&hi).map(|(&a, &b)| crate::model::Interval::new(a, b)).collect(),
                )
                .corners();
                pts.push(c.to_vec());
                let l = 1.5 * self.max_gradient_norm(&pts);
                (self.eval(c) - l * hd, l)
            }
        }
    }
}

enum CellBound {
    Interval,
    Constant(f64),
    Local,
}

fn coarse_points(b: &BoxRegion) -> Vec<Vec<f64>> {
    let n = b.dim().max(1);
    let mut m = 41usize;
    while m > 2 && (m as f64).powi(n as i32) > 1e4 {
        m -= 1;
    }
    b.grid(m)
}

struct Outcome {
    status: Status,
    worst: f64,
    worst_point: Vec<f64>,
    witness: Option<Vec<f64>>,
    stats: GridStats,
}

fn violates(m: f64, strict: bool) -> bool {
    m < 0.0 || (strict && m == 0.0)
}

fn verify_margin(margin: &MarginFn, boxes: &[BoxRegion], cfg: &VerifyConfig) -> Outcome {
    let mut out = Outcome {
        status: Status::Verified,
        worst: f64::INFINITY,
        worst_point: Vec::new(),
        witness: None,
        stats: GridStats {
            nodes: 0,
            cells: 0,
            unresolved_cells: 0,
            deepest_level: 0,
            lipschitz: 0.0,
            finest_half_diagonal: 0.0,
        },
    };
    let mut finest = f64::INFINITY;
    for b in boxes {
        let m = cfg.points_per_dim.max(2);
        let axes: Vec<Vec<f64>> =
            b.0.iter().map(|iv| crate::model::linspace(iv.lo, iv.hi, m)).collect();
        for x in tensor(&axes) {
            out.stats.nodes += 1;
            let v = margin.eval(&x);
            if v < out.worst {
                out.worst = v;
                out.worst_point = x.clone();
            }
        }
        let bound = match cfg.lipschitz {
            LipschitzMode::Interval => CellBound::Interval,
            LipschitzMode::Sampled => {
                CellBound::Constant(1.5 * margin.max_gradient_norm(&coarse_points(b)))
            }
            LipschitzMode::LocalSampled => CellBound::Local,
            LipschitzMode::Supplied { value } => CellBound::Constant(value),
        };
        // cells spanned by consecutive grid nodes
        let mut stack: Vec<(Vec<f64>, Vec<f64>, usize)> = Vec::new();
        let centres: Vec<Vec<(f64, f64)>> = axes
            .iter()
            .map(|ax| {
                if ax.len() == 1 {
                    vec![(ax[0], 0.0)]
                } else {
                    ax.windows(2).map(|w| (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]))).collect()
                }
            })
            .collect();
        let idx_axes: Vec<Vec<f64>> =
            centres.iter().map(|c| (0..c.len()).map(|k| k as f64).collect()).collect();
        for ix in tensor(&idx_axes) {
            let c: Vec<f64> = ix.iter().enumerate().map(|(d, &k)| centres[d][k as usize].0).collect();
            let r: Vec<f64> = ix.iter().enumerate().map(|(d, &k)| centres[d][k as usize].1).collect();
            stack.push((c, r, 0));
        }
        stack.reverse();
        let f = cfg.refine_factor.max(2);
        while let Some((c, r, level)) = stack.pop() {
            out.stats.cells += 1;
            out.stats.deepest_level = out.stats.deepest_level.max(level);
            let hd = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            finest = finest.min(hd);
            let mc = margin.eval(&c);
            if mc < out.worst {
                out.worst = mc;
                out.worst_point = c.clone();
            }
            let (lb, l) = margin.cell_lower_bound(&c, &r, &bound);
            out.stats.lipschitz = out.stats.lipschitz.max(l);
            let ok = if cfg.strict { lb > 0.0 } else { lb >= 0.0 };
            if ok {
                continue;
            }
            if level < cfg.refine_levels && out.stats.cells + stack.len() < cfg.max_cells {
                let sub: Vec<Vec<f64>> = (0..c.len())
                    .map(|d| {
                        (0..f)
                            .map(|k| c[d] - r[d] + r[d] * (2 * k + 1) as f64 / f as f64)
                            .collect()
                    })
                    .collect();
                let rr: Vec<f64> = r.iter().map(|v| v / f as f64).collect();
                for cc in tensor(&sub) {
                    stack.push((cc, rr.clone(), level + 1));
                }
            } else {
                out.stats.unresolved_cells += 1;
            }
        }
    }
    out.stats.finest_half_diagonal = if finest.is_finite() { finest } else { 0.0 };
    if out.worst_point.is_empty() {
        out.worst = 0.0;
    }
    if violates(out.worst, cfg.strict) && !out.worst_point.is_empty() {
        out.status = Status::Falsified;
        out.witness = Some(out.worst_point.clone());
    } else if out.stats.unresolved_cells > 0 {
        out.status = Status::Inconclusive;
    }
    out
}

fn state_region(sub: &Subsystem) -> Vec<BoxRegion> {
    vec![sub.state_box.clone()]
}

fn norm2(vars: &[String], idx: std::ops::Range<usize>) -> Polynomial {
    let mut p = Polynomial::zero(vars);
    for k in idx {
        let v = Polynomial::var(vars, k);
        p = &p + &(&v * &v);
    }
    p
}

pub fn lower_bound_margin(sub: &Subsystem, m: &ModeCertificate) -> MarginFn {
    let sv = &sub.state_vars;
    let s = norm2(sv, 0..sv.len());
    match m.alpha.apply_polynomial(&s) {
        Some(a) => MarginFn::single(Field::new(&m.barrier - &a, vec![])),
        None => MarginFn::single(Field::new(
            m.barrier.clone(),
            vec![Penalty { gain: m.alpha, arg: s, sign: -1.0 }],
        )),
    }
}

pub fn initial_margin(sub: &Subsystem, m: &ModeCertificate) -> MarginFn {
    let c = Polynomial::constant(&sub.state_vars, m.gamma);
    MarginFn::single(Field::new(&c - &m.barrier, vec![]))
}

pub fn unsafe_margin(sub: &Subsystem, m: &ModeCertificate) -> MarginFn {
    let c = Polynomial::constant(&sub.state_vars, m.lambda);
    MarginFn::single(Field::new(&m.barrier - &c, vec![]))
}

/// Candidate inputs used when no explicit controller is given.
pub fn default_input_candidates(set: &InputSet) -> Result<Vec<Vec<f64>>> {
    match set {
        InputSet::Finite { points } => Ok(points.clone()),
        InputSet::Box { bounds } => {
            let mut c = bounds.corners();
            let centre = bounds.center();
            if !c.contains(&centre) {
                c.push(centre);
            }
            Ok(c)
        }
        InputSet::Free { dim } if *dim == 0 => Ok(vec![vec![]]),
        InputSet::Free { .. } => Err(Error::InvalidInput(
            "a controller is required when the input set is unbounded".into(),
        )),
    }
}

/// Uncertainty instances for the adversarial variables of a drift expression:
/// internal inputs and disturbances, each as a list of `(index, value)`
/// assignments.
pub fn uncertainty_instances(
    sub: &Subsystem,
    without_rho: &DriftExpression,
    cfg: &VerifyConfig,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let lay = sub.layout();
    let w_dep = lay.internal().any(|k| {
        without_rho.poly.depends_on(k) || without_rho.penalties.iter().any(|p| p.arg.depends_on(k))
    });
    let w_sets: Vec<Vec<f64>> = if lay.w == 0 {
        vec![vec![]]
    } else if !w_dep {
        vec![sub.internal_box.closest_to_origin()]
    } else {
        grid_capped(&sub.internal_box, cfg.uncertainty_points, cfg.max_uncertainty_samples)?
    };
    let d_affine = lay.disturbance().all(|k| {
        without_rho.poly.degree_in(k) <= 1
            && without_rho.penalties.iter().all(|p| !p.arg.depends_on(k))
    });
    let d_sets: Vec<Vec<f64>> = if lay.d == 0 {
        vec![vec![]]
    } else if d_affine {
        sub.disturbance_box.corners()
    } else {
        grid_capped(&sub.disturbance_box, cfg.uncertainty_points, cfg.max_uncertainty_samples)?
    };
    if w_sets.len() * d_sets.len() > cfg.max_uncertainty_samples {
        return Err(Error::InvalidInput(format!(
            "{}: {} uncertainty samples exceed the cap of {}",
            sub.id,
            w_sets.len() * d_sets.len(),
            cfg.max_uncertainty_samples
        )));
    }
    let mut out = Vec::new();
    for w in &w_sets {
        for d in &d_sets {
            let mut a: Vec<(usize, f64)> = lay.internal().zip(w.iter().copied()).collect();
            a.extend(lay.disturbance().zip(d.iter().copied()));
            out.push(a);
        }
    }
    Ok(out)
}

fn grid_capped(b: &BoxRegion, m: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
    let total = (m.max(2) as f64).powi(b.dim() as i32);
    if total > cap as f64 {
        return Err(Error::InvalidInput(format!(
            "uncertainty grid of {total} points exceeds the cap of {cap}"
        )));
    }
    Ok(b.grid(m.max(2)))
}

fn restrict_to_state(sub: &Subsystem, e: &DriftExpression) -> Result<Field> {
    let e = e.embed(&sub.state_vars)?;
    Ok(Field::new(
        e.poly.scale(-1.0),
        e.penalties
            .into_iter()
            .map(|p| Penalty { gain: p.gain, arg: p.arg, sign: -p.sign })
            .collect(),
    ))
}

/// Drift margin of mode `p` together with the input attached to each
/// branch (`None` for feedback laws).
pub fn drift_margin(
    sub: &Subsystem,
    cert: &PseudoCertificate,
    p: usize,
    cfg: &VerifyConfig,
) -> Result<(MarginFn, Vec<Option<Vec<f64>>>)> {
    let mc = &cert.modes[p];
    let barriers = cert.barriers();
    let expr = assemble_drift_condition(
        sub,
        p,
        &barriers,
        &DriftParams { kappa: &mc.kappa, rho_int: &mc.rho_int, psi: mc.psi },
    )?;
    let bare = assemble_drift_condition(
        sub,
        p,
        &barriers,
        &DriftParams { kappa: &mc.kappa, rho_int: &ScalarGainFunction::Zero, psi: mc.psi },
    )?;
    let lay = sub.layout();
    let all = sub.all_vars();
    let controller = match (&mc.controller, &sub.modes[p].controller) {
        (ControlLaw::None, Some(laws)) => ControlLaw::Feedback { laws: laws.clone() },
        (c, _) => c.clone(),
    };
    let (exprs, bare_exprs, labels): (Vec<DriftExpression>, Vec<DriftExpression>, Vec<_>) =
        match &controller {
            ControlLaw::Feedback { laws } => {
                let mut subs = Vec::with_capacity(all.len());
                for k in 0..all.len() {
                    if lay.input().contains(&k) {
                        subs.push(laws[k - lay.n].embed(&all)?);
                    } else {
                        subs.push(Polynomial::var(&all, k));
                    }
                }
                (vec![expr.substitute(&subs)?], vec![bare.substitute(&subs)?], vec![None])
            }
            other => {
                let cands = match other {
                    ControlLaw::Selection { inputs } => inputs.clone(),
                    _ => default_input_candidates(&sub.external_input)?,
                };
                let mut es = Vec::new();
                let mut bs = Vec::new();
                let mut ls = Vec::new();
                for u in cands {
                    if u.len() != lay.m {
                        return Err(Error::InvalidInput(format!(
                            "{}: candidate input {u:?} has the wrong dimension",
                            sub.id
                        )));
                    }
                    let a: Vec<(usize, f64)> = lay.input().zip(u.iter().copied()).collect();
                    es.push(expr.fix_many(&a));
                    bs.push(bare.fix_many(&a));
                    ls.push(Some(u));
                }
                (es, bs, ls)
            }
        };
    let mut branches = Vec::new();
    for (e, b) in exprs.iter().zip(&bare_exprs) {
        let inst = uncertainty_instances(sub, b, cfg)?;
        let mut fields = Vec::new();
        for a in inst {
            fields.push(restrict_to_state(sub, &e.fix_many(&a))?);
        }
        branches.push(fields);
    }
    Ok((MarginFn { branches }, labels))
}

/// Per-mode runtime controller derived from a certificate.
#[derive(Clone, Debug)]
pub enum ModeController {
    Feedback(Vec<Polynomial>),
    Selection { inputs: Vec<Vec<f64>>, margin: MarginFn },
    Fixed(Vec<f64>),
}

impl ModeController {
    pub fn input(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            ModeController::Feedback(l) => out.extend(l.iter().map(|q| q.eval_unchecked(x))),
            ModeController::Selection { inputs, margin } => {
                out.extend_from_slice(&inputs[margin.best_branch(x).0])
            }
            ModeController::Fixed(u) => out.extend_from_slice(u),
        }
    }
}

pub fn mode_controllers(
    sub: &Subsystem,
    cert: &PseudoCertificate,
    cfg: &VerifyConfig,
) -> Result<Vec<ModeController>> {
    cert.check_shape(sub)?;
    let mut out = Vec::new();
    for p in 0..sub.num_modes() {
        let (margin, labels) = drift_margin(sub, cert, p, cfg)?;
        let c = if labels.len() == 1 && labels[0].is_none() {
            match (&cert.modes[p].controller, &sub.modes[p].controller) {
                (ControlLaw::Feedback { laws }, _) => ModeController::Feedback(laws.clone()),
                (_, Some(laws)) => ModeController::Feedback(laws.clone()),
                _ => ModeController::Fixed(vec![0.0; sub.input_vars.len()]),
            }
        } else if labels.len() == 1 {
            ModeController::Fixed(labels[0].clone().unwrap())
        } else {
            ModeController::Selection {
                inputs: labels.into_iter().map(|l| l.unwrap()).collect(),
                margin,
            }
        };
        out.push(c);
    }
    Ok(out)
}

fn report(kind: ConditionKind, mode: usize, o: Outcome) -> ConditionReport {
    ConditionReport {
        condition: kind,
        mode,
        status: o.status,
        worst_margin: o.worst,
        worst_point: o.worst_point,
        witness: o.witness,
        grid: o.stats,
    }
}

/// Checks all pseudo-barrier conditions of every mode on grids with
/// adaptive refinement.
pub fn verify_cpbf(
    sub: &Subsystem,
    cert: &PseudoCertificate,
    task: &TaskRegions,
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    cert.check_shape(sub)?;
    if cfg.strict && matches!(cfg.lipschitz, LipschitzMode::Sampled | LipschitzMode::LocalSampled)
    {
        return Err(Error::InvalidInput(
            "strict mode needs interval or supplied Lipschitz bounds".into(),
        ));
    }
    let mut conditions = Vec::new();
    for (p, m) in cert.modes.iter().enumerate() {
        conditions.push(report(
            ConditionKind::LowerBound,
            p,
            verify_margin(&lower_bound_margin(sub, m), &state_region(sub), cfg),
        ));
        conditions.push(report(
            ConditionKind::Initial,
            p,
            verify_margin(&initial_margin(sub, m), task.initial.boxes(), cfg),
        ));
        conditions.push(report(
            ConditionKind::Unsafe,
            p,
            verify_margin(&unsafe_margin(sub, m), task.unsafe_region.boxes(), cfg),
        ));
        let (dm, _) = drift_margin(sub, cert, p, cfg)?;
        conditions.push(report(ConditionKind::Drift, p, verify_margin(&dm, &state_region(sub), cfg)));
        if let (ControlLaw::Feedback { laws }, InputSet::Box { bounds }) =
            (&m.controller, &sub.external_input)
        {
            conditions.push(input_admissible(sub, p, laws, bounds, cfg));
        }
    }
    let status = conditions.iter().fold(Status::Verified, |s, c| s.combine(c.status));
    Ok(VerificationReport { subsystem: sub.id.clone(), status, conditions })
}

fn input_admissible(
    sub: &Subsystem,
    p: usize,
    laws: &[Polynomial],
    bounds: &BoxRegion,
    cfg: &VerifyConfig,
) -> ConditionReport {
    let mut branch = Vec::new();
    for (k, l) in laws.iter().enumerate() {
        let lo = Polynomial::constant(&sub.state_vars, bounds.0[k].lo);
        let hi = Polynomial::constant(&sub.state_vars, bounds.0[k].hi);
        branch.push(Field::new(l - &lo, vec![]));
        branch.push(Field::new(&hi - l, vec![]));
    }
    let m = MarginFn { branches: vec![branch] };
    report(ConditionKind::InputAdmissible, p, verify_margin(&m, &state_region(sub), cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub condition: ConditionKind,
    pub mode: usize,
    pub point: Vec<f64>,
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyEffort {
    pub starts: usize,
    pub per_condition: usize,
    pub seed: u64,
}

impl Default for FalsifyEffort {
    fn default() -> Self {
        FalsifyEffort { starts: 16, per_condition: 4, seed: 0 }
    }
}

/// Coordinate search with a shrinking step, confined to the box.
pub fn local_descent(f: &dyn Fn(&[f64]) -> f64, b: &BoxRegion, start: &[f64]) -> (Vec<f64>, f64) {
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let widths: Vec<f64> = b.0.iter().map(|i| i.width()).collect();
    let mut step = 0.05;
    let mut iters = 0;
    while step > 1e-9 && iters < 400 {
        iters += 1;
        let mut improved = false;
        for k in 0..x.len() {
            for dir in [-1.0, 1.0] {
                let mut y = x.clone();
                y[k] = (y[k] + dir * step * widths[k]).clamp(b.0[k].lo, b.0[k].hi);
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Grid scan followed by multi-start local descent. Returns up to `keep`
/// distinct violating points, most violating first.
pub fn falsify_fn(
    f: &dyn Fn(&[f64]) -> f64,
    boxes: &[BoxRegion],
    points_per_dim: usize,
    effort: &FalsifyEffort,
    keep: usize,
) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(effort.seed);
    let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
    for b in boxes {
        let mut nodes: Vec<(Vec<f64>, f64)> =
            b.grid(points_per_dim.max(2)).into_iter().map(|x| {
                let v = f(&x);
                (x, v)
            }).collect();
        nodes.sort_by(|a, c| a.1.total_cmp(&c.1));
        let mut starts: Vec<Vec<f64>> =
            nodes.iter().take(effort.starts / 2).map(|n| n.0.clone()).collect();
        while starts.len() < effort.starts {
            starts.push(b.0.iter().map(|i| rng.random_range(i.lo..=i.hi)).collect());
        }
        for (x, v) in nodes.iter() {
            if *v < 0.0 {
                found.push((x.clone(), *v));
            }
        }
        for s in starts {
            let (x, v) = local_descent(f, b, &s);
            if v < 0.0 {
                found.push((x, v));
            }
        }
    }
    found.sort_by(|a, c| a.1.total_cmp(&c.1));
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, v) in found {
        let close = out.iter().any(|(y, _)| {
            x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-9 * (1.0 + a.abs()))
        });
        if !close {
            out.push((x, v));
        }
        if out.len() >= keep {
            break;
        }
    }
    out
}

/// Searches for violations of every condition of a candidate certificate.
pub fn falsify(
    sub: &Subsystem,
    cert: &PseudoCertificate,
    task: &TaskRegions,
    cfg: &VerifyConfig,
    effort: &FalsifyEffort,
) -> Result<Vec<Counterexample>> {
    let mut out = Vec::new();
    for (p, m) in cert.modes.iter().enumerate() {
        let (dm, _) = drift_margin(sub, cert, p, cfg)?;
        let items: [(ConditionKind, MarginFn, Vec<BoxRegion>); 4] = [
            (ConditionKind::LowerBound, lower_bound_margin(sub, m), state_region(sub)),
            (ConditionKind::Initial, initial_margin(sub, m), task.initial.0.clone()),
            (ConditionKind::Unsafe, unsafe_margin(sub, m), task.unsafe_region.0.clone()),
            (ConditionKind::Drift, dm, state_region(sub)),
        ];
        for (k, (kind, mf, boxes)) in items.into_iter().enumerate() {
            let e = FalsifyEffort { seed: effort.seed ^ ((p as u64) << 8 | k as u64), ..*effort };
            let f = |x: &[f64]| mf.eval(x);
            for (x, v) in falsify_fn(&f, &boxes, cfg.points_per_dim, &e, effort.per_condition) {
                out.push(Counterexample { condition: kind, mode: p, point: x, margin: v });
            }
        }
    }
    Ok(out)
}

fn face_polys(vars: &[String], offset: usize, b: &BoxRegion) -> Vec<Polynomial> {
    let mut g = Vec::new();
    for (k, iv) in b.0.iter().enumerate() {
        let x = Polynomial::var(vars, offset + k);
        g.push(&x - &Polynomial::constant(vars, iv.lo));
        g.push(&Polynomial::constant(vars, iv.hi) - &x);
    }
    g
}

/// Multipliers of the sum-of-squares form: one polynomial per box face.
#[derive(Clone, Debug, Default)]
pub struct SosMultipliers {
    pub state: Vec<Polynomial>,
    pub initial: Vec<Vec<Polynomial>>,
    pub unsafe_region: Vec<Vec<Polynomial>>,
    /// Over the full variable list; faces of the state box then the internal
    /// input box.
    pub drift: Vec<Polynomial>,
}

impl SosMultipliers {
    pub fn zero(sub: &Subsystem, task: &TaskRegions) -> SosMultipliers {
        let n = sub.n();
        let z = Polynomial::zero(&sub.state_vars);
        let za = Polynomial::zero(&sub.all_vars());
        SosMultipliers {
            state: vec![z.clone(); 2 * n],
            initial: task.initial.0.iter().map(|_| vec![z.clone(); 2 * n]).collect(),
            unsafe_region: task.unsafe_region.0.iter().map(|_| vec![z.clone(); 2 * n]).collect(),
            drift: vec![za; 2 * (n + sub.internal_vars.len())],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SosExpressions {
    pub lower_bound: Polynomial,
    pub initial: Vec<Polynomial>,
    pub unsafe_region: Vec<Polynomial>,
    /// Over the full variable list; includes the controller residual
    /// `-sum_j (nu_j - l_j(x))`.
    pub drift: DriftExpression,
}

fn dot(a: &[Polynomial], b: &[Polynomial], vars: &[String]) -> Result<Polynomial> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} multipliers, got {}",
            b.len(),
            a.len()
        )));
    }
    let mut s = Polynomial::zero(vars);
    for (x, y) in a.iter().zip(b) {
        s = &s + &(x * y);
    }
    Ok(s)
}

/// Polynomial expressions whose non-negativity (as sums of squares, with
/// non-negative multipliers) implies the certificate conditions of mode `p`.
pub fn assemble_sos_expressions(
    sub: &Subsystem,
    cert: &PseudoCertificate,
    p: usize,
    task: &TaskRegions,
    mult: &SosMultipliers,
) -> Result<SosExpressions> {
    let m = &cert.modes[p];
    let sv = &sub.state_vars;
    let n = sub.n();
    let hh = norm2(sv, 0..n);
    let alpha = m.alpha.apply_polynomial(&hh).ok_or_else(|| {
        Error::InvalidInput("the SOS form needs a polynomial alpha".into())
    })?;
    let g = face_polys(sv, 0, &sub.state_box);
    let lower_bound = &(&m.barrier - &dot(&mult.state, &g, sv)?) - &alpha;
    let mut initial = Vec::new();
    for (b, l) in task.initial.0.iter().zip(&mult.initial) {
        let g0 = face_polys(sv, 0, b);
        initial.push(
            &(&(-&m.barrier) - &dot(l, &g0, sv)?) + &Polynomial::constant(sv, m.gamma),
        );
    }
    let mut unsafe_region = Vec::new();
    for (b, l) in task.unsafe_region.0.iter().zip(&mult.unsafe_region) {
        let gu = face_polys(sv, 0, b);
        unsafe_region.push(
            &(&m.barrier - &dot(l, &gu, sv)?) - &Polynomial::constant(sv, m.lambda),
        );
    }
    let all = sub.all_vars();
    let lay = sub.layout();
    let barriers = cert.barriers();
    let e = assemble_drift_condition(
        sub,
        p,
        &barriers,
        &DriftParams { kappa: &m.kappa, rho_int: &m.rho_int, psi: m.psi },
    )?;
    let mut poly = e.poly.scale(-1.0);
    let mut faces = face_polys(&all, 0, &sub.state_box);
    faces.extend(face_polys(&all, lay.internal().start, &sub.internal_box));
    poly = &poly - &dot(&mult.drift, &faces, &all)?;
    if let ControlLaw::Feedback { laws } = &m.controller {
        for (j, l) in laws.iter().enumerate() {
            let nu = Polynomial::var(&all, lay.n + j);
            poly = &poly - &(&nu - &l.embed(&all)?);
        }
    }
    let penalties = e
        .penalties
        .into_iter()
        .map(|q| Penalty { gain: q.gain, arg: q.arg, sign: -q.sign })
        .collect();
    Ok(SosExpressions {
        lower_bound,
        initial,
        unsafe_region,
        drift: DriftExpression { poly, penalties },
    })
}
