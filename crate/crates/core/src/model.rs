//! Continuous-time stochastic hybrid subsystems and their interconnection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{var_names, Polynomial};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Axis-aligned box, serialized as a list of `[lo, hi]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct BoxRegion(pub Vec<Interval>);

impl From<Vec<[f64; 2]>> for BoxRegion {
    fn from(v: Vec<[f64; 2]>) -> Self {
        BoxRegion(v.into_iter().map(|[a, b]| Interval::new(a, b)).collect())
    }
}

impl From<BoxRegion> for Vec<[f64; 2]> {
    fn from(b: BoxRegion) -> Self {
        b.0.into_iter().map(|i| [i.lo, i.hi]).collect()
    }
}

impl BoxRegion {
    pub fn new(bounds: &[(f64, f64)]) -> Self {
        BoxRegion(bounds.iter().map(|&(a, b)| Interval::new(a, b)).collect())
    }
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        BoxRegion(vec![Interval::new(lo, hi); dim])
    }
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|i| i.lo.is_finite() && i.hi.is_finite() && i.lo <= i.hi)
    }
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len() && self.0.iter().zip(x).all(|(i, &v)| i.contains(v))
    }
    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        self.dim() == other.dim()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.lo <= b.lo && b.hi <= a.hi)
    }
    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(|i| i.center()).collect()
    }
    pub fn half_widths(&self) -> Vec<f64> {
        self.0.iter().map(|i| 0.5 * i.width()).collect()
    }
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, i) in x.iter_mut().zip(&self.0) {
            *v = v.clamp(i.lo, i.hi);
        }
    }
    /// All `2^n` corners in lexicographic order (lower bound first).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            let c = (0..n)
                .map(|k| {
                    let bit = (mask >> (n - 1 - k)) & 1;
                    if bit == 0 {
                        self.0[k].lo
                    } else {
                        self.0[k].hi
                    }
                })
                .collect();
            out.push(c);
        }
        out
    }
    /// Tensor grid with `m` points per dimension (box corners included).
    pub fn grid(&self, m: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self.0.iter().map(|i| linspace(i.lo, i.hi, m)).collect();
        tensor(&axes)
    }
    /// Point of the box closest to the origin.
    pub fn closest_to_origin(&self) -> Vec<f64> {
        self.0.iter().map(|i| 0.0f64.clamp(i.lo, i.hi)).collect()
    }
}

pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m <= 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
}

pub fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for ax in axes {
        let mut next = Vec::with_capacity(out.len() * ax.len());
        for p in &out {
            for &v in ax {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Finite union of boxes; the empty union is allowed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region(pub Vec<BoxRegion>);

impl Region {
    pub fn from_box(b: BoxRegion) -> Self {
        Region(vec![b])
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn contains(&self, x: &[f64]) -> bool {
        self.0.iter().any(|b| b.contains(x))
    }
    pub fn boxes(&self) -> &[BoxRegion] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSet {
    Finite { points: Vec<Vec<f64>> },
    Box { bounds: BoxRegion },
    /// Unconstrained inputs of the given dimension.
    Free { dim: usize },
}

impl InputSet {
    pub fn dim(&self) -> usize {
        match self {
            InputSet::Finite { points } => points.first().map_or(0, |p| p.len()),
            InputSet::Box { bounds } => bounds.dim(),
            InputSet::Free { dim } => *dim,
        }
    }
    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            InputSet::Finite { points } => points.iter().any(|p| p.as_slice() == u),
            InputSet::Box { bounds } => bounds.contains(u),
            InputSet::Free { dim } => u.len() == *dim,
        }
    }
}

/// How disturbance variables are realized during simulation and in the
/// joint network check. Subsystem verification treats them as adversarial
/// within their box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSource {
    Zero,
    Constant { value: Vec<f64> },
    /// `d = mean_k sin(w_k - x_0)`, the normalized Kuramoto coupling.
    MeanSineOfInternalInputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// One polynomial per state over the subsystem's full variable list.
    pub drift: Vec<Polynomial>,
    /// `n x b` matrix over the state variables.
    #[serde(default)]
    pub diffusion: Vec<Vec<Polynomial>>,
    /// `n x r` matrix over the state variables; column `j` is the jump
    /// displacement of the `j`-th Poisson process.
    #[serde(default)]
    pub reset: Vec<Vec<Polynomial>>,
    /// Optional default feedback law over the state variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<Vec<Polynomial>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subsystem {
    pub id: String,
    pub state_vars: Vec<String>,
    #[serde(default)]
    pub input_vars: Vec<String>,
    #[serde(default)]
    pub internal_vars: Vec<String>,
    #[serde(default)]
    pub disturbance_vars: Vec<String>,
    pub state_box: BoxRegion,
    pub external_input: InputSet,
    #[serde(default = "empty_box")]
    pub internal_box: BoxRegion,
    #[serde(default = "empty_box")]
    pub disturbance_box: BoxRegion,
    #[serde(default = "zero_source")]
    pub disturbance_source: DisturbanceSource,
    pub modes: Vec<Mode>,
    /// Mode-rate matrix over the state variables; rows sum to zero.
    pub transition_rates: Vec<Vec<Polynomial>>,
    #[serde(default)]
    pub poisson_rates: Vec<f64>,
    /// Output maps `h_ij` keyed by target subsystem id, over state variables.
    #[serde(default)]
    pub outputs: BTreeMap<String, Vec<Polynomial>>,
    #[serde(default)]
    pub initial: Region,
    #[serde(default)]
    pub unsafe_region: Region,
}

fn empty_box() -> BoxRegion {
    BoxRegion(Vec::new())
}

fn zero_source() -> DisturbanceSource {
    DisturbanceSource::Zero
}

/// Index ranges of the variable groups inside [`Subsystem::all_vars`].
#[derive(Clone, Copy, Debug)]
pub struct VarLayout {
    pub n: usize,
    pub m: usize,
    pub w: usize,
    pub d: usize,
}

impl VarLayout {
    pub fn state(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    pub fn input(&self) -> std::ops::Range<usize> {
        self.n..self.n + self.m
    }
    pub fn internal(&self) -> std::ops::Range<usize> {
        self.n + self.m..self.n + self.m + self.w
    }
    pub fn disturbance(&self) -> std::ops::Range<usize> {
        let s = self.n + self.m + self.w;
        s..s + self.d
    }
    pub fn total(&self) -> usize {
        self.n + self.m + self.w + self.d
    }
}

impl Subsystem {
    pub fn n(&self) -> usize {
        self.state_vars.len()
    }
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }
    pub fn layout(&self) -> VarLayout {
        VarLayout {
            n: self.state_vars.len(),
            m: self.input_vars.len(),
            w: self.internal_vars.len(),
            d: self.disturbance_vars.len(),
        }
    }
    /// State, external input, internal input and disturbance variables, in
    /// that order. Drift polynomials live over this list.
    pub fn all_vars(&self) -> Vec<String> {
        let mut v = self.state_vars.clone();
        v.extend(self.input_vars.iter().cloned());
        v.extend(self.internal_vars.iter().cloned());
        v.extend(self.disturbance_vars.iter().cloned());
        v
    }
    pub fn max_exit_rate_on(&self, points: &[Vec<f64>]) -> f64 {
        let mut m: f64 = 0.0;
        for (p, row) in self.transition_rates.iter().enumerate() {
            for x in points {
                m = m.max(-row[p].eval_unchecked(x));
            }
        }
        m
    }
    /// Evaluates the mode-rate row of mode `p` at `x`.
    pub fn rate_row(&self, p: usize, x: &[f64]) -> Vec<f64> {
        self.transition_rates[p].iter().map(|r| r.eval_unchecked(x)).collect()
    }
    pub fn output_to(&self, target: &str) -> Option<&Vec<Polynomial>> {
        self.outputs.get(target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub subsystems: Vec<Subsystem>,
}

impl Network {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }
    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subsystems.iter().position(|s| s.id == id)
    }
    /// Sources feeding subsystem `j`, in network order, with the slice of
    /// `j`'s internal input vector each one occupies.
    pub fn wiring(&self, j: usize) -> Vec<(usize, std::ops::Range<usize>)> {
        let target = &self.subsystems[j].id;
        let mut out = Vec::new();
        let mut off = 0;
        for (i, s) in self.subsystems.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Some(h) = s.outputs.get(target) {
                out.push((i, off..off + h.len()));
                off += h.len();
            }
        }
        out
    }
    /// Internal input of subsystem `j` produced by the composite state.
    pub fn internal_input(&self, j: usize, states: &[Vec<f64>], out: &mut Vec<f64>) {
        out.clear();
        let target = &self.subsystems[j].id;
        for (i, s) in self.subsystems.iter().enumerate() {
            if i == j {
                continue;
            }
            if let Some(h) = s.outputs.get(target) {
                for hk in h {
                    out.push(hk.eval_unchecked(&states[i]));
                }
            }
        }
    }
    pub fn joint_state_vars(&self) -> Vec<String> {
        let mut v = Vec::new();
        for s in &self.subsystems {
            for x in &s.state_vars {
                v.push(format!("{}.{}", s.id, x));
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Dimension { subsystem: String, detail: String },
    InvalidBox { subsystem: String, which: String },
    NegativeRate { subsystem: String, from: usize, to: usize, point: Vec<f64>, value: f64 },
    RowSumNonzero { subsystem: String, mode: usize, point: Vec<f64>, value: f64 },
    NegativePoissonRate { subsystem: String, index: usize },
    OutputNotIdentity { subsystem: String },
    OutputExceedsState { from: String, to: String, point: Vec<f64> },
    OutputOutsideInternalBox { from: String, to: String, point: Vec<f64> },
    RegionOutsideStateBox { subsystem: String, which: String },
    DuplicateId { id: String },
    UnknownTarget { from: String, to: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { subsystem, detail } => {
                write!(f, "{subsystem}: dimension mismatch: {detail}")
            }
            Violation::InvalidBox { subsystem, which } => {
                write!(f, "{subsystem}: invalid box `{which}`")
            }
            Violation::NegativeRate { subsystem, from, to, point, value } => write!(
                f,
                "{subsystem}: rate {from}->{to} is {value} at {point:?}"
            ),
            Violation::RowSumNonzero { subsystem, mode, point, value } => {
                write!(f, "{subsystem}: rate row {mode} sums to {value} at {point:?}")
            }
            Violation::NegativePoissonRate { subsystem, index } => {
                write!(f, "{subsystem}: Poisson rate {index} is negative")
            }
            Violation::OutputNotIdentity { subsystem } => {
                write!(f, "{subsystem}: self output must be the identity on the state")
            }
            Violation::OutputExceedsState { from, to, point } => write!(
                f,
                "output {from}->{to} exceeds the state norm at {point:?}"
            ),
            Violation::OutputOutsideInternalBox { from, to, point } => write!(
                f,
                "output {from}->{to} leaves the internal input set at {point:?}"
            ),
            Violation::RegionOutsideStateBox { subsystem, which } => {
                write!(f, "{subsystem}: region `{which}` is not inside the state set")
            }
            Violation::DuplicateId { id } => write!(f, "duplicate subsystem id `{id}`"),
            Violation::UnknownTarget { from, to } => {
                write!(f, "{from}: output targets unknown subsystem `{to}`")
            }
        }
    }
}

/// Points used for sampled validation checks: a tensor grid with up to 11
/// points per dimension, fewer when the dimension is high.
pub fn validation_points(b: &BoxRegion) -> Vec<Vec<f64>> {
    let n = b.dim().max(1);
    let mut m = 11usize;
    while m > 2 && (m as f64).powi(n as i32) > 1e5 {
        m -= 1;
    }
    b.grid(m)
}

const TOL: f64 = 1e-9;

fn check_subsystem(s: &Subsystem, out: &mut Vec<Violation>) {
    let sub = s.id.clone();
    let n = s.n();
    let lay = s.layout();
    let all = s.all_vars();
    let dim = |d: String, out: &mut Vec<Violation>| {
        out.push(Violation::Dimension { subsystem: sub.clone(), detail: d })
    };
    if s.state_box.dim() != n {
        dim(format!("state box has dim {}, state has {}", s.state_box.dim(), n), out);
    }
    if !s.state_box.is_valid() {
        out.push(Violation::InvalidBox { subsystem: sub.clone(), which: "state".into() });
    }
    if s.external_input.dim() != lay.m {
        dim(
            format!("input set dim {} vs {} input variables", s.external_input.dim(), lay.m),
            out,
        );
    }
    if s.internal_box.dim() != lay.w {
        dim(format!("internal box dim {} vs {} variables", s.internal_box.dim(), lay.w), out);
    } else if !s.internal_box.is_valid() {
        out.push(Violation::InvalidBox { subsystem: sub.clone(), which: "internal".into() });
    }
    if s.disturbance_box.dim() != lay.d {
        dim(format!("disturbance box dim {} vs {} vars", s.disturbance_box.dim(), lay.d), out);
    }
    if s.modes.is_empty() {
        dim("no modes".into(), out);
    }
    let r = s.poisson_rates.len();
    for (j, &l) in s.poisson_rates.iter().enumerate() {
        if !(l >= 0.0) {
            out.push(Violation::NegativePoissonRate { subsystem: sub.clone(), index: j });
        }
    }
    for (p, m) in s.modes.iter().enumerate() {
        if m.drift.len() != n || m.drift.iter().any(|f| f.variables() != all.as_slice()) {
            dim(format!("mode {p}: drift must have {n} entries over {all:?}"), out);
        }
        if !m.diffusion.is_empty()
            && (m.diffusion.len() != n
                || m.diffusion.iter().any(|row| {
                    row.len() != m.diffusion[0].len()
                        || row.iter().any(|q| q.variables() != s.state_vars.as_slice())
                }))
        {
            dim(format!("mode {p}: diffusion must be n x b over the state"), out);
        }
        if r > 0
            && (m.reset.len() != n
                || m.reset.iter().any(|row| {
                    row.len() != r || row.iter().any(|q| q.variables() != s.state_vars.as_slice())
                }))
        {
            dim(format!("mode {p}: reset must be {n} x {r} over the state"), out);
        }
        if let Some(c) = &m.controller {
            if c.len() != lay.m {
                dim(format!("mode {p}: controller has {} entries", c.len()), out);
            }
        }
    }
    let pm = s.modes.len();
    if s.transition_rates.len() != pm
        || s.transition_rates.iter().any(|row| {
            row.len() != pm || row.iter().any(|q| q.variables() != s.state_vars.as_slice())
        })
    {
        dim(format!("transition rates must be {pm} x {pm} over the state"), out);
        return;
    }
    if s.state_box.dim() != n || !s.state_box.is_valid() {
        return;
    }
    let pts = validation_points(&s.state_box);
    'rates: for (p, row) in s.transition_rates.iter().enumerate() {
        for x in &pts {
            let vals: Vec<f64> = row.iter().map(|q| q.eval_unchecked(x)).collect();
            for (pp, &v) in vals.iter().enumerate() {
                if pp != p && v < -TOL {
                    out.push(Violation::NegativeRate {
                        subsystem: sub.clone(),
                        from: p,
                        to: pp,
                        point: x.clone(),
                        value: v,
                    });
                    continue 'rates;
                }
            }
            let sum: f64 = vals.iter().sum();
            let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            if sum.abs() > 1e-9 * scale {
                out.push(Violation::RowSumNonzero {
                    subsystem: sub.clone(),
                    mode: p,
                    point: x.clone(),
                    value: sum,
                });
                continue 'rates;
            }
        }
    }
    if let Some(h) = s.outputs.get(&s.id) {
        let ok = h.len() == n
            && h.iter().enumerate().all(|(k, hk)| *hk == Polynomial::var(&s.state_vars, k));
        if !ok {
            out.push(Violation::OutputNotIdentity { subsystem: sub.clone() });
        }
    }
    for (which, reg) in [("initial", &s.initial), ("unsafe", &s.unsafe_region)] {
        for b in reg.boxes() {
            if !s.state_box.contains_box(b) {
                out.push(Violation::RegionOutsideStateBox {
                    subsystem: sub.clone(),
                    which: which.into(),
                });
            }
        }
    }
}

/// Collects every violated model invariant. An empty list means the network
/// is well formed.
pub fn validate(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for s in &net.subsystems {
        if !seen.insert(s.id.clone()) {
            out.push(Violation::DuplicateId { id: s.id.clone() });
        }
        check_subsystem(s, &mut out);
        for (t, h) in &s.outputs {
            if net.index_of(t).is_none() {
                out.push(Violation::UnknownTarget { from: s.id.clone(), to: t.clone() });
            }
            if h.iter().any(|q| q.variables() != s.state_vars.as_slice()) {
                out.push(Violation::Dimension {
                    subsystem: s.id.clone(),
                    detail: format!("output to {t} must be over the state variables"),
                });
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    for j in 0..net.len() {
        let tgt = &net.subsystems[j];
        let wiring = net.wiring(j);
        let total: usize = wiring.iter().map(|(_, r)| r.len()).sum();
        if total != tgt.internal_vars.len() {
            out.push(Violation::Dimension {
                subsystem: tgt.id.clone(),
                detail: format!(
                    "receives {total} internal signals but declares {}",
                    tgt.internal_vars.len()
                ),
            });
            continue;
        }
        for (i, range) in wiring {
            let src = &net.subsystems[i];
            let h = &src.outputs[&tgt.id];
            let slice = BoxRegion(tgt.internal_box.0[range].to_vec());
            for x in validation_points(&src.state_box) {
                let y: Vec<f64> = h.iter().map(|q| q.eval_unchecked(&x)).collect();
                let inside = slice
                    .0
                    .iter()
                    .zip(&y)
                    .all(|(iv, &v)| v >= iv.lo - TOL && v <= iv.hi + TOL);
                if !inside {
                    out.push(Violation::OutputOutsideInternalBox {
                        from: src.id.clone(),
                        to: tgt.id.clone(),
                        point: x,
                    });
                    break;
                }
                let ny: f64 = y.iter().map(|v| v * v).sum();
                let nx: f64 = x.iter().map(|v| v * v).sum();
                if ny > nx * (1.0 + 1e-12) + TOL {
                    out.push(Violation::OutputExceedsState {
                        from: src.id.clone(),
                        to: tgt.id.clone(),
                        point: x,
                    });
                    break;
                }
            }
        }
    }
    out
}

pub fn ensure_valid(net: &Network) -> Result<()> {
    let v = validate(net);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

/// Decodes a joint mode index into per-subsystem modes (first subsystem is
/// the most significant digit).
pub fn decode_joint_mode(index: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    let mut r = index;
    for k in (0..sizes.len()).rev() {
        out[k] = r % sizes[k];
        r /= sizes[k];
    }
    out
}

pub fn encode_joint_mode(modes: &[usize], sizes: &[usize]) -> usize {
    modes.iter().zip(sizes).fold(0, |acc, (&m, &s)| acc * s + m)
}

pub const MAX_JOINT_MODES: usize = 4096;

/// Joint mode-rate matrix of the interconnection over the joint state, with
/// rows and columns ordered by [`decode_joint_mode`]. Only one subsystem
/// switches at a time, so off-diagonal entries differ in a single component.
pub fn build_interconnection_generator_matrix(net: &Network) -> Result<Vec<Vec<Polynomial>>> {
    let sizes: Vec<usize> = net.subsystems.iter().map(|s| s.num_modes()).collect();
    let total = sizes.iter().try_fold(1usize, |a, &s| a.checked_mul(s));
    let total = match total {
        Some(t) if t <= MAX_JOINT_MODES => t,
        _ => {
            return Err(Error::InvalidInput(format!(
                "joint mode space exceeds {MAX_JOINT_MODES} modes"
            )))
        }
    };
    let joint = net.joint_state_vars();
    let mut lifted: Vec<Vec<Vec<Polynomial>>> = Vec::new();
    for s in &net.subsystems {
        let local: Vec<String> = s.state_vars.iter().map(|x| format!("{}.{}", s.id, x)).collect();
        let mut rows = Vec::new();
        for row in &s.transition_rates {
            let mut r = Vec::new();
            for q in row {
                r.push(q.with_variables(&local)?.embed(&joint)?);
            }
            rows.push(r);
        }
        lifted.push(rows);
    }
    let zero = Polynomial::zero(&joint);
    let mut mat = vec![vec![zero.clone(); total]; total];
    for a in 0..total {
        let pa = decode_joint_mode(a, &sizes);
        let mut diag = zero.clone();
        for (i, rows) in lifted.iter().enumerate() {
            diag = &diag + &rows[pa[i]][pa[i]];
            for to in 0..sizes[i] {
                if to == pa[i] {
                    continue;
                }
                let mut pb = pa.clone();
                pb[i] = to;
                let b = encode_joint_mode(&pb, &sizes);
                mat[a][b] = rows[pa[i]][to].clone();
            }
        }
        mat[a][a] = diag;
    }
    Ok(mat)
}

pub fn identity_outputs(state_vars: &[String]) -> Vec<Polynomial> {
    (0..state_vars.len()).map(|k| Polynomial::var(state_vars, k)).collect()
}

/// Convenience for constant rate matrices over a given state variable list.
pub fn constant_rates(state_vars: &[String], q: &[Vec<f64>]) -> Vec<Vec<Polynomial>> {
    let v = var_names(state_vars);
    q.iter()
        .map(|row| row.iter().map(|&c| Polynomial::constant(&v, c)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(id: &str, peer: &str) -> Subsystem {
        let sv = var_names(&["x"]);
        let all = var_names(&["x", "u", "w"]);
        let drift = vec![Polynomial::affine(&all, 0.0, &[-1.0, 1.0, 0.1])];
        let mut outputs = BTreeMap::new();
        outputs.insert(peer.to_string(), identity_outputs(&sv));
        Subsystem {
            id: id.into(),
            state_vars: sv.clone(),
            input_vars: var_names(&["u"]),
            internal_vars: var_names(&["w"]),
            disturbance_vars: vec![],
            state_box: BoxRegion::new(&[(0.0, 1.0)]),
            external_input: InputSet::Box { bounds: BoxRegion::new(&[(-1.0, 1.0)]) },
            internal_box: BoxRegion::new(&[(0.0, 1.0)]),
            disturbance_box: BoxRegion(vec![]),
            disturbance_source: DisturbanceSource::Zero,
            modes: vec![
                Mode { drift: drift.clone(), diffusion: vec![], reset: vec![], controller: None },
                Mode { drift, diffusion: vec![], reset: vec![], controller: None },
            ],
            transition_rates: constant_rates(&sv, &[vec![-0.9, 0.9], vec![0.8, -0.8]]),
            poisson_rates: vec![],
            outputs,
            initial: Region::default(),
            unsafe_region: Region::default(),
        }
    }

    #[test]
    fn valid_pair() {
        let net = Network { subsystems: vec![toy("a", "b"), toy("b", "a")] };
        assert!(validate(&net).is_empty(), "{:?}", validate(&net));
    }

    #[test]
    fn detects_bad_row_sum() {
        let mut s = toy("a", "b");
        s.transition_rates = constant_rates(&s.state_vars, &[vec![-0.9, 0.8], vec![0.8, -0.8]]);
        let net = Network { subsystems: vec![s, toy("b", "a")] };
        let v = validate(&net);
        assert!(v.iter().any(|e| matches!(e, Violation::RowSumNonzero { mode: 0, .. })));
    }

    #[test]
    fn detects_output_outside_internal_box() {
        let mut b = toy("b", "a");
        b.state_box = BoxRegion::new(&[(0.0, 2.0)]);
        let net = Network { subsystems: vec![toy("a", "b"), b] };
        let v = validate(&net);
        assert!(
            v.iter().any(|e| matches!(e, Violation::OutputOutsideInternalBox { from, to, .. }
                if from == "b" && to == "a")),
            "{v:?}"
        );
    }

    #[test]
    fn joint_matrix_rows_sum_to_zero() {
        let net = Network { subsystems: vec![toy("a", "b"), toy("b", "a")] };
        let m = build_interconnection_generator_matrix(&net).unwrap();
        assert_eq!(m.len(), 4);
        for row in &m {
            let s: f64 = row.iter().map(|q| q.eval(&[0.3, 0.4]).unwrap()).sum();
            assert!(s.abs() < 1e-12);
        }
        // from (0,0): first switches at 0.9, second at 0.9, no double switch
        let r: Vec<f64> = m[0].iter().map(|q| q.eval(&[0.0, 0.0]).unwrap()).collect();
        assert_eq!(r, vec![-1.8, 0.9, 0.9, 0.0]);
    }
}
