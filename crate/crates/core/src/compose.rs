//! Small-gain composition of subsystem pseudo-barrier certificates into a
//! barrier certificate of the interconnected network.

use serde::{Deserialize, Serialize};

use crate::certificate::{
    mode_controllers, verify_cpbf, ModeController, PseudoCertificate, Status, TaskRegions,
    VerificationReport, VerifyConfig,
};
use crate::error::{Error, Result};
use crate::generator::{assemble_drift_condition, DriftExpression, DriftParams};
use crate::model::{linspace, tensor, BoxRegion, DisturbanceSource, Network, Region, Subsystem};
use crate::poly::{Polynomial, ScalarGainFunction};

/// Which mode pairs enter the interconnection gain `delta_ij`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every mode of the receiver against every mode of the sender.
    AllPairs,
    /// Only equal mode indices.
    SameIndex,
}

/// Factor applied to the squared internal input before the gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanIn {
    /// Number of wired neighbours, as required by the splitting inequality.
    NeighbourCount,
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainExtraction {
    pub pairing: Pairing,
    pub fan_in: FanIn,
    pub range_points: usize,
}

impl Default for GainExtraction {
    fn default() -> Self {
        GainExtraction { pairing: Pairing::AllPairs, fan_in: FanIn::NeighbourCount, range_points: 2001 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallGainData {
    /// Diagonal of the decay matrix, `min_p lambda_hat_ip`.
    pub lambda: Vec<f64>,
    /// Interconnection gains with a zero diagonal.
    pub delta: Vec<Vec<f64>>,
    /// Upper end of each barrier's range on its state set.
    pub barrier_max: Vec<f64>,
}

impl SmallGainData {
    /// Homogeneous all-to-all gains.
    pub fn uniform(n: usize, lambda: f64, delta: f64) -> SmallGainData {
        SmallGainData {
            lambda: vec![lambda; n],
            delta: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { delta }).collect())
                .collect(),
            barrier_max: vec![f64::INFINITY; n],
        }
    }
}

/// Largest value of any mode barrier of `sub` on its state set, sampled on a
/// grid and enlarged by the interval enclosure of each cell.
pub fn barrier_max(sub: &Subsystem, cert: &PseudoCertificate, points: usize) -> f64 {
    let m = per_dim(points, sub.n());
    let axes: Vec<Vec<f64>> = sub.state_box.0.iter().map(|i| linspace(i.lo, i.hi, m)).collect();
    let mut best: f64 = 0.0;
    for b in cert.barriers() {
        for (lo, hi) in cells(&axes) {
            best = best.max(b.eval_interval(&lo, &hi).1);
        }
    }
    best
}

fn per_dim(points: usize, n: usize) -> usize {
    let mut m = points.max(2);
    while m > 2 && (m as f64).powi(n.max(1) as i32) > 2e5 {
        m = (m / 2).max(2);
    }
    m
}

fn cells(axes: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let spans: Vec<Vec<(f64, f64)>> = axes
        .iter()
        .map(|a| {
            if a.len() == 1 {
                vec![(a[0], a[0])]
            } else {
                a.windows(2).map(|w| (w[0], w[1])).collect()
            }
        })
        .collect();
    let idx: Vec<Vec<f64>> = spans.iter().map(|s| (0..s.len()).map(|k| k as f64).collect()).collect();
    tensor(&idx)
        .into_iter()
        .map(|ix| {
            let lo = ix.iter().enumerate().map(|(d, &k)| spans[d][k as usize].0).collect();
            let hi = ix.iter().enumerate().map(|(d, &k)| spans[d][k as usize].1).collect();
            (lo, hi)
        })
        .collect()
}

/// Linear gains bounding the certificate functions on the barrier range.
pub fn extract_gains(
    net: &Network,
    certs: &[PseudoCertificate],
    opts: &GainExtraction,
) -> Result<SmallGainData> {
    let n = net.len();
    if certs.len() != n {
        return Err(Error::InvalidInput(format!("{} certificates for {n} subsystems", certs.len())));
    }
    let bmax: Vec<f64> =
        net.subsystems.iter().zip(certs).map(|(s, c)| barrier_max(s, c, opts.range_points)).collect();
    let mut lambda = vec![0.0; n];
    for i in 0..n {
        let mut l = f64::INFINITY;
        for (p, m) in certs[i].modes.iter().enumerate() {
            let v = m.kappa.linear_lower_bound(bmax[i]);
            if !(v > 0.0) {
                return Err(Error::GainExtraction(format!(
                    "{} mode {p}: kappa admits no positive linear lower bound on [0, {}]",
                    net.subsystems[i].id, bmax[i]
                )));
            }
            l = l.min(v);
        }
        lambda[i] = l;
    }
    let mut delta = vec![vec![0.0; n]; n];
    for i in 0..n {
        let wiring = net.wiring(i);
        let fan = match opts.fan_in {
            FanIn::NeighbourCount => wiring.len().max(1) as f64,
            FanIn::Unit => 1.0,
        };
        for (j, _) in wiring {
            let mut d: f64 = 0.0;
            for (pi, mi) in certs[i].modes.iter().enumerate() {
                for (pj, mj) in certs[j].modes.iter().enumerate() {
                    if opts.pairing == Pairing::SameIndex && pi != pj {
                        continue;
                    }
                    let g = mi.rho_int.compose_with_inverse(fan, &mj.alpha)?;
                    let v = g.linear_upper_bound(bmax[j]).ok_or_else(|| {
                        Error::GainExtraction(format!(
                            "gain from {} to {} is not linearly bounded near zero",
                            net.subsystems[j].id, net.subsystems[i].id
                        ))
                    })?;
                    d = d.max(v);
                }
            }
            delta[i][j] = d;
        }
    }
    Ok(SmallGainData { lambda, delta, barrier_max: bmax })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallGainResult {
    pub spectral_radius: f64,
    pub iterations: usize,
    pub irreducible: bool,
    /// Weights with `mu^T(-Lambda + Delta) < 0`, when the test passes.
    pub mu: Option<Vec<f64>>,
    /// `-(mu^T(-Lambda + Delta))`, positive entrywise when `mu` is present.
    pub slack: Vec<f64>,
}

const POWER_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-10;

/// Perron root and vector of a nonnegative matrix by shifted power
/// iteration with Collatz-Wielandt bracketing.
pub fn perron(a: &[Vec<f64>]) -> Result<(f64, Vec<f64>, usize)> {
    let n = a.len();
    if n == 0 {
        return Ok((0.0, vec![], 0));
    }
    let mut shift = a.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    if shift == 0.0 {
        return Ok((0.0, vec![1.0; n], 0));
    }
    let mut v = vec![1.0 / n as f64; n];
    let mut prev = f64::NAN;
    for it in 1..=POWER_ITERS {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut s = shift * v[i];
            for j in 0..n {
                s += a[i][j] * v[j];
            }
            w[i] = s;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = w[i] / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let norm: f64 = w.iter().sum();
        let est = norm - shift;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        let scale = est.abs().max(shift).max(f64::MIN_POSITIVE);
        if (hi - lo) <= POWER_TOL * scale || (est - prev).abs() <= POWER_TOL * scale * 1e-2 {
            let rho = if hi - lo <= POWER_TOL * scale { 0.5 * (hi + lo) - shift } else { est };
            return Ok((rho.max(0.0), v, it));
        }
        prev = est;
        // a shift far above rho makes the gap vanish on unbalanced blocks;
        // any positive shift keeps A + sI primitive, so move it towards rho
        if it % 10 == 0 && lo > 0.0 {
            shift = (0.5 * (hi + lo) - shift).max(1e-3 * shift);
        }
    }
    Err(Error::Numeric(format!("power iteration did not converge in {POWER_ITERS} steps")))
}

fn strongly_connected(delta: &[Vec<f64>]) -> bool {
    delta.len() <= 1 || reachable(delta, 0, true).iter().chain(&reachable(delta, 0, false)).all(|&s| s)
}

fn reachable(a: &[Vec<f64>], from: usize, forward: bool) -> Vec<bool> {
    let n = a.len();
    let mut seen = vec![false; n];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let e = if forward { a[i][j] } else { a[j][i] };
            if e > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

fn components(a: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = a.len();
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let f = reachable(a, i, true);
        let b = reachable(a, i, false);
        let comp: Vec<usize> = (0..n).filter(|&j| f[j] && b[j]).collect();
        for &j in &comp {
            assigned[j] = true;
        }
        out.push(comp);
    }
    out
}

/// `mu^T(-Lambda + Delta)`.
pub fn weighted_columns(sgd: &SmallGainData, mu: &[f64]) -> Vec<f64> {
    let n = sgd.lambda.len();
    (0..n)
        .map(|j| {
            let mut s = -mu[j] * sgd.lambda[j];
            for i in 0..n {
                if i != j {
                    s += mu[i] * sgd.delta[i][j];
                }
            }
            s
        })
        .collect()
}

fn admissible(sgd: &SmallGainData, mu: &[f64]) -> bool {
    mu.iter().all(|&m| m > 0.0 && m.is_finite())
        && weighted_columns(sgd, mu).iter().all(|&c| c < 0.0)
}

pub fn check_small_gain(sgd: &SmallGainData) -> Result<SmallGainResult> {
    let n = sgd.lambda.len();
    if sgd.lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::GainExtraction("decay gains must be positive".into()));
    }
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { sgd.delta[i][j] / sgd.lambda[i] }).collect())
        .collect();
    // per strongly connected component, where each block is irreducible
    let mut rho: f64 = 0.0;
    let mut iterations = 0;
    for comp in components(&a) {
        if comp.len() == 1 {
            continue;
        }
        let block: Vec<Vec<f64>> =
            comp.iter().map(|&i| comp.iter().map(|&j| a[i][j]).collect()).collect();
        let (r, _, it) = perron(&block)?;
        rho = rho.max(r);
        iterations = iterations.max(it);
    }
    let irreducible = strongly_connected(&sgd.delta);
    let mut out =
        SmallGainResult { spectral_radius: rho, iterations, irreducible, mu: None, slack: vec![] };
    if rho >= 1.0 {
        return Ok(out);
    }
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if irreducible && n > 1 {
        // left Perron vector of Delta - Lambda, shifted to be nonnegative
        let c = sgd.lambda.iter().copied().fold(0.0, f64::max);
        let t: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { c - sgd.lambda[i] } else { sgd.delta[j][i] })
                    .collect()
            })
            .collect();
        if let Ok((_, v, _)) = perron(&t) {
            let m = v.iter().copied().fold(f64::INFINITY, f64::min);
            if m > 0.0 {
                candidates.push(v.iter().map(|x| x / m).collect());
            }
        }
    }
    candidates.push(vec![1.0; n]);
    for mu in candidates {
        if admissible(sgd, &mu) {
            out.slack = weighted_columns(sgd, &mu).iter().map(|c| -c).collect();
            out.mu = Some(mu);
            return Ok(out);
        }
    }
    let mut mu = vec![1.0; n];
    for _ in 0..10_000 {
        let cols = weighted_columns(sgd, &mu);
        if cols.iter().all(|&c| c < 0.0) {
            out.slack = cols.iter().map(|c| -c).collect();
            out.mu = Some(mu);
            return Ok(out);
        }
        for (m, c) in mu.iter_mut().zip(&cols) {
            if *c >= 0.0 {
                *m *= 1.1;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCertificate {
    pub mu: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub kappa_hat: f64,
}

/// Weighted-sum network certificate, given admissible weights `mu`.
pub fn compose_certificate(
    certs: &[PseudoCertificate],
    sgd: &SmallGainData,
    mu: &[f64],
) -> Result<NetworkCertificate> {
    let n = certs.len();
    if mu.len() != n || sgd.lambda.len() != n {
        return Err(Error::InvalidInput("weights, gains and certificates differ in length".into()));
    }
    let cols = weighted_columns(sgd, mu);
    if let Some((i, c)) = cols.iter().enumerate().find(|(_, &c)| !(c < 0.0)) {
        return Err(Error::Composition(format!(
            "weights violate the small-gain inequality at column {i} (value {c:e})"
        )));
    }
    let mut gamma = 0.0;
    let mut lambda = 0.0;
    let mut psi = 0.0;
    for (c, &m) in certs.iter().zip(mu) {
        gamma += m * c.modes.iter().map(|x| x.gamma).fold(f64::NEG_INFINITY, f64::max);
        lambda += m * c.modes.iter().map(|x| x.lambda).fold(f64::INFINITY, f64::min);
        psi += m * c.modes.iter().map(|x| x.psi).fold(f64::NEG_INFINITY, f64::max);
    }
    if !(lambda > gamma) {
        return Err(Error::Composition(format!(
            "level condition fails: lambda {lambda} does not exceed gamma {gamma} (deficit {})",
            gamma - lambda
        )));
    }
    let kappa_hat = cols
        .iter()
        .zip(mu)
        .map(|(c, m)| -c / m)
        .fold(f64::INFINITY, f64::min);
    Ok(NetworkCertificate { mu: mu.to_vec(), gamma, lambda, psi, kappa_hat })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub status: Status,
    /// Sampled and enclosed extreme of the weighted barrier sum.
    pub sampled: f64,
    pub enclosed: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectDriftCheck {
    pub status: Status,
    pub points: usize,
    /// Largest sampled value of the network drift left-hand side minus psi.
    pub worst: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbfReport {
    pub status: Status,
    pub subsystems: Vec<VerificationReport>,
    pub gains_hold: bool,
    pub small_gain_slack: f64,
    pub level_condition: bool,
    pub initial: LevelCheck,
    pub unsafe_region: LevelCheck,
    /// Sampled check on the joint state space; absent when it is too large.
    pub direct_drift: Option<DirectDriftCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbfConfig {
    pub verify: VerifyConfig,
    pub gains: GainExtraction,
    pub gain_samples: usize,
    pub joint_max_dim: usize,
    pub joint_max_points: usize,
}

impl Default for CbfConfig {
    fn default() -> Self {
        CbfConfig {
            verify: VerifyConfig::default(),
            gains: GainExtraction::default(),
            gain_samples: 200,
            joint_max_dim: 3,
            joint_max_points: 200_000,
        }
    }
}

fn level_extreme(
    sub: &Subsystem,
    cert: &PseudoCertificate,
    region: &Region,
    points: usize,
    upper: bool,
) -> Option<(f64, f64)> {
    let m = per_dim(points, sub.n());
    let mut sampled = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut enclosed = sampled;
    for b in region.boxes() {
        let axes: Vec<Vec<f64>> = b.0.iter().map(|i| linspace(i.lo, i.hi, m)).collect();
        for bar in cert.barriers() {
            for x in tensor(&axes) {
                let v = bar.eval_unchecked(&x);
                sampled = if upper { sampled.max(v) } else { sampled.min(v) };
            }
            for (lo, hi) in cells(&axes) {
                let (a, c) = bar.eval_interval(&lo, &hi);
                enclosed = if upper { enclosed.max(c) } else { enclosed.min(a) };
            }
        }
    }
    if region.is_empty() {
        None
    } else {
        Some((sampled, enclosed))
    }
}

fn level_check(
    net: &Network,
    certs: &[PseudoCertificate],
    tasks: &[TaskRegions],
    mu: &[f64],
    threshold: f64,
    initial: bool,
    points: usize,
) -> LevelCheck {
    let mut sampled = 0.0;
    let mut enclosed = 0.0;
    for i in 0..net.len() {
        let region = if initial { &tasks[i].initial } else { &tasks[i].unsafe_region };
        if let Some((s, e)) = level_extreme(&net.subsystems[i], &certs[i], region, points, initial) {
            sampled += mu[i] * s;
            enclosed += mu[i] * e;
        } else {
            return LevelCheck { status: Status::Verified, sampled: 0.0, enclosed: 0.0, threshold };
        }
    }
    let status = if initial {
        if enclosed <= threshold {
            Status::Verified
        } else if sampled > threshold {
            Status::Falsified
        } else {
            Status::Inconclusive
        }
    } else if enclosed >= threshold {
        Status::Verified
    } else if sampled < threshold {
        Status::Falsified
    } else {
        Status::Inconclusive
    };
    LevelCheck { status, sampled, enclosed, threshold }
}

fn gains_hold(
    net: &Network,
    certs: &[PseudoCertificate],
    sgd: &SmallGainData,
    opts: &GainExtraction,
    samples: usize,
) -> bool {
    for (i, c) in certs.iter().enumerate() {
        let smax = if sgd.barrier_max[i].is_finite() {
            sgd.barrier_max[i]
        } else {
            barrier_max(&net.subsystems[i], c, 2001)
        };
        for m in &c.modes {
            for s in linspace(0.0, smax, samples) {
                if m.kappa.eval(s) < sgd.lambda[i] * s * (1.0 - 1e-12) {
                    return false;
                }
            }
        }
        let wiring = net.wiring(i);
        let fan = match opts.fan_in {
            FanIn::NeighbourCount => wiring.len().max(1) as f64,
            FanIn::Unit => 1.0,
        };
        for (j, _) in wiring {
            let smax_j = if sgd.barrier_max[j].is_finite() {
                sgd.barrier_max[j]
            } else {
                barrier_max(&net.subsystems[j], &certs[j], 2001)
            };
            for (pi, mi) in c.modes.iter().enumerate() {
                for (pj, mj) in certs[j].modes.iter().enumerate() {
                    if opts.pairing == Pairing::SameIndex && pi != pj {
                        continue;
                    }
                    for s in linspace(0.0, smax_j, samples) {
                        let Ok(inv) = mj.alpha.inverse(s) else { return false };
                        if mi.rho_int.eval(fan * inv) > sgd.delta[i][j] * s * (1.0 + 1e-9) + 1e-300 {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

struct JointTerms {
    sub_exprs: Vec<Vec<DriftExpression>>,
    barriers: Vec<Vec<Polynomial>>,
    controllers: Vec<Vec<ModeController>>,
}

fn disturbance_value(sub: &Subsystem, x: &[f64], w: &[f64], out: &mut Vec<f64>) {
    out.clear();
    match &sub.disturbance_source {
        DisturbanceSource::Zero => out.extend(std::iter::repeat(0.0).take(sub.disturbance_vars.len())),
        DisturbanceSource::Constant { value } => out.extend_from_slice(value),
        DisturbanceSource::MeanSineOfInternalInputs => {
            let m = if w.is_empty() {
                0.0
            } else {
                w.iter().map(|wk| (wk - x[0]).sin()).sum::<f64>() / w.len() as f64
            };
            out.push(m);
        }
    }
}

/// Network drift check on a joint grid, using each subsystem's runtime
/// controller and the wired internal inputs.
fn direct_drift(
    net: &Network,
    certs: &[PseudoCertificate],
    ncert: &NetworkCertificate,
    cfg: &CbfConfig,
) -> Result<Option<DirectDriftCheck>> {
    let dims: usize = net.subsystems.iter().map(|s| s.n()).sum();
    if dims == 0 || dims > cfg.joint_max_dim {
        return Ok(None);
    }
    let mut terms = JointTerms { sub_exprs: vec![], barriers: vec![], controllers: vec![] };
    for (s, c) in net.subsystems.iter().zip(certs) {
        let bars = c.barriers();
        let zero = ScalarGainFunction::Zero;
        let mut ex = Vec::new();
        for p in 0..s.num_modes() {
            ex.push(assemble_drift_condition(
                s,
                p,
                &bars,
                &DriftParams { kappa: &zero, rho_int: &zero, psi: 0.0 },
            )?);
        }
        terms.sub_exprs.push(ex);
        terms.barriers.push(bars);
        terms.controllers.push(mode_controllers(s, c, &cfg.verify)?);
    }
    let mut m = 2usize;
    while ((m + 1) as f64).powi(dims as i32) <= cfg.joint_max_points as f64 && m < 2001 {
        m += 1;
    }
    let joint_box = BoxRegion(net.subsystems.iter().flat_map(|s| s.state_box.0.clone()).collect());
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = Vec::new();
    let mut points = 0;
    let (mut w, mut d, mut u, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for flat in joint_box.grid(m) {
        points += 1;
        let mut states = Vec::with_capacity(net.len());
        let mut off = 0;
        for s in &net.subsystems {
            states.push(flat[off..off + s.n()].to_vec());
            off += s.n();
        }
        let mut total = 0.0;
        for (i, s) in net.subsystems.iter().enumerate() {
            net.internal_input(i, &states, &mut w);
            disturbance_value(s, &states[i], &w, &mut d);
            let mut best = f64::NEG_INFINITY;
            for p in 0..s.num_modes() {
                terms.controllers[i][p].input(&states[i], &mut u);
                z.clear();
                z.extend_from_slice(&states[i]);
                z.extend_from_slice(&u);
                z.extend_from_slice(&w);
                z.extend_from_slice(&d);
                let v = terms.sub_exprs[i][p].eval(&z)
                    + ncert.kappa_hat * terms.barriers[i][p].eval_unchecked(&states[i]);
                best = best.max(v);
            }
            total += ncert.mu[i] * best;
        }
        let v = total - ncert.psi;
        if v > worst {
            worst = v;
            worst_point = flat.clone();
        }
    }
    let status = if worst > 0.0 { Status::Falsified } else { Status::Verified };
    Ok(Some(DirectDriftCheck { status, points, worst, worst_point }))
}

/// Checks the network certificate through the composition chain and, for
/// small networks, directly on the joint state space.
pub fn verify_cbf(
    net: &Network,
    certs: &[PseudoCertificate],
    tasks: &[TaskRegions],
    sgd: &SmallGainData,
    ncert: &NetworkCertificate,
    cfg: &CbfConfig,
) -> Result<CbfReport> {
    let n = net.len();
    if certs.len() != n || tasks.len() != n {
        return Err(Error::InvalidInput("one certificate and task per subsystem required".into()));
    }
    let mut subsystems = Vec::new();
    for i in 0..n {
        subsystems.push(verify_cpbf(&net.subsystems[i], &certs[i], &tasks[i], &cfg.verify)?);
    }
    let gains = gains_hold(net, certs, sgd, &cfg.gains, cfg.gain_samples);
    let slack = weighted_columns(sgd, &ncert.mu).iter().map(|c| -c).fold(f64::INFINITY, f64::min);
    let initial = level_check(net, certs, tasks, &ncert.mu, ncert.gamma, true, cfg.verify.points_per_dim);
    let unsafe_region =
        level_check(net, certs, tasks, &ncert.mu, ncert.lambda, false, cfg.verify.points_per_dim);
    let direct = direct_drift(net, certs, ncert, cfg)?;
    let mut status = subsystems.iter().fold(Status::Verified, |s, r| s.combine(r.status));
    status = status.combine(initial.status).combine(unsafe_region.status);
    if !gains || !(slack > 0.0) || !(ncert.lambda > ncert.gamma) {
        status = Status::Falsified;
    }
    if let Some(d) = &direct {
        status = status.combine(d.status);
    }
    Ok(CbfReport {
        status,
        subsystems,
        gains_hold: gains,
        small_gain_slack: slack,
        level_condition: ncert.lambda > ncert.gamma,
        initial,
        unsafe_region,
        direct_drift: direct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_network() {
        let sgd = SmallGainData {
            lambda: vec![1.0; 3],
            delta: vec![vec![0.0; 3]; 3],
            barrier_max: vec![1.0; 3],
        };
        let r = check_small_gain(&sgd).unwrap();
        assert_eq!(r.spectral_radius, 0.0);
        assert_eq!(r.mu.unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn two_by_two_violation() {
        let sgd = SmallGainData {
            lambda: vec![1.0, 1.0],
            delta: vec![vec![0.0, 1.5], vec![1.5, 0.0]],
            barrier_max: vec![1.0; 2],
        };
        let r = check_small_gain(&sgd).unwrap();
        assert!((r.spectral_radius - 1.5).abs() < 1e-9);
        assert!(r.mu.is_none());
    }

    #[test]
    fn reducible_chain_gets_weights() {
        // 0 -> 1 -> 2 only: reducible, all-ones fails, rebalancing succeeds
        let sgd = SmallGainData {
            lambda: vec![1.0, 1.0, 1.0],
            delta: vec![vec![0.0, 0.0, 0.0], vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]],
            barrier_max: vec![1.0; 3],
        };
        let r = check_small_gain(&sgd).unwrap();
        assert!(!r.irreducible);
        assert_eq!(r.spectral_radius, 0.0);
        let mu = r.mu.unwrap();
        assert!(weighted_columns(&sgd, &mu).iter().all(|&c| c < 0.0));
    }

    #[test]
    fn singleton_composition() {
        use crate::catalog::kuramoto_reference_certificates;
        let c = kuramoto_reference_certificates("s")[0].clone();
        let sgd = SmallGainData { lambda: vec![5e-5], delta: vec![vec![0.0]], barrier_max: vec![1.0] };
        let nc = compose_certificate(std::slice::from_ref(&c), &sgd, &[1.0]).unwrap();
        assert_eq!((nc.gamma, nc.lambda, nc.psi), (3.2, 4300.0, 52.0));
        assert_eq!(nc.kappa_hat, 5e-5);
    }
}
