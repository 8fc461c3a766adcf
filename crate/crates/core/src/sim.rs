//! Monte Carlo simulation of the closed-loop network: Euler-Maruyama with
//! Poisson jumps and per-step mode switching, label traces and empirical
//! satisfaction estimates.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::ModeController;
use crate::dfa::{LabelRegion, Labeling, SpecTask, SwitchLocation};
use crate::error::{Error, Result};
use crate::model::{validation_points, DisturbanceSource, Network, Region};
use crate::poly::Polynomial;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchMethod {
    /// One categorical draw per step with stay probability `1 + q_pp dt`.
    Categorical,
    /// Uniformization against a rate bound: at most one candidate event per
    /// step, accepted with probability `q_pp' / rate_bound`.
    Thinning { rate_bound: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub method: SwitchMethod,
    /// Keep every k-th state of stored traces.
    pub decimation: usize,
    /// Number of leading trajectories whose state paths are stored.
    pub keep_paths: usize,
    /// Stop a trajectory once the complement automaton accepts.
    pub stop_on_violation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 5.0,
            trajectories: 1000,
            seed: 0,
            method: SwitchMethod::Categorical,
            decimation: 10,
            keep_paths: 10,
            stop_on_violation: true,
        }
    }
}

/// Runtime controllers: none, one set for the whole run, or one set per
/// partition of the decomposition, selected through the switching automaton.
#[derive(Clone, Debug)]
pub enum Policy {
    /// Mode feedback laws of the model where present, zero input otherwise.
    Open,
    /// `[subsystem][mode]`.
    Static(Vec<Vec<ModeController>>),
    /// `[partition][subsystem][mode]`.
    PerPartition(Vec<Vec<Vec<ModeController>>>),
}

#[derive(Clone, Debug)]
pub enum InitialStates {
    Fixed(Vec<Vec<f64>>),
    /// Uniform in each subsystem's region, independently.
    Uniform(Vec<Region>),
}

#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub net: Network,
    pub labeling: Option<Labeling>,
    pub spec: Option<SpecTask>,
    pub policy: Policy,
    pub initial: InitialStates,
    pub initial_modes: Vec<usize>,
    /// Joint set whose visits are flagged separately from automaton
    /// acceptance.
    pub unsafe_set: Option<LabelRegion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: Vec<f64>,
    pub modes: Vec<usize>,
    pub label: Option<String>,
    pub automaton: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub index: usize,
    /// Run-length encoded label word.
    pub labels: Vec<String>,
    pub reached_unsafe: bool,
    pub accepted: bool,
    pub steps: usize,
    pub path: Vec<Sample>,
    /// Time spent in each mode, per subsystem.
    #[serde(skip)]
    occupancy: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub count: usize,
    pub trials: usize,
    pub frequency: f64,
    pub lo: f64,
    pub hi: f64,
    pub half_width: f64,
}

/// Wilson score interval at multiplier `z`.
pub fn wilson(count: usize, trials: usize, z: f64) -> Estimate {
    if trials == 0 {
        return Estimate { count, trials, frequency: 0.0, lo: 0.0, hi: 1.0, half_width: 0.5 };
    }
    let n = trials as f64;
    let p = count as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    Estimate {
        count,
        trials,
        frequency: p,
        lo: (centre - half).max(0.0),
        hi: (centre + half).min(1.0),
        half_width: half,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub trajectories: Vec<Trajectory>,
    pub unsafe_frequency: Estimate,
    pub violation_frequency: Estimate,
    /// Fraction of simulated time per mode, per subsystem.
    pub mode_occupancy: Vec<Vec<f64>>,
    pub dt: f64,
    pub horizon: f64,
}

fn random_in(region: &Region, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let vols: Vec<f64> =
        region.boxes().iter().map(|b| b.0.iter().map(|i| i.width()).product::<f64>()).collect();
    let total: f64 = vols.iter().sum();
    let mut k = 0;
    if region.boxes().len() > 1 {
        let mut r = rng.random::<f64>() * total;
        while k + 1 < vols.len() && r >= vols[k] {
            r -= vols[k];
            k += 1;
        }
    }
    region.boxes()[k]
        .0
        .iter()
        .map(|i| if i.width() > 0.0 { rng.random_range(i.lo..i.hi) } else { i.lo })
        .collect()
}

fn check_step(net: &Network, cfg: &SimConfig) -> Result<()> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite() && cfg.horizon > 0.0) {
        return Err(Error::StepSize(format!("dt = {} and horizon = {} must be positive", cfg.dt, cfg.horizon)));
    }
    for s in &net.subsystems {
        let rate = s.max_exit_rate_on(&validation_points(&s.state_box));
        if cfg.dt * rate > 0.1 {
            return Err(Error::StepSize(format!(
                "{}: dt * max exit rate = {:.3} exceeds 0.1",
                s.id,
                cfg.dt * rate
            )));
        }
        if let SwitchMethod::Thinning { rate_bound } = cfg.method {
            if rate > rate_bound || cfg.dt * rate_bound > 1.0 {
                return Err(Error::StepSize(format!(
                    "{}: thinning bound {rate_bound} must dominate the exit rate {rate} and satisfy dt * bound <= 1",
                    s.id
                )));
            }
        }
    }
    Ok(())
}

struct Runner<'a> {
    cl: &'a ClosedLoop,
    cfg: &'a SimConfig,
    /// Alphabet index of each labeling symbol, when an automaton is present.
    symbol_map: Vec<usize>,
    symbols: Vec<String>,
    open: Vec<Vec<ModeController>>,
    /// Output maps feeding each subsystem, in wiring order.
    links: Vec<Vec<(usize, &'a [Polynomial])>>,
    jumps: Vec<Vec<Option<Poisson<f64>>>>,
}

impl<'a> Runner<'a> {
    fn new(cl: &'a ClosedLoop, cfg: &'a SimConfig) -> Result<Runner<'a>> {
        let net = &cl.net;
        let symbols = cl.labeling.as_ref().map(|l| l.symbols()).unwrap_or_default();
        let symbol_map = match (&cl.spec, &cl.labeling) {
            (Some(spec), Some(_)) => {
                symbols.iter().map(|s| spec.dfa.symbol_index(s)).collect::<Result<Vec<_>>>()?
            }
            (Some(_), None) => {
                return Err(Error::InvalidInput("an automaton needs a labeling".into()))
            }
            _ => vec![],
        };
        match &cl.policy {
            Policy::PerPartition(c) => {
                let spec = cl
                    .spec
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("per-partition control needs an automaton".into()))?;
                if c.len() != spec.partitions.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} controller sets for {} partitions",
                        c.len(),
                        spec.partitions.len()
                    )));
                }
                for set in c {
                    check_set(net, set)?;
                }
            }
            Policy::Static(set) => check_set(net, set)?,
            Policy::Open => {}
        }
        let open = net
            .subsystems
            .iter()
            .map(|s| {
                s.modes
                    .iter()
                    .map(|m| match &m.controller {
                        Some(l) => ModeController::Feedback(l.clone()),
                        None => ModeController::Fixed(vec![0.0; s.input_vars.len()]),
                    })
                    .collect()
            })
            .collect();
        if cl.initial_modes.len() != net.len()
            || cl.initial_modes.iter().zip(&net.subsystems).any(|(&p, s)| p >= s.num_modes())
        {
            return Err(Error::InvalidInput("one valid initial mode per subsystem required".into()));
        }
        let links = (0..net.len())
            .map(|j| {
                let target = &net.subsystems[j].id;
                net.subsystems
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .filter_map(|(i, s)| s.outputs.get(target).map(|h| (i, h.as_slice())))
                    .collect()
            })
            .collect();
        let jumps = net
            .subsystems
            .iter()
            .map(|s| {
                s.poisson_rates
                    .iter()
                    .map(|&r| {
                        if r <= 0.0 {
                            return Ok(None);
                        }
                        Poisson::new(r * cfg.dt)
                            .map(Some)
                            .map_err(|e| Error::StepSize(format!("Poisson rate: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Runner { cl, cfg, symbol_map, symbols, open, links, jumps })
    }

    fn controllers(&self, loc: Option<usize>, last_partition: Option<usize>) -> &[Vec<ModeController>] {
        match &self.cl.policy {
            Policy::Open => &self.open,
            Policy::Static(s) => s,
            Policy::PerPartition(all) => {
                let spec = self.cl.spec.as_ref().unwrap();
                match loc.and_then(|l| spec.switching.partition_at(l)).or(last_partition) {
                    Some(k) => &all[k],
                    None => &self.open,
                }
            }
        }
    }

    fn label_index(&self, states: &[Vec<f64>]) -> Result<Option<usize>> {
        match &self.cl.labeling {
            None => Ok(None),
            Some(l) => l.label_index(states).map(Some),
        }
    }

    fn run(&self, index: usize) -> Result<Trajectory> {
        let net = &self.cl.net;
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let mut states: Vec<Vec<f64>> = match &self.cl.initial {
            InitialStates::Fixed(x) => x.clone(),
            InitialStates::Uniform(r) => r.iter().map(|r| random_in(r, &mut rng)).collect(),
        };
        let mut modes = self.cl.initial_modes.clone();
        let spec = self.cl.spec.as_ref();
        let mut q = spec.map(|s| s.dfa.initial);
        let mut loc = spec.map(|s| s.switching.initial());
        let mut last_partition = None;
        let mut accepted = false;
        let mut reached_unsafe = false;
        let mut labels: Vec<String> = Vec::new();
        let mut last_label: Option<usize> = None;
        let keep = index < cfg.keep_paths;
        let mut path = Vec::new();
        let steps = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
        let mut occupancy: Vec<Vec<f64>> = net.subsystems.iter().map(|s| vec![0.0; s.num_modes()]).collect();
        let sqdt = cfg.dt.sqrt();
        let (mut w, mut u, mut z) = (Vec::new(), Vec::new(), Vec::new());
        let mut taken = 0;

        let mut observe = |states: &[Vec<f64>],
                           q: &mut Option<usize>,
                           loc: &mut Option<usize>,
                           last_partition: &mut Option<usize>,
                           accepted: &mut bool,
                           reached_unsafe: &mut bool|
         -> Result<Option<usize>> {
            if let Some(us) = &self.cl.unsafe_set {
                if us.contains(states) {
                    *reached_unsafe = true;
                }
            }
            let li = self.label_index(states)?;
            if let Some(l) = li {
                if last_label != Some(l) {
                    labels.push(self.symbols[l].clone());
                    last_label = Some(l);
                    if let Some(spec) = spec {
                        let sigma = self.symbol_map[l];
                        let nq = spec.dfa.step(q.unwrap(), sigma);
                        *q = Some(nq);
                        if spec.dfa.accepting.contains(&nq) {
                            *accepted = true;
                        }
                        let nl = spec.switching.step(loc.unwrap(), sigma);
                        if let SwitchLocation::Task { partition } = spec.switching.locations[nl] {
                            *last_partition = Some(partition);
                        }
                        *loc = Some(nl);
                    }
                }
            }
            Ok(li)
        };

        let li = observe(&states, &mut q, &mut loc, &mut last_partition, &mut accepted, &mut reached_unsafe)?;
        if keep {
            path.push(self.sample(0.0, &states, &modes, li, q));
        }
        let mut next: Vec<Vec<f64>> = states.clone();
        for step in 1..=steps {
            if accepted && cfg.stop_on_violation {
                break;
            }
            let ctrl = self.controllers(loc, last_partition);
            for (i, s) in net.subsystems.iter().enumerate() {
                let p = modes[i];
                occupancy[i][p] += cfg.dt;
                let x = &states[i];
                w.clear();
                for &(src, h) in &self.links[i] {
                    w.extend(h.iter().map(|hk| hk.eval_unchecked(&states[src])));
                }
                ctrl[i][p].input(x, &mut u);
                z.clear();
                z.extend_from_slice(x);
                z.extend_from_slice(&u);
                z.extend_from_slice(&w);
                match &s.disturbance_source {
                    DisturbanceSource::Zero => z.extend(std::iter::repeat(0.0).take(s.disturbance_vars.len())),
                    DisturbanceSource::Constant { value } => z.extend_from_slice(value),
                    DisturbanceSource::MeanSineOfInternalInputs => {
                        let m = if w.is_empty() {
                            0.0
                        } else {
                            w.iter().map(|wk| (wk - x[0]).sin()).sum::<f64>() / w.len() as f64
                        };
                        z.push(m);
                    }
                }
                let mode = &s.modes[p];
                let xn = &mut next[i];
                for k in 0..s.n() {
                    xn[k] = x[k] + mode.drift[k].eval_unchecked(&z) * cfg.dt;
                }
                let b = mode.diffusion.first().map_or(0, |r| r.len());
                for col in 0..b {
                    let g: f64 = rng.sample::<f64, _>(StandardNormal) * sqdt;
                    for k in 0..s.n() {
                        xn[k] += mode.diffusion[k][col].eval_unchecked(x) * g;
                    }
                }
                for (j, dist) in self.jumps[i].iter().enumerate() {
                    let Some(dist) = dist else { continue };
                    let jumps = dist.sample(&mut rng);
                    if jumps > 0.0 {
                        for k in 0..s.n() {
                            xn[k] += mode.reset[k][j].eval_unchecked(x) * jumps;
                        }
                    }
                }
                s.state_box.clamp(xn);
                modes[i] = self.switch(s, p, x, &mut rng)?;
            }
            std::mem::swap(&mut states, &mut next);
            taken = step;
            let li = observe(&states, &mut q, &mut loc, &mut last_partition, &mut accepted, &mut reached_unsafe)?;
            if keep && (step % cfg.decimation.max(1) == 0 || step == steps || accepted) {
                path.push(self.sample(step as f64 * cfg.dt, &states, &modes, li, q));
            }
        }
        Ok(Trajectory { index, labels, reached_unsafe, accepted, steps: taken, path, occupancy })
    }

    fn switch(&self, s: &crate::model::Subsystem, p: usize, x: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
        let pm = s.num_modes();
        if pm == 1 {
            return Ok(p);
        }
        let row = s.rate_row(p, x);
        let dt = self.cfg.dt;
        match self.cfg.method {
            SwitchMethod::Categorical => {
                let stay = 1.0 + row[p] * dt;
                if stay < 0.0 {
                    return Err(Error::StepSize(format!(
                        "{}: stay probability {stay} is negative at {x:?}",
                        s.id
                    )));
                }
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (q, &rate) in row.iter().enumerate() {
                    if q == p {
                        continue;
                    }
                    acc += rate * dt;
                    if r < acc {
                        return Ok(q);
                    }
                }
                Ok(p)
            }
            SwitchMethod::Thinning { rate_bound } => {
                let r: f64 = rng.random();
                if r >= rate_bound * dt {
                    return Ok(p);
                }
                let v: f64 = rng.random::<f64>() * rate_bound;
                let mut acc = 0.0;
                for (q, &rate) in row.iter().enumerate() {
                    if q == p {
                        continue;
                    }
                    acc += rate;
                    if v < acc {
                        return Ok(q);
                    }
                }
                Ok(p)
            }
        }
    }

    fn sample(&self, t: f64, states: &[Vec<f64>], modes: &[usize], li: Option<usize>, q: Option<usize>) -> Sample {
        Sample {
            t,
            state: states.iter().flatten().copied().collect(),
            modes: modes.to_vec(),
            label: li.map(|l| self.symbols[l].clone()),
            automaton: match (q, &self.cl.spec) {
                (Some(q), Some(s)) => Some(s.dfa.locations[q].clone()),
                _ => None,
            },
        }
    }
}

fn check_set(net: &Network, set: &[Vec<ModeController>]) -> Result<()> {
    if set.len() != net.len() || set.iter().zip(&net.subsystems).any(|(c, s)| c.len() != s.num_modes()) {
        return Err(Error::InvalidInput("one controller per subsystem and mode required".into()));
    }
    Ok(())
}

/// Simulates `cfg.trajectories` independent runs. Each run draws from its
/// own stream of the seeded generator, so results do not depend on
/// scheduling.
pub fn simulate(cl: &ClosedLoop, cfg: &SimConfig) -> Result<TraceReport> {
    check_step(&cl.net, cfg)?;
    let runner = Runner::new(cl, cfg)?;
    let trajectories: Vec<Trajectory> =
        (0..cfg.trajectories).into_par_iter().map(|k| runner.run(k)).collect::<Result<_>>()?;
    let unsafe_count = trajectories.iter().filter(|t| t.reached_unsafe).count();
    let violations = trajectories.iter().filter(|t| t.accepted).count();
    let mut occ: Vec<Vec<f64>> = cl.net.subsystems.iter().map(|s| vec![0.0; s.num_modes()]).collect();
    for t in &trajectories {
        for (a, b) in occ.iter_mut().zip(&t.occupancy) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    for row in occ.iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    let n = trajectories.len();
    Ok(TraceReport {
        trajectories,
        unsafe_frequency: wilson(unsafe_count, n, 1.96),
        violation_frequency: wilson(violations, n, 1.96),
        mode_occupancy: occ,
        dt: cfg.dt,
        horizon: cfg.horizon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Satisfaction {
    pub violation: Estimate,
    pub satisfaction: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Runs every trace's label word through the complement automaton.
pub fn estimate_satisfaction(report: &TraceReport, spec: &SpecTask) -> Result<Satisfaction> {
    let mut hits = 0;
    for t in &report.trajectories {
        let mut q = spec.dfa.initial;
        let mut acc = spec.dfa.accepting.contains(&q);
        for l in &t.labels {
            q = spec.dfa.step(q, spec.dfa.symbol_index(l)?);
            acc |= spec.dfa.accepting.contains(&q);
        }
        if acc {
            hits += 1;
        }
    }
    let v = wilson(hits, report.trajectories.len(), 1.96);
    Ok(Satisfaction { violation: v, satisfaction: 1.0 - v.frequency, lo: 1.0 - v.hi, hi: 1.0 - v.lo })
}

/// Writes the stored state paths as CSV: time, joint state, mode tuple,
/// label and automaton location.
pub fn write_traces_csv(report: &TraceReport, net: &Network, out: &mut dyn Write) -> Result<()> {
    let vars = net.joint_state_vars();
    write!(out, "trajectory,t")?;
    for v in &vars {
        write!(out, ",{v}")?;
    }
    writeln!(out, ",modes,label,automaton")?;
    for t in &report.trajectories {
        for s in &t.path {
            write!(out, "{},{}", t.index, s.t)?;
            for x in &s.state {
                write!(out, ",{x}")?;
            }
            let modes: Vec<String> = s.modes.iter().map(|m| m.to_string()).collect();
            writeln!(
                out,
                ",{},{},{}",
                modes.join("|"),
                s.label.as_deref().unwrap_or(""),
                s.automaton.as_deref().unwrap_or("")
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_frequency() {
        let e = wilson(30, 100, 1.96);
        assert!(e.lo < 0.3 && 0.3 < e.hi);
        let z = wilson(0, 10_000, 1.96);
        assert_eq!(z.lo, 0.0);
        assert!(z.hi < 5e-4);
    }
}
