//! Project files and the end-to-end pipeline: decomposition, certificates,
//! small-gain composition, probability bounds and optional simulation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{kuramoto_network, KuramotoParams};
use crate::certificate::{
    mode_controllers, verify_cpbf, ModeController, PseudoCertificate, Status, TaskRegions, VerificationReport,
    VerifyConfig,
};
use crate::compose::{
    check_small_gain, compose_certificate, extract_gains, verify_cbf, CbfConfig, CbfReport,
    GainExtraction, NetworkCertificate, SmallGainData,
};
use crate::dfa::{Dfa, DfaSpec, LabelRegion, Labeling, RunEnumeration, SpecTask};
use crate::error::{Error, Result};
use crate::model::{validate, InputSet, Network, Region, Subsystem};
use crate::probability::{combine_runs, reach_bound, BoundInput, Branch, CombinedBound};
use crate::sim::{simulate, ClosedLoop, Estimate, InitialStates, Policy, SimConfig, TraceReport};
use crate::synthesis::{synthesize_cpbf, SynthesisConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KuramotoSpec {
    pub oscillators: usize,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default = "default_pair")]
    pub omega: [f64; 2],
    #[serde(default = "default_pair")]
    pub diffusion: [f64; 2],
    #[serde(default = "default_pair")]
    pub jump: [f64; 2],
    #[serde(default = "default_jump_rate")]
    pub jump_rate: f64,
    #[serde(default = "default_rates")]
    pub rates: [[f64; 2]; 2],
    pub input: InputSet,
}

fn default_coupling() -> f64 {
    0.001
}
fn default_pair() -> [f64; 2] {
    [0.1, 0.12]
}
fn default_jump_rate() -> f64 {
    0.1
}
fn default_rates() -> [[f64; 2]; 2] {
    [[-0.9, 0.9], [0.8, -0.8]]
}

impl KuramotoSpec {
    pub fn params(&self) -> KuramotoParams {
        KuramotoParams {
            oscillators: self.oscillators,
            coupling: self.coupling,
            omega: self.omega,
            diffusion: self.diffusion,
            jump: self.jump,
            jump_rate: self.jump_rate,
            rates: self.rates,
            input: self.input.clone(),
        }
    }
}

/// Either an explicit list of subsystems or a homogeneous all-to-all
/// Kuramoto network expanded from its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    Explicit { subsystems: Vec<Subsystem> },
    Kuramoto(KuramotoSpec),
}

impl NetworkSpec {
    pub fn build(&self) -> Network {
        match self {
            NetworkSpec::Explicit { subsystems } => Network { subsystems: subsystems.clone() },
            NetworkSpec::Kuramoto(k) => kuramoto_network(&k.params()),
        }
    }

    /// Subsystems are identical up to their names and wiring order.
    pub fn homogeneous(&self) -> bool {
        matches!(self, NetworkSpec::Kuramoto(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutomatonSpec {
    pub dfa: DfaSpec,
    /// The automaton accepts the specification itself and must be
    /// complemented before decomposition.
    #[serde(default)]
    pub complement: bool,
    #[serde(default)]
    pub enumeration: Option<RunEnumeration>,
}

/// Certificates of one partition, keyed by `"q,q'"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCertificates {
    pub partition: String,
    /// One certificate shared by every subsystem.
    #[serde(default)]
    pub homogeneous: bool,
    pub subsystems: Vec<PseudoCertificate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub partitions: Vec<PartitionCertificates>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppliedCheck {
    /// A falsified supplied certificate stops the pipeline.
    #[default]
    Gate,
    /// Verification results are reported without stopping the pipeline.
    Report,
    Skip,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CertificateSource {
    #[default]
    Synthesize,
    Supplied {
        #[serde(default)]
        bundle: Option<CertificateBundle>,
        /// Path to a bundle file, relative to the project file.
        #[serde(default)]
        path: Option<String>,
        #[serde(default)]
        verify: SuppliedCheck,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainsSpec {
    pub extraction: GainExtraction,
    /// Weights to use instead of the ones found by the small-gain check.
    pub mu: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkCheck {
    /// Only when the joint state space is small enough for the direct check.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    #[serde(default)]
    pub config: SimConfig,
    /// Start labels to simulate from; all of them when absent.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub shsbarrier_schema: u32,
    #[serde(default)]
    pub name: String,
    pub network: NetworkSpec,
    pub labeling: Labeling,
    pub automaton: AutomatonSpec,
    pub horizon: f64,
    #[serde(default)]
    pub certificates: CertificateSource,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub verification: VerifyConfig,
    #[serde(default)]
    pub gains: GainsSpec,
    #[serde(default)]
    pub network_check: NetworkCheck,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    /// Required lower bound on the satisfaction probability of every start
    /// label.
    #[serde(default)]
    pub target: Option<f64>,
}

impl Project {
    pub fn load(path: &Path) -> Result<Project> {
        let text = std::fs::read_to_string(path)?;
        let mut p: Project = serde_json::from_str(&text)?;
        if p.shsbarrier_schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                p.shsbarrier_schema
            )));
        }
        if let CertificateSource::Supplied { bundle, path: Some(rel), .. } = &mut p.certificates {
            if bundle.is_none() {
                let base = path.parent().unwrap_or(Path::new("."));
                let text = std::fs::read_to_string(base.join(rel.as_str()))?;
                *bundle = Some(serde_json::from_str(&text)?);
            }
        }
        Ok(p)
    }

    /// Applies command-line overrides.
    pub fn override_with(&mut self, seed: Option<u64>, strict: bool) {
        if let Some(s) = seed {
            self.synthesis.seed = s;
            if let Some(sim) = &mut self.simulation {
                sim.config.seed = s;
            }
        }
        if strict {
            self.verification.strict = true;
            self.synthesis.verify.strict = true;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Decompose,
    Certificates,
    Gains,
    Compose,
    Bounds,
    Simulate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Validate,
        Stage::Decompose,
        Stage::Certificates,
        Stage::Gains,
        Stage::Compose,
        Stage::Bounds,
        Stage::Simulate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Decompose => "decompose",
            Stage::Certificates => "certificates",
            Stage::Gains => "gains",
            Stage::Compose => "compose",
            Stage::Bounds => "bounds",
            Stage::Simulate => "simulate",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub partition: String,
    pub triples: Vec<String>,
    pub initial_symbols: Vec<String>,
    pub unsafe_symbols: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub runs: Vec<Vec<String>>,
    pub truncated: bool,
    pub partitions: Vec<PartitionSummary>,
    pub switching_locations: usize,
    pub switching_transitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub iterations: usize,
    pub counterexamples: usize,
    pub kappa_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemCertificate {
    pub subsystem: String,
    pub certificate: PseudoCertificate,
    pub regions: TaskRegions,
    #[serde(default)]
    pub synthesis: Option<SynthesisSummary>,
    #[serde(default)]
    pub verification: Option<VerificationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCertificateReport {
    pub partition: String,
    pub source: String,
    /// Number of subsystems sharing the listed certificate; one entry is
    /// listed for homogeneous networks.
    pub replicated: usize,
    pub subsystems: Vec<SubsystemCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub partition: String,
    pub lambda_hat: Vec<f64>,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Full matrix for networks of at most 20 subsystems.
    #[serde(default)]
    pub delta: Option<Vec<Vec<f64>>>,
    pub spectral_radius: f64,
    pub mu: Vec<f64>,
    pub small_gain_slack: Vec<f64>,
    pub certificate: NetworkCertificate,
    #[serde(default)]
    pub network_check: Option<CbfReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementBound {
    pub element: String,
    pub partition: String,
    pub delta: f64,
    /// Absent when the partition has no unsafe region.
    pub branch: Option<Branch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub label: String,
    pub violation: Estimate,
    pub analytic_violation: f64,
    /// Empirical frequency minus three half-widths stays below the bound.
    pub consistent: bool,
    pub mode_occupancy: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub shsbarrier_schema: u32,
    pub project: String,
    pub stages: Vec<String>,
    pub validation: Vec<String>,
    pub decomposition: Option<DecompositionReport>,
    pub certificates: Vec<PartitionCertificateReport>,
    pub composition: Vec<CompositionReport>,
    pub elements: Vec<ElementBound>,
    pub satisfaction: Vec<CombinedBound>,
    /// Start labels whose first step already violates the specification.
    pub immediate_violation: Vec<String>,
    pub simulation: Vec<SimulationSummary>,
    pub overall_satisfaction: Option<f64>,
    pub target: Option<f64>,
    pub failure: Option<Failure>,
}

impl PipelineReport {
    pub fn exit_code(&self) -> i32 {
        if let Some(f) = &self.failure {
            return f.exit_code;
        }
        match (self.target, self.overall_satisfaction) {
            (Some(t), Some(s)) if s < t => 1,
            _ => 0,
        }
    }
}

/// Data carried between stages.
pub struct Pipeline {
    pub project: Project,
    pub net: Network,
    pub spec: Option<SpecTask>,
    /// `[partition][subsystem]`; empty for partitions without an unsafe
    /// region, which are satisfied trivially.
    pub certs: Vec<Vec<PseudoCertificate>>,
    pub regions: Vec<Vec<TaskRegions>>,
    pub gains: Vec<Option<SmallGainData>>,
    pub composed: Vec<Option<NetworkCertificate>>,
    pub element_bounds: BTreeMap<(usize, usize, usize), f64>,
    pub traces: Vec<(String, TraceReport)>,
    pub report: PipelineReport,
}

fn partition_name(dfa: &Dfa, key: (usize, usize)) -> String {
    format!("{},{}", dfa.locations[key.0], dfa.locations[key.1])
}

fn symbols(dfa: &Dfa, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&s| dfa.alphabet[s].clone()).collect()
}

fn rename(cert: &PseudoCertificate, id: &str) -> PseudoCertificate {
    PseudoCertificate { subsystem: id.to_string(), modes: cert.modes.clone() }
}

impl Pipeline {
    pub fn new(project: Project) -> Pipeline {
        let net = project.network.build();
        let report = PipelineReport {
            shsbarrier_schema: SCHEMA_VERSION,
            project: project.name.clone(),
            target: project.target,
            ..PipelineReport::default()
        };
        Pipeline {
            project,
            net,
            spec: None,
            certs: vec![],
            regions: vec![],
            gains: vec![],
            composed: vec![],
            element_bounds: BTreeMap::new(),
            traces: vec![],
            report,
        }
    }

    /// Runs the stages up to and including `last`. Failures are recorded in
    /// the report rather than returned.
    pub fn run(&mut self, last: Stage) -> &PipelineReport {
        for st in Stage::ALL {
            if st > last {
                break;
            }
            if st == Stage::Simulate && self.project.simulation.is_none() {
                break;
            }
            let r = match st {
                Stage::Validate => self.validate(),
                Stage::Decompose => self.decompose(),
                Stage::Certificates => self.certificates(),
                Stage::Gains => self.extract(),
                Stage::Compose => self.compose(),
                Stage::Bounds => self.bounds(),
                Stage::Simulate => self.simulate(),
            };
            match r {
                Ok(()) => self.report.stages.push(st.name().to_string()),
                Err(e) => {
                    self.report.failure = Some(Failure {
                        stage: st.name().to_string(),
                        message: e.to_string(),
                        exit_code: e.exit_code(),
                    });
                    break;
                }
            }
        }
        &self.report
    }

    fn spec(&self) -> &SpecTask {
        self.spec.as_ref().expect("decomposition stage has run")
    }

    fn validate(&mut self) -> Result<()> {
        let v = validate(&self.net);
        self.report.validation = v.iter().map(|x| x.to_string()).collect();
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        if !(self.project.horizon > 0.0 && self.project.horizon.is_finite()) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        let dfa = Dfa::from_spec(&self.project.automaton.dfa)?;
        for s in self.project.labeling.symbols() {
            dfa.symbol_index(&s)?;
        }
        Ok(())
    }

    fn decompose(&mut self) -> Result<()> {
        let mut dfa = Dfa::from_spec(&self.project.automaton.dfa)?;
        if self.project.automaton.complement {
            dfa = dfa.complement();
        }
        let cfg = self.project.automaton.enumeration.unwrap_or_else(|| RunEnumeration::simple(&dfa));
        let spec = SpecTask::build(dfa, &cfg)?;
        let d = &spec.dfa;
        self.report.decomposition = Some(DecompositionReport {
            runs: spec
                .runs
                .iter()
                .map(|r| r.iter().map(|&q| d.locations[q].clone()).collect())
                .collect(),
            truncated: spec.truncated,
            partitions: spec
                .partitions
                .iter()
                .map(|p| PartitionSummary {
                    partition: partition_name(d, p.key),
                    triples: p.triples.iter().map(|&t| spec.triple_name(t)).collect(),
                    initial_symbols: symbols(d, &p.initial_symbols),
                    unsafe_symbols: symbols(d, &p.unsafe_symbols),
                })
                .collect(),
            switching_locations: spec.switching.locations.len(),
            switching_transitions: spec.switching.symbol_transition_count(),
        });
        self.spec = Some(spec);
        Ok(())
    }

    fn task_regions(&self, k: usize, i: usize) -> Result<TaskRegions> {
        let spec = self.spec();
        let p = &spec.partitions[k];
        let dims: Vec<usize> = self.net.subsystems.iter().map(|s| s.n()).collect();
        let lab = &self.project.labeling;
        Ok(TaskRegions {
            initial: lab.project_union(&symbols(&spec.dfa, &p.initial_symbols), i, &dims)?,
            unsafe_region: lab.project_union(&symbols(&spec.dfa, &p.unsafe_symbols), i, &dims)?,
        })
    }

    fn certificates(&mut self) -> Result<()> {
        let nparts = self.spec().partitions.len();
        let n = self.net.len();
        let homogeneous = self.project.network.homogeneous();
        let mut synth = self.project.synthesis.clone();
        synth.horizon = self.project.horizon;
        let supplied = match &self.project.certificates {
            CertificateSource::Synthesize => None,
            CertificateSource::Supplied { bundle, verify, .. } => Some((
                bundle.clone().ok_or_else(|| {
                    Error::InvalidInput("supplied certificates need a bundle or a path".into())
                })?,
                *verify,
            )),
        };
        for k in 0..nparts {
            let name = partition_name(&self.spec().dfa, self.spec().partitions[k].key);
            let regions: Vec<TaskRegions> =
                (0..n).map(|i| self.task_regions(k, i)).collect::<Result<_>>()?;
            let mut entries = Vec::new();
            if regions.iter().all(|r| r.unsafe_region.is_empty()) {
                self.report.certificates.push(PartitionCertificateReport {
                    partition: name,
                    source: "trivial".into(),
                    replicated: 0,
                    subsystems: vec![],
                });
                self.certs.push(vec![]);
                self.regions.push(regions);
                continue;
            }
            let certs: Vec<PseudoCertificate> = match &supplied {
                None => {
                    let reps = if homogeneous { 1 } else { n };
                    let mut out = Vec::new();
                    for i in 0..reps {
                        let sub = &self.net.subsystems[i];
                        let r = synthesize_cpbf(sub, &regions[i], &synth)?;
                        entries.push(SubsystemCertificate {
                            subsystem: sub.id.clone(),
                            certificate: r.certificate.clone(),
                            regions: regions[i].clone(),
                            synthesis: Some(SynthesisSummary {
                                iterations: r.iterations,
                                counterexamples: r.counterexamples,
                                kappa_hat: r.kappa_hat,
                            }),
                            verification: Some(r.report),
                        });
                        out.push(r.certificate);
                    }
                    if homogeneous {
                        (0..n).map(|i| rename(&out[0], &self.net.subsystems[i].id)).collect()
                    } else {
                        out
                    }
                }
                Some((bundle, check)) => {
                    let pc = bundle.partitions.iter().find(|p| p.partition == name).ok_or_else(|| {
                        Error::InvalidInput(format!("no supplied certificates for partition {name}"))
                    })?;
                    let certs: Vec<PseudoCertificate> = if pc.homogeneous {
                        let c = pc.subsystems.first().ok_or_else(|| {
                            Error::InvalidInput(format!("partition {name} lists no certificate"))
                        })?;
                        (0..n).map(|i| rename(c, &self.net.subsystems[i].id)).collect()
                    } else {
                        if pc.subsystems.len() != n {
                            return Err(Error::InvalidInput(format!(
                                "partition {name}: {} certificates for {n} subsystems",
                                pc.subsystems.len()
                            )));
                        }
                        pc.subsystems.clone()
                    };
                    let reps = if homogeneous && pc.homogeneous { 1 } else { n };
                    for i in 0..reps {
                        let sub = &self.net.subsystems[i];
                        certs[i].check_shape(sub)?;
                        let verification = if *check == SuppliedCheck::Skip {
                            None
                        } else {
                            Some(verify_cpbf(sub, &certs[i], &regions[i], &self.project.verification)?)
                        };
                        if *check == SuppliedCheck::Gate {
                            if let Some(v) = &verification {
                                if v.status == Status::Falsified {
                                    return Err(Error::SynthesisFailed {
                                        iterations: 0,
                                        reason: format!(
                                            "supplied certificate for {} in partition {name} is falsified",
                                            sub.id
                                        ),
                                    });
                                }
                            }
                        }
                        entries.push(SubsystemCertificate {
                            subsystem: sub.id.clone(),
                            certificate: certs[i].clone(),
                            regions: regions[i].clone(),
                            synthesis: None,
                            verification,
                        });
                    }
                    certs
                }
            };
            self.report.certificates.push(PartitionCertificateReport {
                partition: name,
                source: if supplied.is_some() { "supplied" } else { "synthesized" }.into(),
                replicated: if entries.len() == 1 { n } else { 1 },
                subsystems: entries,
            });
            self.certs.push(certs);
            self.regions.push(regions);
        }
        Ok(())
    }

    /// Certificates as a bundle that can be supplied to a later run.
    pub fn bundle(&self) -> CertificateBundle {
        let homogeneous = self.project.network.homogeneous();
        CertificateBundle {
            partitions: self
                .report
                .certificates
                .iter()
                .zip(&self.certs)
                .map(|(r, c)| PartitionCertificates {
                    partition: r.partition.clone(),
                    homogeneous,
                    subsystems: if homogeneous { c.iter().take(1).cloned().collect() } else { c.clone() },
                })
                .collect(),
        }
    }

    fn extract(&mut self) -> Result<()> {
        for certs in &self.certs {
            self.gains.push(if certs.is_empty() {
                None
            } else {
                Some(extract_gains(&self.net, certs, &self.project.gains.extraction)?)
            });
        }
        Ok(())
    }

    fn compose(&mut self) -> Result<()> {
        let n = self.net.len();
        let dims: usize = self.net.subsystems.iter().map(|s| s.n()).sum();
        let cbf_cfg = CbfConfig {
            verify: self.project.verification.clone(),
            gains: self.project.gains.extraction,
            ..CbfConfig::default()
        };
        let run_check = match self.project.network_check {
            NetworkCheck::Never => false,
            NetworkCheck::Always => true,
            NetworkCheck::Auto => dims <= cbf_cfg.joint_max_dim,
        };
        for k in 0..self.certs.len() {
            let name = partition_name(&self.spec().dfa, self.spec().partitions[k].key);
            let Some(sgd) = &self.gains[k] else {
                self.composed.push(None);
                continue;
            };
            let sg = check_small_gain(sgd)?;
            let mu = match (&self.project.gains.mu, &sg.mu) {
                (Some(m), _) => m.clone(),
                (None, Some(m)) => m.clone(),
                (None, None) => {
                    return Err(Error::SmallGainViolated { spectral_radius: sg.spectral_radius })
                }
            };
            let nc = compose_certificate(&self.certs[k], sgd, &mu)?;
            let off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| sgd.delta[i][j])
                .collect();
            let network_check = if run_check {
                Some(verify_cbf(&self.net, &self.certs[k], &self.regions[k], sgd, &nc, &cbf_cfg)?)
            } else {
                None
            };
            self.report.composition.push(CompositionReport {
                partition: name,
                lambda_hat: sgd.lambda.clone(),
                delta_min: off.iter().copied().fold(f64::INFINITY, f64::min).min(f64::MAX),
                delta_max: off.iter().copied().fold(0.0, f64::max),
                delta: if n <= 20 { Some(sgd.delta.clone()) } else { None },
                spectral_radius: sg.spectral_radius,
                small_gain_slack: crate::compose::weighted_columns(sgd, &mu).iter().map(|c| -c).collect(),
                mu,
                certificate: nc.clone(),
                network_check,
            });
            self.composed.push(Some(nc));
        }
        Ok(())
    }

    fn bounds(&mut self) -> Result<()> {
        let spec = self.spec.as_ref().expect("decomposition stage has run");
        for (k, p) in spec.partitions.iter().enumerate() {
            let (delta, branch) = match &self.composed[k] {
                None => (0.0, None),
                Some(nc) => {
                    let b = reach_bound(&BoundInput {
                        gamma: nc.gamma,
                        lambda: nc.lambda,
                        psi: nc.psi,
                        kappa_hat: nc.kappa_hat,
                        horizon: self.project.horizon,
                    })?;
                    (b.delta, Some(b.branch))
                }
            };
            for &t in &p.triples {
                self.element_bounds.insert(t, delta);
                self.report.elements.push(ElementBound {
                    element: spec.triple_name(t),
                    partition: partition_name(&spec.dfa, p.key),
                    delta,
                    branch,
                });
            }
        }
        let dfa = &spec.dfa;
        let mut overall: Option<f64> = None;
        for (s, sym) in dfa.alphabet.iter().enumerate() {
            let q1 = dfa.step(dfa.initial, s);
            if dfa.accepting.contains(&q1) {
                self.report.immediate_violation.push(sym.clone());
                continue;
            }
            let runs = spec.decompose(sym)?;
            if runs.is_empty() {
                continue;
            }
            let c = combine_runs(dfa, &runs, sym, &self.element_bounds)?;
            overall = Some(overall.map_or(c.satisfaction_lower, |o: f64| o.min(c.satisfaction_lower)));
            self.report.satisfaction.push(c);
        }
        self.report.overall_satisfaction = overall;
        Ok(())
    }

    fn simulate(&mut self) -> Result<()> {
        let sim = self.project.simulation.clone().expect("checked by run");
        let spec = self.spec().clone();
        let labels: Vec<String> = match &sim.labels {
            Some(l) => l.clone(),
            None => self.report.satisfaction.iter().map(|c| c.label.clone()).collect(),
        };
        let mut per_partition = Vec::new();
        let homogeneous = self.project.network.homogeneous();
        for certs in &self.certs {
            let mut set: Vec<Vec<ModeController>> = Vec::new();
            for (i, s) in self.net.subsystems.iter().enumerate() {
                let c = if certs.is_empty() {
                    open_loop(s)
                } else if homogeneous && i > 0 {
                    set[0].clone()
                } else {
                    mode_controllers(s, &certs[i], &self.project.verification)?
                };
                set.push(c);
            }
            per_partition.push(set);
        }
        let dims: Vec<usize> = self.net.subsystems.iter().map(|s| s.n()).collect();
        for label in labels {
            let region = self.project.labeling.region_of(&label).ok_or_else(|| {
                Error::UnknownLabel(format!("{label} has no region to start from"))
            })?;
            let initial: Vec<Region> = match region {
                LabelRegion::Joint { .. } => {
                    return Err(Error::InvalidInput(format!(
                        "cannot sample start states of the joint label {label}"
                    )))
                }
                r => (0..self.net.len()).map(|i| r.project(i, &dims)).collect(),
            };
            let cl = ClosedLoop {
                net: self.net.clone(),
                labeling: Some(self.project.labeling.clone()),
                spec: Some(spec.clone()),
                policy: Policy::PerPartition(per_partition.clone()),
                initial: InitialStates::Uniform(initial),
                initial_modes: vec![0; self.net.len()],
                unsafe_set: None,
            };
            let tr = simulate(&cl, &sim.config)?;
            let analytic = self
                .report
                .satisfaction
                .iter()
                .find(|c| c.label == label)
                .map_or(1.0, |c| c.violation_upper);
            let v = tr.violation_frequency;
            self.report.simulation.push(SimulationSummary {
                label: label.clone(),
                violation: v,
                analytic_violation: analytic,
                consistent: v.frequency - 3.0 * v.half_width <= analytic,
                mode_occupancy: tr.mode_occupancy.clone(),
            });
            self.traces.push((label, tr));
        }
        Ok(())
    }
}

fn open_loop(s: &Subsystem) -> Vec<ModeController> {
    s.modes
        .iter()
        .map(|m| match &m.controller {
            Some(l) => ModeController::Feedback(l.clone()),
            None => ModeController::Fixed(vec![0.0; s.input_vars.len()]),
        })
        .collect()
}

/// Runs every stage of a project.
pub fn run_pipeline(project: Project) -> Pipeline {
    let mut p = Pipeline::new(project);
    p.run(Stage::Simulate);
    p
}

/// Serialized report; identical inputs give identical bytes.
pub fn report_json(report: &PipelineReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}
