//! Deterministic automata over region labels: complementation, accepting
//! runs, reach-avoid decomposition and the switching automaton.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxRegion, Region};

/// `(q, q', q'')`: reach the symbols of edge `(q', q'')` before leaving
/// `q'`, starting from the symbols of edge `(q, q')`.
pub type Triple = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub symbols: Vec<String>,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfaSpec {
    pub locations: Vec<String>,
    pub alphabet: Vec<String>,
    pub initial: String,
    pub accepting: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    /// Missing transitions become self-loops instead of an error.
    #[serde(default)]
    pub complete_with_self_loops: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dfa {
    pub locations: Vec<String>,
    pub alphabet: Vec<String>,
    pub initial: usize,
    pub accepting: BTreeSet<usize>,
    /// `delta[q][sigma]`.
    pub delta: Vec<Vec<usize>>,
}

impl Dfa {
    pub fn from_spec(spec: &DfaSpec) -> Result<Dfa> {
        let loc = |name: &str| {
            spec.locations
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::Automaton(format!("unknown location `{name}`")))
        };
        let sym = |name: &str| {
            spec.alphabet
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::UnknownLabel(name.to_string()))
        };
        let nl = spec.locations.len();
        let ns = spec.alphabet.len();
        if nl == 0 || ns == 0 {
            return Err(Error::Automaton("empty location set or alphabet".into()));
        }
        let mut delta: Vec<Vec<Option<usize>>> = vec![vec![None; ns]; nl];
        for e in &spec.edges {
            let a = loc(&e.from)?;
            let b = loc(&e.to)?;
            for s in &e.symbols {
                let k = sym(s)?;
                match delta[a][k] {
                    Some(prev) if prev != b => {
                        return Err(Error::Automaton(format!(
                            "nondeterministic transition from `{}` on `{s}`",
                            e.from
                        )))
                    }
                    _ => delta[a][k] = Some(b),
                }
            }
        }
        let mut full = vec![vec![0; ns]; nl];
        for q in 0..nl {
            for k in 0..ns {
                full[q][k] = match delta[q][k] {
                    Some(t) => t,
                    None if spec.complete_with_self_loops => q,
                    None => {
                        return Err(Error::Automaton(format!(
                            "transition from `{}` on `{}` is undefined",
                            spec.locations[q], spec.alphabet[k]
                        )))
                    }
                };
            }
        }
        let accepting = spec.accepting.iter().map(|a| loc(a)).collect::<Result<_>>()?;
        Ok(Dfa {
            locations: spec.locations.clone(),
            alphabet: spec.alphabet.clone(),
            initial: loc(&spec.initial)?,
            accepting,
            delta: full,
        })
    }

    pub fn to_spec(&self) -> DfaSpec {
        let mut edges = Vec::new();
        for q in 0..self.locations.len() {
            let mut by_target: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for (k, &t) in self.delta[q].iter().enumerate() {
                by_target.entry(t).or_default().push(self.alphabet[k].clone());
            }
            for (t, symbols) in by_target {
                edges.push(EdgeSpec {
                    from: self.locations[q].clone(),
                    symbols,
                    to: self.locations[t].clone(),
                });
            }
        }
        DfaSpec {
            locations: self.locations.clone(),
            alphabet: self.alphabet.clone(),
            initial: self.locations[self.initial].clone(),
            accepting: self.accepting.iter().map(|&q| self.locations[q].clone()).collect(),
            edges,
            complete_with_self_loops: false,
        }
    }

    pub fn symbol_index(&self, s: &str) -> Result<usize> {
        self.alphabet
            .iter()
            .position(|a| a == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }

    pub fn location_index(&self, s: &str) -> Result<usize> {
        self.locations
            .iter()
            .position(|a| a == s)
            .ok_or_else(|| Error::Automaton(format!("unknown location `{s}`")))
    }

    /// Same transition structure, accepting set complemented.
    pub fn complement(&self) -> Dfa {
        let accepting = (0..self.locations.len()).filter(|q| !self.accepting.contains(q)).collect();
        Dfa { accepting, ..self.clone() }
    }

    pub fn step(&self, q: usize, sigma: usize) -> usize {
        self.delta[q][sigma]
    }

    pub fn run_word(&self, word: &[usize]) -> usize {
        word.iter().fold(self.initial, |q, &s| self.step(q, s))
    }

    pub fn accepts(&self, word: &[usize]) -> bool {
        self.accepting.contains(&self.run_word(word))
    }

    /// Symbols labelling the edge `q -> q'`.
    pub fn edge_symbols(&self, q: usize, qq: usize) -> Vec<usize> {
        (0..self.alphabet.len()).filter(|&k| self.delta[q][k] == qq).collect()
    }

    /// Distinct successors of `q` other than `q` itself, ascending.
    pub fn successors(&self, q: usize) -> Vec<usize> {
        let s: BTreeSet<usize> = self.delta[q].iter().copied().filter(|&t| t != q).collect();
        s.into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEnumeration {
    /// Maximum number of locations in a run.
    pub max_len: usize,
    /// Restrict to runs that visit each location at most once.
    pub simple_paths_only: bool,
}

impl RunEnumeration {
    pub fn simple(dfa: &Dfa) -> Self {
        RunEnumeration { max_len: dfa.locations.len(), simple_paths_only: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Runs {
    pub runs: Vec<Vec<usize>>,
    /// True when the length cap cut off at least one extension.
    pub truncated: bool,
}

/// Accepting runs from the initial location without consecutive repeats,
/// enumerated depth first with successors in ascending order. A run is
/// reported when it reaches an accepting location and has at least one edge.
pub fn enumerate_accepting_runs(dfa: &Dfa, cfg: &RunEnumeration) -> Result<Runs> {
    if cfg.max_len < 2 {
        return Err(Error::InvalidInput("max_len must be at least 2".into()));
    }
    let mut runs = Vec::new();
    let mut truncated = false;
    let mut path = vec![dfa.initial];
    fn dfs(
        dfa: &Dfa,
        cfg: &RunEnumeration,
        path: &mut Vec<usize>,
        runs: &mut Vec<Vec<usize>>,
        truncated: &mut bool,
    ) {
        let q = *path.last().unwrap();
        for t in dfa.successors(q) {
            if cfg.simple_paths_only && path.contains(&t) {
                continue;
            }
            if path.len() >= cfg.max_len {
                *truncated = true;
                return;
            }
            path.push(t);
            if dfa.accepting.contains(&t) {
                runs.push(path.clone());
            }
            dfs(dfa, cfg, path, runs, truncated);
            path.pop();
        }
    }
    dfs(dfa, cfg, &mut path, &mut runs, &mut truncated);
    Ok(Runs { runs, truncated })
}

pub fn run_triples(run: &[usize]) -> Vec<Triple> {
    run.windows(3).map(|w| (w[0], w[1], w[2])).collect()
}

/// Reach-avoid task shared by all triples with the same leading edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub key: (usize, usize),
    pub triples: Vec<Triple>,
    pub initial_symbols: Vec<usize>,
    pub unsafe_symbols: Vec<usize>,
}

pub fn partition_tasks(dfa: &Dfa, triples: &BTreeSet<Triple>) -> Vec<Partition> {
    let mut groups: BTreeMap<(usize, usize), Vec<Triple>> = BTreeMap::new();
    for &t in triples {
        groups.entry((t.0, t.1)).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|((q, qq), ts)| {
            let mut unsafe_set = BTreeSet::new();
            for t in dfa.successors(qq) {
                unsafe_set.extend(dfa.edge_symbols(qq, t));
            }
            Partition {
                key: (q, qq),
                triples: ts,
                initial_symbols: dfa.edge_symbols(q, qq),
                unsafe_symbols: unsafe_set.into_iter().collect(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchLocation {
    Start,
    /// Index into the partition list.
    Task { partition: usize },
    Accepting { location: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchTransition {
    pub from: usize,
    pub symbols: Vec<usize>,
    pub to: usize,
}

/// Automaton that selects which reach-avoid controller is active.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingAutomaton {
    pub locations: Vec<SwitchLocation>,
    pub transitions: Vec<SwitchTransition>,
    /// `next[loc][sigma]`; `None` keeps the current location.
    next: Vec<Vec<Option<usize>>>,
}

impl SwitchingAutomaton {
    pub fn initial(&self) -> usize {
        0
    }

    pub fn step(&self, loc: usize, sigma: usize) -> usize {
        self.next[loc][sigma].unwrap_or(loc)
    }

    pub fn partition_at(&self, loc: usize) -> Option<usize> {
        match self.locations[loc] {
            SwitchLocation::Task { partition } => Some(partition),
            _ => None,
        }
    }

    pub fn symbol_transition_count(&self) -> usize {
        self.transitions.iter().map(|t| t.symbols.len()).sum()
    }
}

pub fn build_switching_automaton(dfa: &Dfa, partitions: &[Partition]) -> SwitchingAutomaton {
    let mut locations = vec![SwitchLocation::Start];
    let mut task_index = BTreeMap::new();
    for (k, p) in partitions.iter().enumerate() {
        task_index.insert(p.key, locations.len());
        locations.push(SwitchLocation::Task { partition: k });
    }
    let mut acc_index = BTreeMap::new();
    for &q in &dfa.accepting {
        acc_index.insert(q, locations.len());
        locations.push(SwitchLocation::Accepting { location: q });
    }
    let heads: Vec<(usize, usize)> = std::iter::once((0, dfa.initial))
        .chain(partitions.iter().map(|p| (task_index[&p.key], p.key.1)))
        .collect();
    let mut transitions = Vec::new();
    for (from, head) in heads {
        for t in dfa.successors(head) {
            let to = if let Some(&l) = task_index.get(&(head, t)) {
                l
            } else if let Some(&l) = acc_index.get(&t) {
                l
            } else {
                continue;
            };
            transitions.push(SwitchTransition { from, symbols: dfa.edge_symbols(head, t), to });
        }
    }
    let mut next = vec![vec![None; dfa.alphabet.len()]; locations.len()];
    for t in &transitions {
        for &s in &t.symbols {
            next[t.from][s] = Some(t.to);
        }
    }
    SwitchingAutomaton { locations, transitions, next }
}

/// All decomposition artifacts of a complement automaton.
#[derive(Clone, Debug)]
pub struct SpecTask {
    pub dfa: Dfa,
    pub runs: Vec<Vec<usize>>,
    pub truncated: bool,
    pub partitions: Vec<Partition>,
    pub switching: SwitchingAutomaton,
}

impl SpecTask {
    /// `dfa` must already accept the violating traces.
    pub fn build(dfa: Dfa, cfg: &RunEnumeration) -> Result<SpecTask> {
        let runs = enumerate_accepting_runs(&dfa, cfg)?;
        let triples: BTreeSet<Triple> = runs.runs.iter().flat_map(|r| run_triples(r)).collect();
        let partitions = partition_tasks(&dfa, &triples);
        let switching = build_switching_automaton(&dfa, &partitions);
        Ok(SpecTask { dfa, runs: runs.runs, truncated: runs.truncated, partitions, switching })
    }

    /// Runs whose first edge carries `label`, each with its triples.
    pub fn decompose(&self, label: &str) -> Result<Vec<(Vec<usize>, Vec<Triple>)>> {
        let s = self.dfa.symbol_index(label)?;
        Ok(self
            .runs
            .iter()
            .filter(|r| self.dfa.step(r[0], s) == r[1])
            .map(|r| (r.clone(), run_triples(r)))
            .collect())
    }

    pub fn partition_of(&self, t: Triple) -> Option<usize> {
        self.partitions.iter().position(|p| p.key == (t.0, t.1))
    }

    pub fn triple_name(&self, t: Triple) -> String {
        let l = &self.dfa.locations;
        format!("({}, {}, {})", l[t.0], l[t.1], l[t.2])
    }
}

/// Region assigned to a label on the composite state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRegion {
    /// Every subsystem state lies in the same region.
    Uniform { region: Region },
    /// Product of one region per subsystem.
    PerSubsystem { regions: Vec<Region> },
    /// Union of boxes over the concatenated composite state.
    Joint { boxes: Vec<BoxRegion> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub symbol: String,
    pub region: LabelRegion,
}

/// Maps composite states to symbols. Entries are tried in order; states in
/// none of them get the `otherwise` symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub entries: Vec<LabelEntry>,
    #[serde(default)]
    pub otherwise: Option<String>,
}

impl LabelRegion {
    pub fn contains(&self, states: &[Vec<f64>]) -> bool {
        match self {
            LabelRegion::Uniform { region } => states.iter().all(|x| region.contains(x)),
            LabelRegion::PerSubsystem { regions } => {
                regions.len() == states.len()
                    && regions.iter().zip(states).all(|(r, x)| r.contains(x))
            }
            LabelRegion::Joint { boxes } => {
                let flat: Vec<f64> = states.iter().flatten().copied().collect();
                boxes.iter().any(|b| b.contains(&flat))
            }
        }
    }

    /// Region of subsystem `i` containing the projection of this label's
    /// region; `dims` holds the state dimension of every subsystem.
    pub fn project(&self, i: usize, dims: &[usize]) -> Region {
        match self {
            LabelRegion::Uniform { region } => region.clone(),
            LabelRegion::PerSubsystem { regions } => regions[i].clone(),
            LabelRegion::Joint { boxes } => {
                let off: usize = dims[..i].iter().sum();
                Region(
                    boxes
                        .iter()
                        .map(|b| BoxRegion(b.0[off..off + dims[i]].to_vec()))
                        .collect(),
                )
            }
        }
    }
}

impl Labeling {
    pub fn symbols(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.iter().map(|e| e.symbol.clone()).collect();
        v.extend(self.otherwise.iter().cloned());
        v
    }

    pub fn label(&self, states: &[Vec<f64>]) -> Result<&str> {
        for e in &self.entries {
            if e.region.contains(states) {
                return Ok(&e.symbol);
            }
        }
        self.otherwise
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("state has no label".into()))
    }

    /// Position of the label of `states` in [`Labeling::symbols`].
    pub fn label_index(&self, states: &[Vec<f64>]) -> Result<usize> {
        if let Some(k) = self.entries.iter().position(|e| e.region.contains(states)) {
            return Ok(k);
        }
        match self.otherwise {
            Some(_) => Ok(self.entries.len()),
            None => Err(Error::InvalidInput("state has no label".into())),
        }
    }

    pub fn region_of(&self, symbol: &str) -> Option<&LabelRegion> {
        self.entries.iter().find(|e| e.symbol == symbol).map(|e| &e.region)
    }

    /// Per-subsystem projection of the union of the given symbols' regions.
    pub fn project_union(&self, symbols: &[String], i: usize, dims: &[usize]) -> Result<Region> {
        let mut out = Region::default();
        for s in symbols {
            match self.region_of(s) {
                Some(r) => out.0.extend(r.project(i, dims).0),
                None if self.otherwise.as_deref() == Some(s.as_str()) => {
                    return Err(Error::InvalidInput(format!(
                        "label `{s}` covers the remainder of the state set and has no \
                         explicit region"
                    )))
                }
                None => return Err(Error::UnknownLabel(s.clone())),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> DfaSpec {
        DfaSpec {
            locations: vec!["a".into(), "b".into(), "c".into()],
            alphabet: vec!["x".into(), "y".into()],
            initial: "a".into(),
            accepting: vec!["c".into()],
            edges: vec![
                EdgeSpec { from: "a".into(), symbols: vec!["x".into()], to: "b".into() },
                EdgeSpec { from: "b".into(), symbols: vec!["y".into()], to: "c".into() },
                EdgeSpec { from: "a".into(), symbols: vec!["y".into()], to: "c".into() },
            ],
            complete_with_self_loops: true,
        }
    }

    #[test]
    fn complement_flips_acceptance() {
        let d = Dfa::from_spec(&abc()).unwrap();
        let c = d.complement();
        for w in [vec![0, 1], vec![0, 0], vec![1], vec![0]] {
            assert_ne!(d.accepts(&w), c.accepts(&w));
        }
    }

    #[test]
    fn incomplete_without_completion_is_error() {
        let mut s = abc();
        s.complete_with_self_loops = false;
        assert!(matches!(Dfa::from_spec(&s), Err(Error::Automaton(_))));
    }

    #[test]
    fn runs_and_labels() {
        let d = Dfa::from_spec(&abc()).unwrap();
        let t = SpecTask::build(d, &RunEnumeration { max_len: 3, simple_paths_only: true })
            .unwrap();
        assert_eq!(t.runs, vec![vec![0, 1, 2], vec![0, 2]]);
        assert_eq!(t.decompose("x").unwrap().len(), 1);
        assert_eq!(t.decompose("y").unwrap()[0].1.len(), 0);
        assert!(matches!(t.decompose("z"), Err(Error::UnknownLabel(_))));
    }
}
