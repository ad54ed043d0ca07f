//! Unbalanced three-phase network model and bus admittance assembly.
//!
//! Nodes are (bus, phase) pairs ordered by ascending bus id and then by phase
//! a, b, c. Each branch carries a 3×3 per-unit admittance block whose rows and
//! columns for phases absent at either endpoint must be zero.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use core::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// A 3×3 complex block indexed `[row phase][column phase]`.
pub type PhaseBlock = [[Complex64; 3]; 3];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c {
            'a' | 'A' => Some(Phase::A),
            'b' | 'B' => Some(Phase::B),
            'c' | 'C' => Some(Phase::C),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Which of the phases a, b, c exist at a bus. At least one is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseMask([bool; 3]);

impl PhaseMask {
    pub const ABC: PhaseMask = PhaseMask([true, true, true]);

    pub fn new(a: bool, b: bool, c: bool) -> Result<Self, NetworkError> {
        if !(a || b || c) {
            return Err(NetworkError::EmptyPhases(String::new()));
        }
        Ok(Self([a, b, c]))
    }

    pub fn single(phase: Phase) -> Self {
        let mut p = [false; 3];
        p[phase.index()] = true;
        Self(p)
    }

    /// Parses strings such as `"abc"`, `"ac"` or `"b"`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut p = [false; 3];
        for c in s.chars() {
            let ph = Phase::from_char(c)?;
            if p[ph.index()] {
                return None;
            }
            p[ph.index()] = true;
        }
        Self::new(p[0], p[1], p[2]).ok()
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0[phase.index()]
    }

    pub fn count(self) -> usize {
        self.0.iter().filter(|&&p| p).count()
    }

    pub fn phases(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn intersect(self, other: PhaseMask) -> [bool; 3] {
        [0, 1, 2].map(|i| self.0[i] && other.0[i])
    }

    pub fn is_superset_of(self, other: PhaseMask) -> bool {
        (0..3).all(|i| self.0[i] || !other.0[i])
    }
}

impl fmt::Display for PhaseMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.phases() {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("bus `{0}` has no phases")]
    EmptyPhases(String),
    #[error("{context} references unknown bus `{bus}`")]
    UnknownBus { context: String, bus: String },
    #[error("{context} references phase {phase} which bus `{bus}` does not have")]
    MissingPhase {
        context: String,
        bus: String,
        phase: Phase,
    },
    #[error("no slack bus specified")]
    MissingSlack,
    #[error("slack bus `{bus}` lacks phase {phase} used elsewhere in the network")]
    SlackPhases { bus: String, phase: Phase },
    #[error("bus `{0}` has invalid voltage limits (need 0 < vmin < vmax)")]
    VoltageLimits(String),
    #[error("network is disconnected: bus `{0}` is unreachable from the slack")]
    Disconnected(String),
    #[error("branch {from} -> {to} connects a bus to itself")]
    SelfLoop { from: String, to: String },
    #[error("branch {from} -> {to} has non-finite admittance")]
    NonFiniteAdmittance { from: String, to: String },
    #[error("branch {from} -> {to} couples phase {phase} which is absent at an endpoint")]
    AbsentPhaseCoupling {
        from: String,
        to: String,
        phase: Phase,
    },
    #[error("{0} has a non-finite or inconsistent value")]
    InvalidValue(String),
    #[error("bus-phase index does not match the network")]
    IndexMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseMask,
    pub vmin: f64,
    pub vmax: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: String,
    pub to: String,
    pub y: PhaseBlock,
}

/// Wye-connected constant-power demand `S = P + jQ` at one bus-phase node.
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: String,
    pub phase: Phase,
    pub s: Complex64,
}

/// Dispatchable injection at one bus-phase node. Bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: String,
    pub phase: Phase,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl Generator {
    pub fn unbounded(bus: &str, phase: Phase) -> Self {
        Self {
            bus: bus.to_string(),
            phase,
            p_min: f64::NEG_INFINITY,
            p_max: f64::INFINITY,
            q_min: f64::NEG_INFINITY,
            q_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slack {
    pub bus: String,
    /// Fixed voltage per phase; entries for absent phases are ignored.
    pub voltage: [Complex64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Topology {
    Radial,
    Meshed,
}

/// Nominal per-phase reference phasors `1∠0°`, `1∠−120°`, `1∠+120°`.
pub fn nominal_phasors() -> [Complex64; 3] {
    let h = 3f64.sqrt() / 2.0;
    [
        Complex64::new(1.0, 0.0),
        Complex64::new(-0.5, -h),
        Complex64::new(-0.5, h),
    ]
}

/// Dense numbering of (bus, phase) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BusPhaseIndex {
    nodes: Vec<(usize, Phase)>,
    by_bus: Vec<[Option<usize>; 3]>,
    bus_ids: Vec<String>,
}

impl BusPhaseIndex {
    /// Numbers the nodes of `buses`, sorted by id then phase.
    pub fn build<'a, I>(buses: I) -> Result<Self, NetworkError>
    where
        I: IntoIterator<Item = (&'a str, PhaseMask)>,
    {
        let mut sorted: BTreeMap<&str, PhaseMask> = BTreeMap::new();
        for (id, mask) in buses {
            if mask.count() == 0 {
                return Err(NetworkError::EmptyPhases(id.to_string()));
            }
            if sorted.insert(id, mask).is_some() {
                return Err(NetworkError::DuplicateBus(id.to_string()));
            }
        }
        let mut nodes = Vec::new();
        let mut by_bus = Vec::with_capacity(sorted.len());
        let mut bus_ids = Vec::with_capacity(sorted.len());
        for (pos, (id, mask)) in sorted.into_iter().enumerate() {
            let mut slots = [None; 3];
            for ph in mask.phases() {
                slots[ph.index()] = Some(nodes.len());
                nodes.push((pos, ph));
            }
            by_bus.push(slots);
            bus_ids.push(id.to_string());
        }
        Ok(Self {
            nodes,
            by_bus,
            bus_ids,
        })
    }

    /// Number of bus-phase nodes `N_ph`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bus_count(&self) -> usize {
        self.by_bus.len()
    }

    pub fn bus_position(&self, id: &str) -> Option<usize> {
        self.bus_ids.binary_search_by(|b| b.as_str().cmp(id)).ok()
    }

    pub fn bus_id(&self, pos: usize) -> &str {
        &self.bus_ids[pos]
    }

    pub fn node(&self, bus: &str, phase: Phase) -> Option<usize> {
        self.bus_position(bus)
            .and_then(|p| self.by_bus[p][phase.index()])
    }

    pub fn node_at(&self, bus_pos: usize, phase: Phase) -> Option<usize> {
        self.by_bus.get(bus_pos).and_then(|s| s[phase.index()])
    }

    /// `(bus position, phase)` of node `n`.
    pub fn entry(&self, n: usize) -> (usize, Phase) {
        self.nodes[n]
    }

    pub fn label(&self, n: usize) -> (&str, Phase) {
        let (b, ph) = self.nodes[n];
        (&self.bus_ids[b], ph)
    }
}

/// Validated, immutable three-phase network in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    loads: Vec<Load>,
    generators: Vec<Generator>,
    slack: Slack,
    reference: [Complex64; 3],
    topology: Topology,
    index: BusPhaseIndex,
}

/// Collects network elements and validates them in [`NetworkBuilder::build`].
#[derive(Debug, Clone, Default)]
pub struct NetworkBuilder {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    loads: Vec<Load>,
    generators: Vec<Generator>,
    slack: Option<Slack>,
    reference: Option<[Complex64; 3]>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bus(mut self, id: &str, phases: PhaseMask, vmin: f64, vmax: f64) -> Self {
        self.buses.push(Bus {
            id: id.to_string(),
            phases,
            vmin,
            vmax,
        });
        self
    }

    pub fn branch(mut self, from: &str, to: &str, y: PhaseBlock) -> Self {
        self.branches.push(Branch {
            from: from.to_string(),
            to: to.to_string(),
            y,
        });
        self
    }

    pub fn load(mut self, bus: &str, phase: Phase, s: Complex64) -> Self {
        self.loads.push(Load {
            bus: bus.to_string(),
            phase,
            s,
        });
        self
    }

    pub fn generator(mut self, generator: Generator) -> Self {
        self.generators.push(generator);
        self
    }

    pub fn slack(mut self, bus: &str, voltage: [Complex64; 3]) -> Self {
        self.slack = Some(Slack {
            bus: bus.to_string(),
            voltage,
        });
        self
    }

    pub fn reference(mut self, reference: [Complex64; 3]) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn build(self) -> Result<Network, NetworkError> {
        let index = BusPhaseIndex::build(self.buses.iter().map(|b| (b.id.as_str(), b.phases)))?;
        let mut buses = self.buses;
        buses.sort_by(|a, b| a.id.cmp(&b.id));
        let slack = self.slack.ok_or(NetworkError::MissingSlack)?;
        let slack_pos = index
            .bus_position(&slack.bus)
            .ok_or_else(|| NetworkError::UnknownBus {
                context: "slack".to_string(),
                bus: slack.bus.clone(),
            })?;
        let slack_mask = buses[slack_pos].phases;
        for b in &buses {
            for ph in b.phases.phases() {
                if !slack_mask.contains(ph) {
                    return Err(NetworkError::SlackPhases {
                        bus: slack.bus.clone(),
                        phase: ph,
                    });
                }
            }
            let ok = b.vmin.is_finite() && b.vmax.is_finite() && b.vmin > 0.0 && b.vmin < b.vmax;
            if b.id != slack.bus && !ok {
                return Err(NetworkError::VoltageLimits(b.id.clone()));
            }
        }
        for ph in slack_mask.phases() {
            let v = slack.voltage[ph.index()];
            if !(v.re.is_finite() && v.im.is_finite()) || v.norm() == 0.0 {
                return Err(NetworkError::InvalidValue(alloc::format!(
                    "slack voltage phase {ph}"
                )));
            }
        }

        let lookup = |context: &str, bus: &str| -> Result<usize, NetworkError> {
            index.bus_position(bus).ok_or_else(|| NetworkError::UnknownBus {
                context: context.to_string(),
                bus: bus.to_string(),
            })
        };
        let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); buses.len()];
        let mut parallel = false;
        for br in &self.branches {
            let ctx = alloc::format!("branch {} -> {}", br.from, br.to);
            let f = lookup(&ctx, &br.from)?;
            let t = lookup(&ctx, &br.to)?;
            if f == t {
                return Err(NetworkError::SelfLoop {
                    from: br.from.clone(),
                    to: br.to.clone(),
                });
            }
            if br
                .y
                .iter()
                .flatten()
                .any(|v| !(v.re.is_finite() && v.im.is_finite()))
            {
                return Err(NetworkError::NonFiniteAdmittance {
                    from: br.from.clone(),
                    to: br.to.clone(),
                });
            }
            let common = buses[f].phases.intersect(buses[t].phases);
            for p in 0..3 {
                for q in 0..3 {
                    if (!common[p] || !common[q]) && br.y[p][q] != ZERO {
                        let phase = Phase::ALL[if common[p] { q } else { p }];
                        return Err(NetworkError::AbsentPhaseCoupling {
                            from: br.from.clone(),
                            to: br.to.clone(),
                            phase,
                        });
                    }
                }
            }
            parallel |= !adjacency[f].insert(t);
            adjacency[t].insert(f);
        }

        // Connectivity from the slack.
        let mut seen = vec![false; buses.len()];
        let mut stack = vec![slack_pos];
        seen[slack_pos] = true;
        while let Some(b) = stack.pop() {
            for &nb in &adjacency[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(NetworkError::Disconnected(buses[pos].id.clone()));
        }
        let topology = if !parallel && self.branches.len() + 1 == buses.len() {
            Topology::Radial
        } else {
            Topology::Meshed
        };

        for l in &self.loads {
            let ctx = alloc::format!("load at {}", l.bus);
            let pos = lookup(&ctx, &l.bus)?;
            if !buses[pos].phases.contains(l.phase) {
                return Err(NetworkError::MissingPhase {
                    context: ctx,
                    bus: l.bus.clone(),
                    phase: l.phase,
                });
            }
            if !(l.s.re.is_finite() && l.s.im.is_finite()) {
                return Err(NetworkError::InvalidValue(ctx));
            }
        }
        let mut gen_nodes = BTreeSet::new();
        for g in &self.generators {
            let ctx = alloc::format!("generator at {}.{}", g.bus, g.phase);
            let pos = lookup(&ctx, &g.bus)?;
            if !buses[pos].phases.contains(g.phase) {
                return Err(NetworkError::MissingPhase {
                    context: ctx,
                    bus: g.bus.clone(),
                    phase: g.phase,
                });
            }
            let bad = |lo: f64, hi: f64| lo.is_nan() || hi.is_nan() || lo > hi;
            if bad(g.p_min, g.p_max) || bad(g.q_min, g.q_max) || !gen_nodes.insert((pos, g.phase))
            {
                return Err(NetworkError::InvalidValue(ctx));
            }
        }

        Ok(Network {
            buses,
            branches: self.branches,
            loads: self.loads,
            generators: self.generators,
            slack,
            reference: self.reference.unwrap_or_else(nominal_phasors),
            topology,
            index,
        })
    }
}

impl Network {
    pub fn builder() -> NetworkBuilder {
        NetworkBuilder::new()
    }

    /// Builder pre-populated with this network's elements.
    pub fn to_builder(&self) -> NetworkBuilder {
        NetworkBuilder {
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            loads: self.loads.clone(),
            generators: self.generators.clone(),
            slack: Some(self.slack.clone()),
            reference: Some(self.reference),
        }
    }

    /// Buses sorted by id.
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn slack(&self) -> &Slack {
        &self.slack
    }

    pub fn reference(&self) -> [Complex64; 3] {
        self.reference
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn index(&self) -> &BusPhaseIndex {
        &self.index
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.index.bus_position(id).map(|p| &self.buses[p])
    }

    pub fn slack_position(&self) -> usize {
        self.index
            .bus_position(&self.slack.bus)
            .expect("validated slack")
    }

    pub fn is_slack_node(&self, n: usize) -> bool {
        self.index.entry(n).0 == self.slack_position()
    }

    /// Fixed slack voltage at node `n`, if `n` belongs to the slack bus.
    pub fn slack_voltage(&self, n: usize) -> Option<Complex64> {
        let (b, ph) = self.index.entry(n);
        (b == self.slack_position()).then(|| self.slack.voltage[ph.index()])
    }

    /// Voltage magnitude limits of node `n`.
    pub fn voltage_limits(&self, n: usize) -> (f64, f64) {
        let b = &self.buses[self.index.entry(n).0];
        (b.vmin, b.vmax)
    }

    /// Reference phasor of node `n`'s phase.
    pub fn reference_at(&self, n: usize) -> Complex64 {
        self.reference[self.index.entry(n).1.index()]
    }

    /// Total demand per node.
    pub fn demand(&self) -> Vec<Complex64> {
        let mut d = vec![ZERO; self.index.len()];
        for l in &self.loads {
            let n = self.index.node(&l.bus, l.phase).expect("validated load");
            d[n] += l.s;
        }
        d
    }

    /// Generator limits per node. Slack nodes without an explicit generator get
    /// an unbounded one; other nodes without a generator get `None`.
    pub fn generator_limits(&self) -> Vec<Option<Generator>> {
        let mut g: Vec<Option<Generator>> = vec![None; self.index.len()];
        for gen in &self.generators {
            let n = self.index.node(&gen.bus, gen.phase).expect("validated generator");
            g[n] = Some(gen.clone());
        }
        for (n, slot) in g.iter_mut().enumerate() {
            if slot.is_none() && self.is_slack_node(n) {
                let (bus, ph) = self.index.label(n);
                *slot = Some(Generator::unbounded(bus, ph));
            }
        }
        g
    }

    /// Sum of `|S^D|` over all loads.
    pub fn total_apparent_load(&self) -> f64 {
        self.loads.iter().map(|l| l.s.norm()).sum()
    }
}

/// Returns the node numbering of `network`.
pub fn build_index(network: &Network) -> BusPhaseIndex {
    network.index.clone()
}

/// Sparse complex bus admittance matrix in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct YBus {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
    slack_nodes: Vec<usize>,
    load_nodes: Vec<usize>,
}

impl YBus {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Slack node set `S`.
    pub fn slack_nodes(&self) -> &[usize] {
        &self.slack_nodes
    }

    /// Non-slack node set `L`.
    pub fn load_nodes(&self) -> &[usize] {
        &self.load_nodes
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn is_stored(&self, i: usize, j: usize) -> bool {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r].binary_search(&j).is_ok()
    }

    /// `Y v`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, y)| y * v[j]).sum())
            .collect()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let mut d = vec![ZERO; self.n * self.n];
        for i in 0..self.n {
            for (j, y) in self.row(i) {
                d[i * self.n + j] = y;
            }
        }
        d
    }

    /// Dense copy of the sub-block with the given rows and columns.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> Vec<Complex64> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &c) in cols.iter().enumerate() {
            pos[c] = k;
        }
        let mut d = vec![ZERO; rows.len() * cols.len()];
        for (ri, &r) in rows.iter().enumerate() {
            for (j, y) in self.row(r) {
                if pos[j] != usize::MAX {
                    d[ri * cols.len() + pos[j]] = y;
                }
            }
        }
        d
    }
}

/// Assembles `Y` block by block: each branch adds `y` to both diagonal blocks
/// and `−y` to both off-diagonal blocks.
pub fn assemble_ybus(network: &Network, index: &BusPhaseIndex) -> Result<YBus, NetworkError> {
    if index != &network.index {
        return Err(NetworkError::IndexMismatch);
    }
    let n = index.len();
    let mut acc: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    for br in &network.branches {
        let f = index
            .bus_position(&br.from)
            .ok_or_else(|| NetworkError::UnknownBus {
                context: "branch".to_string(),
                bus: br.from.clone(),
            })?;
        let t = index
            .bus_position(&br.to)
            .ok_or_else(|| NetworkError::UnknownBus {
                context: "branch".to_string(),
                bus: br.to.clone(),
            })?;
        if br
            .y
            .iter()
            .flatten()
            .any(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(NetworkError::NonFiniteAdmittance {
                from: br.from.clone(),
                to: br.to.clone(),
            });
        }
        for p in Phase::ALL {
            for q in Phase::ALL {
                let (Some(fp), Some(fq), Some(tp), Some(tq)) = (
                    index.node_at(f, p),
                    index.node_at(f, q),
                    index.node_at(t, p),
                    index.node_at(t, q),
                ) else {
                    continue;
                };
                let y = br.y[p.index()][q.index()];
                *acc.entry((fp, fq)).or_insert(ZERO) += y;
                *acc.entry((tp, tq)).or_insert(ZERO) += y;
                *acc.entry((fp, tq)).or_insert(ZERO) -= y;
                *acc.entry((tp, fq)).or_insert(ZERO) -= y;
            }
        }
    }
    let mut row_ptr = vec![0usize; n + 1];
    let mut cols = Vec::with_capacity(acc.len());
    let mut vals = Vec::with_capacity(acc.len());
    for (&(i, j), &v) in &acc {
        row_ptr[i + 1] += 1;
        cols.push(j);
        vals.push(v);
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    let (slack_nodes, load_nodes): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&k| network.is_slack_node(k));
    Ok(YBus {
        n,
        row_ptr,
        cols,
        vals,
        slack_nodes,
        load_nodes,
    })
}

/// Diagonal 3×3 block with `y` on the given phases.
pub fn diagonal_block(y: Complex64, phases: PhaseMask) -> PhaseBlock {
    let mut b = [[ZERO; 3]; 3];
    for p in phases.phases() {
        b[p.index()][p.index()] = y;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus_three_phase() -> Network {
        Network::builder()
            .bus("b0", PhaseMask::ABC, 0.9, 1.1)
            .bus("b1", PhaseMask::ABC, 0.9, 1.1)
            .branch("b0", "b1", diagonal_block(c(10.0, -20.0), PhaseMask::ABC))
            .slack("b0", nominal_phasors())
            .build()
            .unwrap()
    }

    #[test]
    fn index_orders_by_bus_then_phase() {
        let net = two_bus_three_phase();
        let idx = net.index();
        assert_eq!(idx.len(), 6);
        assert_eq!(idx.label(0), ("b0", Phase::A));
        assert_eq!(idx.label(5), ("b1", Phase::C));
    }

    #[test]
    fn index_counts_partial_phases() {
        let idx = BusPhaseIndex::build([
            ("bus0", PhaseMask::ABC),
            ("bus1", PhaseMask::parse("ac").unwrap()),
        ])
        .unwrap();
        assert_eq!(idx.len(), 5);
        assert_eq!(idx.node("bus1", Phase::C), Some(4));
        assert_eq!(idx.node("bus1", Phase::B), None);
    }

    #[test]
    fn empty_phase_mask_is_rejected() {
        assert!(PhaseMask::new(false, false, false).is_err());
        assert!(PhaseMask::parse("").is_none());
        assert!(PhaseMask::parse("aa").is_none());
        let err = BusPhaseIndex::build([("x", PhaseMask([false; 3]))]).unwrap_err();
        assert_eq!(err, NetworkError::EmptyPhases("x".into()));
    }

    #[test]
    fn duplicate_bus_is_rejected() {
        let err = BusPhaseIndex::build([("x", PhaseMask::ABC), ("x", PhaseMask::ABC)]).unwrap_err();
        assert_eq!(err, NetworkError::DuplicateBus("x".into()));
    }

    #[test]
    fn single_phase_line_matches_block_rule() {
        let y = c(20.0, -40.0);
        let a = PhaseMask::single(Phase::A);
        let net = Network::builder()
            .bus("1", a, 0.9, 1.1)
            .bus("2", a, 0.9, 1.1)
            .branch("1", "2", diagonal_block(y, a))
            .slack("1", nominal_phasors())
            .build()
            .unwrap();
        let ybus = assemble_ybus(&net, net.index()).unwrap();
        assert_eq!(ybus.to_dense(), alloc::vec![y, -y, -y, y]);
        assert_eq!(ybus.slack_nodes(), &[0]);
        assert_eq!(ybus.load_nodes(), &[1]);
    }

    #[test]
    fn branchless_multi_bus_network_is_disconnected() {
        let err = Network::builder()
            .bus("1", PhaseMask::ABC, 0.9, 1.1)
            .bus("2", PhaseMask::ABC, 0.9, 1.1)
            .slack("1", nominal_phasors())
            .build()
            .unwrap_err();
        assert_eq!(err, NetworkError::Disconnected("2".into()));
    }

    #[test]
    fn nominal_phasors_are_rotations() {
        let [a, b, cc] = nominal_phasors();
        assert_eq!(a, c(1.0, 0.0));
        assert!((b - c(-0.5, -(3f64.sqrt()) / 2.0)).norm() < 1e-16);
        assert!((cc - c(-0.5, 3f64.sqrt() / 2.0)).norm() < 1e-16);
    }

    #[test]
    fn validation_errors() {
        let a = PhaseMask::single(Phase::A);
        let base = || {
            Network::builder()
                .bus("1", PhaseMask::ABC, 0.9, 1.1)
                .bus("2", a, 0.9, 1.1)
                .slack("1", nominal_phasors())
        };
        let err = base()
            .branch("1", "3", diagonal_block(c(1.0, 0.0), a))
            .build()
            .unwrap_err();
        assert!(matches!(err, NetworkError::UnknownBus { .. }));
        let err = base()
            .branch("1", "2", diagonal_block(c(f64::NAN, 0.0), a))
            .build()
            .unwrap_err();
        assert!(matches!(err, NetworkError::NonFiniteAdmittance { .. }));
        let err = base()
            .branch("1", "2", diagonal_block(c(1.0, 0.0), PhaseMask::ABC))
            .build()
            .unwrap_err();
        assert!(matches!(err, NetworkError::AbsentPhaseCoupling { .. }));
        let err = base()
            .branch("1", "2", diagonal_block(c(1.0, 0.0), a))
            .load("2", Phase::B, c(0.1, 0.0))
            .build()
            .unwrap_err();
        assert!(matches!(err, NetworkError::MissingPhase { .. }));
        let err = Network::builder()
            .bus("1", a, 0.9, 1.1)
            .bus("2", PhaseMask::ABC, 0.9, 1.1)
            .branch("1", "2", diagonal_block(c(1.0, 0.0), a))
            .slack("1", nominal_phasors())
            .build()
            .unwrap_err();
        assert!(matches!(err, NetworkError::SlackPhases { .. }));
        let err = Network::builder()
            .bus("1", a, 0.9, 1.1)
            .bus("2", a, 1.1, 0.9)
            .branch("1", "2", diagonal_block(c(1.0, 0.0), a))
            .slack("1", nominal_phasors())
            .build()
            .unwrap_err();
        assert_eq!(err, NetworkError::VoltageLimits("2".into()));
        let err = Network::builder()
            .bus("1", a, 0.9, 1.1)
            .build()
            .unwrap_err();
        assert_eq!(err, NetworkError::MissingSlack);
    }

    #[test]
    fn topology_is_classified() {
        let net = two_bus_three_phase();
        assert_eq!(net.topology(), Topology::Radial);
        let meshed = net
            .to_builder()
            .branch("b1", "b0", diagonal_block(c(1.0, -1.0), PhaseMask::ABC))
            .build()
            .unwrap();
        assert_eq!(meshed.topology(), Topology::Meshed);
    }
}
