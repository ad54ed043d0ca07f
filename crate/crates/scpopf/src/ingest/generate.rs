//! Synthetic radial and meshed feeders.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scpopf_core::netmodel::{nominal_phasors, Phase, PhaseMask};

use super::randomize::RandomizationSpec;
use super::schema::{
    Base, Block, BranchKind, BranchRecord, BusRecord, FeederFile, LoadRecord, SlackRecord,
    SCHEMA_VERSION,
};
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhasePolicy {
    /// Every bus carries phases a, b and c.
    Three,
    /// Every bus carries phase a only.
    Single,
    /// Three-phase trunk with single-phase laterals below the first level.
    Mixed,
}

/// Per-unit series impedance of a unit-length segment, scaled per branch by a
/// length drawn from `length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceTemplate {
    pub self_z: [f64; 2],
    pub mutual_z: [f64; 2],
    pub length: (f64, f64),
}

impl Default for ImpedanceTemplate {
    fn default() -> Self {
        Self {
            self_z: [0.01, 0.02],
            mutual_z: [0.004, 0.008],
            length: (0.5, 1.5),
        }
    }
}

impl ImpedanceTemplate {
    pub fn block(&self, length: f64) -> Block {
        let mut m = [[[0.0; 2]; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, z) in row.iter_mut().enumerate() {
                let t = if i == j { self.self_z } else { self.mutual_z };
                *z = [t[0] * length, t[1] * length];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederSpec {
    pub buses: usize,
    pub phases: PhasePolicy,
    pub tie_lines: usize,
    pub template: ImpedanceTemplate,
    pub base: Base,
    pub vmin_pu: f64,
    pub vmax_pu: f64,
    /// Load draw ranges; its seed drives the whole generator.
    pub loads: RandomizationSpec,
}

impl FeederSpec {
    pub fn new(buses: usize, tie_lines: usize, seed: u64) -> Self {
        Self {
            buses,
            phases: PhasePolicy::Three,
            tie_lines,
            template: ImpedanceTemplate::default(),
            base: Base {
                s_kva: 10.0,
                v_kv: 0.4,
            },
            vmin_pu: 0.9,
            vmax_pu: 1.1,
            loads: RandomizationSpec::residential(seed),
        }
    }
}

fn bus_ids(n: usize) -> Vec<String> {
    let width = (n.max(2) - 1).to_string().len().max(2);
    (0..n).map(|k| format!("b{k:0width$}")).collect()
}

fn mask_str(m: PhaseMask) -> String {
    m.to_string()
}

/// Random radial tree rooted at the slack (`b00`) plus `tie_lines` extra
/// branches between distinct non-adjacent buses that share a phase.
pub fn generate_feeder(spec: &FeederSpec) -> Result<FeederFile, IngestError> {
    if spec.buses < 2 {
        return Err(IngestError::Generate(String::from("need at least 2 buses")));
    }
    spec.loads.validate()?;
    let (l_lo, l_hi) = spec.template.length;
    if !(0.0 < l_lo && l_lo <= l_hi && l_hi.is_finite()) {
        return Err(IngestError::Generate(String::from(
            "template length range must satisfy 0 < lo <= hi",
        )));
    }
    if !(0.0 < spec.vmin_pu && spec.vmin_pu < spec.vmax_pu) {
        return Err(IngestError::Generate(String::from(
            "need 0 < vmin < vmax",
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.loads.seed);
    let ids = bus_ids(spec.buses);

    let mut parent = vec![0usize; spec.buses];
    let mut masks = vec![PhaseMask::ABC; spec.buses];
    if spec.phases == PhasePolicy::Single {
        masks = vec![PhaseMask::single(Phase::A); spec.buses];
    }
    for k in 1..spec.buses {
        let p = rng.random_range(0..k);
        parent[k] = p;
        if spec.phases == PhasePolicy::Mixed && p != 0 {
            masks[k] = if masks[p].count() == 1 {
                masks[p]
            } else if rng.random_bool(0.5) {
                PhaseMask::single(Phase::ALL[rng.random_range(0..3)])
            } else {
                PhaseMask::ABC
            };
        }
    }

    let mut branches = Vec::with_capacity(spec.buses - 1 + spec.tie_lines);
    let mut adjacent = BTreeSet::new();
    for k in 1..spec.buses {
        let len = rng.random_range(l_lo..=l_hi);
        branches.push(BranchRecord {
            from: ids[parent[k]].clone(),
            to: ids[k].clone(),
            kind: BranchKind::ZPu,
            matrix: spec.template.block(len),
        });
        adjacent.insert((parent[k], k));
    }

    let candidates: Vec<(usize, usize)> = (0..spec.buses)
        .flat_map(|i| (i + 1..spec.buses).map(move |j| (i, j)))
        .filter(|&(i, j)| !adjacent.contains(&(i, j)))
        .filter(|&(i, j)| masks[i].intersect(masks[j]).iter().any(|&p| p))
        .collect();
    if spec.tie_lines > candidates.len() {
        return Err(IngestError::Generate(format!(
            "{} tie lines requested but only {} non-adjacent bus pairs are available",
            spec.tie_lines,
            candidates.len()
        )));
    }
    let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), spec.tie_lines).into_vec();
    picked.sort_unstable();
    for k in picked {
        let (i, j) = candidates[k];
        let len = rng.random_range(l_lo..=l_hi);
        branches.push(BranchRecord {
            from: ids[i].clone(),
            to: ids[j].clone(),
            kind: BranchKind::ZPu,
            matrix: spec.template.block(len),
        });
    }

    let mut loads = Vec::new();
    for k in 1..spec.buses {
        for ph in masks[k].phases() {
            let (p, q) = spec.loads.draw(&mut rng);
            loads.push(LoadRecord {
                bus: ids[k].clone(),
                phase: ph.into(),
                p_kw: p,
                q_kvar: q,
            });
        }
    }

    let v0 = nominal_phasors();
    Ok(FeederFile {
        version: SCHEMA_VERSION,
        base: spec.base,
        buses: ids
            .iter()
            .zip(&masks)
            .map(|(id, m)| BusRecord {
                id: id.clone(),
                phases: mask_str(*m),
                vmin_pu: spec.vmin_pu,
                vmax_pu: spec.vmax_pu,
            })
            .collect(),
        branches,
        loads,
        generators: Vec::new(),
        slack: SlackRecord {
            bus: ids[0].clone(),
            v_pu: v0.map(|v| [v.re, v.im]),
        },
    })
}

/// Adds one tie line between the two non-adjacent buses that are farthest
/// apart along the existing branches and share at least one phase. The tie
/// copies the first branch's block and kind. Ties are broken by file order.
pub fn with_tie_line(file: &FeederFile) -> Result<FeederFile, IngestError> {
    let first = file
        .branches
        .first()
        .ok_or_else(|| IngestError::Generate(String::from("feeder has no branches")))?;
    let pos: BTreeMap<&str, usize> = file
        .buses
        .iter()
        .enumerate()
        .map(|(k, b)| (b.id.as_str(), k))
        .collect();
    let n = file.buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in &file.branches {
        let (Some(&a), Some(&b)) = (pos.get(br.from.as_str()), pos.get(br.to.as_str())) else {
            return Err(IngestError::Generate(format!(
                "branch {} -> {} references an unknown bus",
                br.from, br.to
            )));
        };
        adj[a].push(b);
        adj[b].push(a);
    }
    let masks: Vec<PhaseMask> = file
        .buses
        .iter()
        .map(|b| PhaseMask::parse(&b.phases).unwrap_or(PhaseMask::ABC))
        .collect();

    let mut best: Option<(usize, usize, usize)> = None;
    for i in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[i] = 0;
        let mut queue = VecDeque::from([i]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        for j in i + 1..n {
            let d = dist[j];
            if d < 2 || d == usize::MAX || !masks[i].intersect(masks[j]).iter().any(|&p| p) {
                continue;
            }
            if best.map_or(true, |(_, _, bd)| d > bd) {
                best = Some((i, j, d));
            }
        }
    }
    let (i, j, _) = best.ok_or_else(|| {
        IngestError::Generate(String::from("no non-adjacent bus pair shares a phase"))
    })?;
    let mut out = file.clone();
    out.branches.push(BranchRecord {
        from: file.buses[i].id.clone(),
        to: file.buses[j].id.clone(),
        kind: first.kind,
        matrix: first.matrix,
    });
    Ok(out)
}
