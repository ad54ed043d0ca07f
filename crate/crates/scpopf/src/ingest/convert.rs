//! Per-unit conversion between [`FeederFile`] and [`Network`].

use std::collections::BTreeMap;

use scpopf_core::linalg::ComplexLu;
use scpopf_core::netmodel::{Generator, Network, Phase, PhaseBlock, PhaseMask};
use scpopf_core::Complex64;

use super::schema::{
    Base, Block, BranchKind, BranchRecord, BusRecord, FeederFile, GeneratorRecord, LoadRecord,
    Pair, SlackRecord, SCHEMA_VERSION,
};
use super::IngestError;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn c(p: Pair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

fn pair(z: Complex64) -> Pair {
    [z.re, z.im]
}

fn block_from(m: &Block, scale: f64) -> PhaseBlock {
    m.map(|row| row.map(|p| c(p) * scale))
}

fn block_to(y: &PhaseBlock, scale: f64) -> Block {
    y.map(|row| row.map(|z| pair(z * scale)))
}

/// Inverts `m` on the phases in `present`; entries outside them are zero.
pub fn invert_present(m: &PhaseBlock, present: [bool; 3]) -> Option<PhaseBlock> {
    let idx: Vec<usize> = (0..3).filter(|&p| present[p]).collect();
    let k = idx.len();
    let mut out = [[ZERO; 3]; 3];
    if k == 0 {
        return Some(out);
    }
    let sub: Vec<Complex64> = idx
        .iter()
        .flat_map(|&i| idx.iter().map(move |&j| m[i][j]))
        .collect();
    let inv = ComplexLu::factor(sub, k)?.inverse();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[i][j] = inv[a * k + b];
        }
    }
    Some(out)
}

fn bound(v: Option<f64>, base: f64, default: f64) -> f64 {
    v.map_or(default, |v| v / base)
}

fn unbound(v: f64, base: f64) -> Option<f64> {
    v.is_finite().then_some(v * base)
}

/// Converts a validated feeder file into a per-unit network.
pub fn to_network(file: &FeederFile) -> Result<Network, IngestError> {
    file.validate()?;
    let base = file.base;
    let masks: BTreeMap<&str, PhaseMask> = file
        .buses
        .iter()
        .map(|b| (b.id.as_str(), PhaseMask::parse(&b.phases).expect("validated")))
        .collect();

    let mut builder = Network::builder();
    for bus in &file.buses {
        builder = builder.bus(&bus.id, masks[bus.id.as_str()], bus.vmin_pu, bus.vmax_pu);
    }
    for br in &file.branches {
        let y = match br.kind {
            BranchKind::YPu => block_from(&br.matrix, 1.0),
            BranchKind::ZPu | BranchKind::ZOhm => {
                let scale = if br.kind == BranchKind::ZOhm {
                    1.0 / base.z_ohm()
                } else {
                    1.0
                };
                let present = match (masks.get(br.from.as_str()), masks.get(br.to.as_str())) {
                    (Some(f), Some(t)) => f.intersect(*t),
                    // let the network report the unknown endpoint
                    _ => [true; 3],
                };
                invert_present(&block_from(&br.matrix, scale), present).ok_or_else(|| {
                    IngestError::SingularImpedance {
                        from: br.from.clone(),
                        to: br.to.clone(),
                    }
                })?
            }
        };
        builder = builder.branch(&br.from, &br.to, y);
    }
    for load in &file.loads {
        builder = builder.load(
            &load.bus,
            load.phase.into(),
            Complex64::new(load.p_kw, load.q_kvar) / base.s_kva,
        );
    }
    for g in &file.generators {
        builder = builder.generator(Generator {
            bus: g.bus.clone(),
            phase: g.phase.into(),
            p_min: bound(g.pmin_kw, base.s_kva, f64::NEG_INFINITY),
            p_max: bound(g.pmax_kw, base.s_kva, f64::INFINITY),
            q_min: bound(g.qmin_kvar, base.s_kva, f64::NEG_INFINITY),
            q_max: bound(g.qmax_kvar, base.s_kva, f64::INFINITY),
        });
    }
    builder = builder.slack(&file.slack.bus, file.slack.v_pu.map(c));
    Ok(builder.build()?)
}

/// Converts a network back to physical units on `base`, writing branches in
/// the requested form.
pub fn from_network(
    network: &Network,
    base: Base,
    kind: BranchKind,
) -> Result<FeederFile, IngestError> {
    let mut branches = Vec::with_capacity(network.branches().len());
    for br in network.branches() {
        let matrix = match kind {
            BranchKind::YPu => block_to(&br.y, 1.0),
            BranchKind::ZPu | BranchKind::ZOhm => {
                let present = [Phase::A, Phase::B, Phase::C].map(|p| br.y[p.index()][p.index()] != ZERO);
                let z = invert_present(&br.y, present).ok_or_else(|| {
                    IngestError::SingularImpedance {
                        from: br.from.clone(),
                        to: br.to.clone(),
                    }
                })?;
                let scale = if kind == BranchKind::ZOhm {
                    base.z_ohm()
                } else {
                    1.0
                };
                block_to(&z, scale)
            }
        };
        branches.push(BranchRecord {
            from: br.from.clone(),
            to: br.to.clone(),
            kind,
            matrix,
        });
    }
    let slack = network.slack();
    Ok(FeederFile {
        version: SCHEMA_VERSION,
        base,
        buses: network
            .buses()
            .iter()
            .map(|b| BusRecord {
                id: b.id.clone(),
                phases: b.phases.to_string(),
                vmin_pu: b.vmin,
                vmax_pu: b.vmax,
            })
            .collect(),
        branches,
        loads: network
            .loads()
            .iter()
            .map(|l| LoadRecord {
                bus: l.bus.clone(),
                phase: l.phase.into(),
                p_kw: l.s.re * base.s_kva,
                q_kvar: l.s.im * base.s_kva,
            })
            .collect(),
        generators: network
            .generators()
            .iter()
            .map(|g| GeneratorRecord {
                bus: g.bus.clone(),
                phase: g.phase.into(),
                pmin_kw: unbound(g.p_min, base.s_kva),
                pmax_kw: unbound(g.p_max, base.s_kva),
                qmin_kvar: unbound(g.q_min, base.s_kva),
                qmax_kvar: unbound(g.q_max, base.s_kva),
            })
            .collect(),
        slack: SlackRecord {
            bus: slack.bus.clone(),
            v_pu: slack.voltage.map(pair),
        },
    })
}
