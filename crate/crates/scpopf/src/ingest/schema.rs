//! Versioned JSON feeder description.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use scpopf_core::netmodel::{Phase, PhaseMask};

use super::IngestError;

pub const SCHEMA_VERSION: u32 = 1;

/// `[re, im]`.
pub type Pair = [f64; 2];
/// Row-major 3×3 block indexed by phase a, b, c.
pub type Block = [[Pair; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub version: u32,
    pub base: Base,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
    #[serde(default)]
    pub generators: Vec<GeneratorRecord>,
    pub slack: SlackRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Base {
    pub s_kva: f64,
    pub v_kv: f64,
}

impl Base {
    /// Impedance base in ohms.
    pub fn z_ohm(&self) -> f64 {
        self.v_kv * self.v_kv * 1000.0 / self.s_kva
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub phases: String,
    pub vmin_pu: f64,
    pub vmax_pu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// Series impedance in ohms.
    ZOhm,
    /// Series impedance in per-unit.
    ZPu,
    /// Series admittance in per-unit.
    YPu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub from: String,
    pub to: String,
    pub kind: BranchKind,
    pub matrix: Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseName {
    A,
    B,
    C,
}

impl From<PhaseName> for Phase {
    fn from(p: PhaseName) -> Phase {
        match p {
            PhaseName::A => Phase::A,
            PhaseName::B => Phase::B,
            PhaseName::C => Phase::C,
        }
    }
}

impl From<Phase> for PhaseName {
    fn from(p: Phase) -> PhaseName {
        match p {
            Phase::A => PhaseName::A,
            Phase::B => PhaseName::B,
            Phase::C => PhaseName::C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub bus: String,
    pub phase: PhaseName,
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Generator limits; `null` means unbounded on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub bus: String,
    pub phase: PhaseName,
    pub pmin_kw: Option<f64>,
    pub pmax_kw: Option<f64>,
    pub qmin_kvar: Option<f64>,
    pub qmax_kvar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackRecord {
    pub bus: String,
    pub v_pu: [Pair; 3],
}

impl FeederFile {
    /// Checks what the JSON schema alone cannot: version, bases, unique ids,
    /// phase strings and finiteness.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.version != SCHEMA_VERSION {
            return Err(IngestError::UnsupportedVersion(self.version));
        }
        if !(self.base.s_kva > 0.0 && self.base.s_kva.is_finite()) {
            return Err(IngestError::invalid("base.s_kva", "must be positive"));
        }
        if !(self.base.v_kv > 0.0 && self.base.v_kv.is_finite()) {
            return Err(IngestError::invalid("base.v_kv", "must be positive"));
        }
        let mut seen = BTreeSet::new();
        for (k, bus) in self.buses.iter().enumerate() {
            if !seen.insert(bus.id.as_str()) {
                return Err(IngestError::DuplicateBus(bus.id.clone()));
            }
            if PhaseMask::parse(&bus.phases).is_none() {
                return Err(IngestError::invalid(
                    format!("buses[{k}].phases"),
                    format!("`{}` is not a phase set", bus.phases),
                ));
            }
            finite(format!("buses[{k}].vmin_pu"), bus.vmin_pu)?;
            finite(format!("buses[{k}].vmax_pu"), bus.vmax_pu)?;
        }
        for (k, br) in self.branches.iter().enumerate() {
            for row in &br.matrix {
                for z in row {
                    finite(format!("branches[{k}].matrix"), z[0])?;
                    finite(format!("branches[{k}].matrix"), z[1])?;
                }
            }
        }
        for (k, load) in self.loads.iter().enumerate() {
            finite(format!("loads[{k}].p_kw"), load.p_kw)?;
            finite(format!("loads[{k}].q_kvar"), load.q_kvar)?;
        }
        for (k, g) in self.generators.iter().enumerate() {
            for (name, v) in [
                ("pmin_kw", g.pmin_kw),
                ("pmax_kw", g.pmax_kw),
                ("qmin_kvar", g.qmin_kvar),
                ("qmax_kvar", g.qmax_kvar),
            ] {
                if let Some(v) = v {
                    finite(format!("generators[{k}].{name}"), v)?;
                }
            }
        }
        for v in &self.slack.v_pu {
            finite("slack.v_pu", v[0])?;
            finite("slack.v_pu", v[1])?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("feeder files always serialize");
        s.push('\n');
        s
    }
}

fn finite(location: impl Into<String>, v: f64) -> Result<(), IngestError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(IngestError::invalid(location, "must be finite"))
    }
}

/// Parses and validates a feeder document.
pub fn parse_feeder(text: &str) -> Result<FeederFile, IngestError> {
    let file: FeederFile = serde_json::from_str(text)?;
    file.validate()?;
    Ok(file)
}

pub fn parse_feeder_reader<R: Read>(reader: R) -> Result<FeederFile, IngestError> {
    let file: FeederFile = serde_json::from_reader(reader)?;
    file.validate()?;
    Ok(file)
}

pub fn read_feeder(path: &Path) -> Result<FeederFile, IngestError> {
    let text = fs::read_to_string(path).map_err(|error| IngestError::Io {
        path: path.display().to_string(),
        error,
    })?;
    parse_feeder(&text)
}
