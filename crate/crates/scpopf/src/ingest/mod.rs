//! Feeder files: parsing, per-unit conversion, load randomization and
//! synthetic feeder generation.

mod convert;
mod generate;
mod randomize;
mod schema;

use thiserror::Error;

use scpopf_core::NetworkError;

pub use convert::{from_network, invert_present, to_network};
pub use generate::{generate_feeder, with_tie_line, FeederSpec, ImpedanceTemplate, PhasePolicy};
pub use randomize::{randomize_feeder, randomize_loads, RandomizationSpec};
pub use schema::{
    parse_feeder, parse_feeder_reader, read_feeder, Base, Block, BranchKind, BranchRecord,
    BusRecord, FeederFile, GeneratorRecord, LoadRecord, Pair, PhaseName, SlackRecord,
    SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {error}")]
    Io { path: String, error: std::io::Error },
    /// Carries the serde message, which names the offending field and its
    /// line and column.
    #[error("schema violation: {0}")]
    Schema(serde_json::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion(u32),
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("impedance block of branch {from} -> {to} is not invertible")]
    SingularImpedance { from: String, to: String },
    #[error("invalid randomization: {0}")]
    Randomization(String),
    #[error("cannot generate feeder: {0}")]
    Generate(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl From<serde_json::Error> for IngestError {
    fn from(e: serde_json::Error) -> Self {
        Self::Schema(e)
    }
}

impl IngestError {
    pub(crate) fn invalid(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            location: location.into(),
            message: message.into(),
        }
    }
}
