//! File formats, feeder tooling and the command-line front end for
//! [`scpopf_core`].

pub mod artifacts;
pub mod cli;
pub mod ingest;
