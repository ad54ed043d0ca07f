//! Hybrid sequential convex programming for unbalanced three-phase AC optimal
//! power flow.
//!
//! The crate is `no_std` and only needs `alloc`. It holds the numerical core:
//!
//! - [`netmodel`]: bus-phase indexing and Y-bus assembly from 3×3 branch blocks.
//! - [`pfcore`]: fixed-point current-injection power flow used as an oracle.
//! - [`conic`]: a small conic program representation (QP + second-order cones)
//!   and a self-contained primal-dual interior-point backend.
//! - [`convex`]: McCormick envelopes, first-order surrogates and the per-iteration
//!   convex OPF subproblem.
//! - [`scp`]: the outer sequential convex programming loop with the adaptive
//!   alignment trust region.
//! - [`verify`]: a posteriori verification, error-bound checks and a brute-force
//!   reference optimum for tiny instances.
//!
//! File formats, ingestion and the command-line tool live in the `scpopf` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod conic;
pub mod convex;
pub mod linalg;
pub mod netmodel;
pub mod pfcore;
pub mod scp;
pub mod verify;

pub use num_complex::Complex64;

pub use conic::{ConicProgram, ConicSolution, InteriorPoint, SolveStatus, Tolerances};
pub use convex::{LinearisationPoint, McCormickBounds, SubproblemOptions, VariableMap};
pub use netmodel::{
    assemble_ybus, nominal_phasors, BusPhaseIndex, Network, NetworkBuilder, NetworkError, Phase,
    PhaseMask, YBus,
};
pub use pfcore::{solve_power_flow, OracleResult, PowerFlowError, PowerFlowOptions};
pub use scp::{solve_opf, ScpError, ScpOptions, Solution, TrustRegionConfig};
pub use verify::{optimality_gap, reference_optimum_tiny, verify_solution, VerificationReport};
