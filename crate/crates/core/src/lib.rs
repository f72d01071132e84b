//! Gate-level simulation of the discretized Arnold cat map on a quantum register.
//!
//! The crate is split along the pipeline:
//!
//! - [`classical`]: exact integer oracle for the lattice map, densities and
//!   classical errors.
//! - [`circuit`]: reversible modular adders, map iterations, line-state
//!   preparation and the QFT as explicit gate sequences.
//! - [`engine`] and [`noise`]: dense state-vector simulation with optional
//!   unitary eigenphase noise.
//! - [`experiments`]: echo, fidelity-decay and scaling experiments.
//! - [`io`]: PGM density images, CSV series and state snapshots.

pub mod circuit;
pub mod classical;
pub mod engine;
pub mod experiments;
pub mod io;
pub mod noise;

mod error;

pub use circuit::{Circuit, Gate, GateCount, GateKind, Qubit, Register, RegisterLayout};
pub use classical::{CatConstants, CellIndex, DensityGrid, Direction, ErrorSpec, LatticeSpec};
pub use engine::StateVector;
pub use error::{Error, Result};
pub use noise::NoiseModel;
