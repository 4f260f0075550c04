//! Quasi-static time-series simulation of unbalanced radial distribution
//! feeders: network model, line constants, device models, a
//! forward/backward sweep solver and an hourly smart-meter driven annual loop.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the annual pipeline uses.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod devices;
pub mod linalg;
pub mod linecalc;
pub mod model;
pub mod phase;
pub mod scalar;
pub mod solver;
pub mod stats;
pub mod timeseries;

pub use model::{load_model, parse_model, validate_radiality, NetworkModel, ModelError, TopologyReport};
pub use phase::{Phase, PhaseSet};
pub use scalar::{Cplx, Scalar};

pub type Circuit = solver::Circuit<f64>;
pub type SnapshotSolution = solver::SnapshotSolution<f64>;
pub type SolveOptions = solver::SolveOptions<f64>;
pub type TapChanger = devices::TapChanger<f64>;
pub type LoadSnapshot = devices::LoadSnapshot<f64>;
pub type PhaseImpedanceMatrix = linecalc::PhaseImpedanceMatrix<f64>;
pub type Complex = Cplx<f64>;
