//! Simulation and certification toolkit for digital control of
//! negative-imaginary (NI) plants with discrete-time hybrid
//! integrator-gain system (HIGS) controllers.
//!
//! The crate covers the full workflow:
//!
//! - [`plant`]: linear state-space models, zero-order-hold discretization,
//!   frequency responses, and a built-in identified model of a two-stage
//!   MEMS force sensor.
//! - [`ni`]: numerical NI certification — frequency-sweep eigenvalue tests,
//!   storage-matrix certificates, certificate synthesis, and the
//!   closed-loop stability preconditions.
//! - [`higs`] / [`multi_higs`]: the scalar bimodal and trimodal HIGS
//!   switching laws and their parallel MIMO composition.
//! - [`sim`]: positive-feedback closed-loop simulation with dissipation and
//!   Lyapunov monitors, stepped-sine frequency-response estimation, step
//!   metrics, and a sensor-noise study.
//! - [`describing_fn`]: the continuous-time HIGS describing function and
//!   the channel tuning rule derived from it.

pub mod describing_fn;
pub mod error;
pub mod higs;
mod linalg;
pub mod multi_higs;
pub mod ni;
pub mod plant;
pub mod sim;

pub use error::{Error, Result};
pub use higs::{Flavor, HigsParams, HigsState, Mode};
pub use multi_higs::{ChannelSpec, GainMatrix, MultiHigs};
pub use plant::{ContinuousStateSpace, DiscreteStateSpace, FrequencyResponseSample};
