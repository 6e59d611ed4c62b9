//! Hamiltonian learning for a two-qubit cross-resonance gate: forward model,
//! noise channels, simulated and recorded oracles, Fisher information, query
//! optimization, estimators and the active-learning loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a < b)` also rejects NaN

pub mod config;
pub mod error;
pub mod estimate;
pub mod fisher;
pub mod hal;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod oracle;
pub mod qopt;
pub mod space;

pub use error::{Error, Result};
pub use model::{JParams, LambdaParams, Measurement, Preparation, Query};
pub use noise::{DecoherenceModel, NoiseModel, PulseShapeModel, ReadoutModel};
pub use oracle::{Dataset, Oracle, RngStream, Simulator};
pub use space::{GrowthPolicy, QuerySpace};
