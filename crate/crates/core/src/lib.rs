//! Simulation and stability analysis of multi-commodity dynamical flow
//! networks.
//!
//! States are stored cell-major: entry `i * K + k` is the density of
//! commodity `k` in cell `i`, following declaration order.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod functions;
pub mod generate;
pub mod model;
pub mod networks;
pub mod simulation;
pub mod state;
pub mod topology;

pub use dynamics::{AllocationRule, FlowField};
pub use error::{Error, Result};
pub use functions::{DemandFunction, SupplyFunction};
pub use model::{CommoditySpec, Mtn, MtnDraft, ValidationReport};
pub use simulation::{integrate, IntegrationMethod, IntegratorConfig, Trajectory};
pub use state::{InflowArray, StateArray};
pub use topology::NetworkTopology;
