use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid network:\n{0}")]
    InvalidNetwork(ValidationReport),

    #[error("invalid function: {0}")]
    InvalidFunction(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: expected length {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("flow {flow} is outside the demand range (supremum {supremum})")]
    DemandOutOfRange { flow: f64, supremum: f64 },

    #[error("routing matrix is not Schur stable: {0}")]
    NotSchurStable(String),

    #[error("the free-flow rule is undefined outside the free-flow region (cell {cell} is congested)")]
    OutsideFreeFlow { cell: String },

    #[error("state is not in the free-flow region (cell {cell} has slack {slack})")]
    NotFreeFlow { cell: String, slack: f64 },

    #[error("inflow exceeds network capacity: cell {cell}, commodity {commodity}, transported inflow {flow}")]
    CapacityExceeded {
        cell: String,
        commodity: String,
        flow: f64,
    },

    #[error("state entry ({cell}, {commodity}) is negative: {value}")]
    NegativeState {
        cell: String,
        commodity: String,
        value: f64,
    },

    #[error("eigenvalue solver did not converge")]
    EigenSolver,

    #[error("step size too large: entry ({cell}, {commodity}) reached {value} at t = {time}")]
    StepSize {
        time: f64,
        cell: String,
        commodity: String,
        value: f64,
    },

    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
