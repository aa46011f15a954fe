//! Capacity and stability regions, equilibria, linearisation and basin
//! estimates.

pub mod basin;
pub mod capacity;
pub mod contraction;
pub mod spectral;

pub use basin::{delta_bar, delta_bar_with, DeltaBar, DeltaBarMethod, DeltaBarOptions};
pub use capacity::{
    aggregate_capacity, capacity_contains, free_flow_equilibrium, single_commodity_capacity,
    stability_margin, stability_region_contains, transported_inflows, CapacityCheck,
    CapacityQuery, CellCapacity, EquilibriumResult, Membership, StabilityRegionReport,
    STRICT_SLACK,
};
pub use contraction::{nonexpansiveness_probe, NonexpansivenessReport};
pub use spectral::{
    certify, hurwitz_check, jacobian_free_flow, l1_matrix_measure, HurwitzCheck,
    StabilityCertificate, HURWITZ_MARGIN,
};
