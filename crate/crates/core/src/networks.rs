//! Reference networks.

use crate::functions::{DemandFunction, SupplyFunction};
use crate::model::{CommoditySpec, Mtn};
use crate::state::InflowArray;
use crate::topology::NetworkTopology;

/// One on-ramp `1` splitting into off-ramps `2` and `3`, shared by two
/// commodities. Commodity `a` splits evenly, commodity `b` only uses cell 2.
/// Demands are `d(ξ) = ξ`, supplies `s(ξ) = 2 − ξ`.
pub fn diverge_junction() -> Mtn {
    let topology =
        NetworkTopology::new("w", [("1", "w", "v"), ("2", "v", "w"), ("3", "v", "w")]).unwrap();
    let demands = vec![DemandFunction::linear(1.0); 3];
    let a = CommoditySpec::from_routes("a", 3, &[(0, 1, 0.5), (0, 2, 0.5)], demands.clone());
    let b = CommoditySpec::from_routes("b", 3, &[(0, 1, 1.0)], demands);
    let supply = SupplyFunction::affine(2.0, 1.0);
    Mtn::new(
        topology,
        vec![a, b],
        vec![None, Some(supply.clone()), Some(supply)],
    )
    .expect("diverge junction is a valid network")
}

/// Inflow `(λ_a, λ_b)` on the on-ramp of a two-commodity, single on-ramp
/// network such as [`diverge_junction`].
pub fn diverge_inflow(mtn: &Mtn, lambda_a: f64, lambda_b: f64) -> InflowArray {
    let onramp = mtn.topology().onramps().next().expect("network has an on-ramp");
    InflowArray::from_entries(mtn, &[(onramp, 0, lambda_a), (onramp, 1, lambda_b)])
        .expect("valid on-ramp inflow")
}

/// The diverge junction with saturating demands `ξ / (1 + ξ)` and constant
/// supply 3: no state is ever congested.
pub fn uncongestible_diverge() -> Mtn {
    let topology =
        NetworkTopology::new("w", [("1", "w", "v"), ("2", "v", "w"), ("3", "v", "w")]).unwrap();
    let demands = vec![DemandFunction::saturating(1.0, 1.0); 3];
    let a = CommoditySpec::from_routes("a", 3, &[(0, 1, 0.5), (0, 2, 0.5)], demands.clone());
    let b = CommoditySpec::from_routes("b", 3, &[(0, 1, 1.0)], demands);
    let supply = SupplyFunction::constant(3.0);
    Mtn::new(
        topology,
        vec![a, b],
        vec![None, Some(supply.clone()), Some(supply)],
    )
    .expect("valid network")
}

/// Single-commodity merge then diverge: on-ramps `1`, `2` feed cell `3`,
/// which splits 60/40 into off-ramps `4` and `5`. Supplies `s(ξ) = 2 − ξ`.
pub fn merge_diverge() -> Mtn {
    let topology = NetworkTopology::new(
        "w",
        [
            ("1", "w", "u"),
            ("2", "w", "u"),
            ("3", "u", "v"),
            ("4", "v", "w"),
            ("5", "v", "w"),
        ],
    )
    .unwrap();
    let k = CommoditySpec::from_routes(
        "k",
        5,
        &[(0, 2, 1.0), (1, 2, 1.0), (2, 3, 0.6), (2, 4, 0.4)],
        vec![DemandFunction::linear(1.0); 5],
    );
    let supply = Some(SupplyFunction::affine(2.0, 1.0));
    Mtn::new(
        topology,
        vec![k],
        vec![None, None, supply.clone(), supply.clone(), supply],
    )
    .expect("valid network")
}
