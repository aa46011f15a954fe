//! Capacity regions, the stability region and the free-flow equilibrium.

use crate::error::{Error, Result};
use crate::functions::{DemandFunction, SupplyFunction, INVERSE_BRACKET};
use crate::model::{leontief_inverse_apply, Mtn};
use crate::state::{InflowArray, StateArray};

/// Slack below which a strict inequality is reported as a boundary case.
pub const STRICT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Inside,
    /// Within `STRICT_SLACK` of the boundary, on either side.
    Boundary,
    Outside,
}

impl Membership {
    pub fn from_slack(slack: f64) -> Self {
        if slack > STRICT_SLACK {
            Membership::Inside
        } else if slack >= -STRICT_SLACK {
            Membership::Boundary
        } else {
            Membership::Outside
        }
    }
}

/// A per-commodity throughput vector offered to one non-on-ramp cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityQuery {
    pub cell: usize,
    pub zeta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityCheck {
    /// `s_i(Σ_k d⁻¹(ζ_k)) − Σ_k ζ_k`; `−∞` when some `ζ_k` exceeds its demand range.
    pub slack: f64,
    pub membership: Membership,
    /// Commodity whose throughput no density can carry.
    pub out_of_range: Option<usize>,
}

impl CapacityCheck {
    pub fn contains(&self) -> bool {
        self.membership == Membership::Inside
    }
}

/// Membership of `q.zeta` in the capacity region of cell `q.cell`.
pub fn capacity_contains(mtn: &Mtn, q: &CapacityQuery) -> Result<CapacityCheck> {
    let kc = mtn.num_commodities();
    if q.cell >= mtn.num_cells() {
        return Err(Error::InvalidArgument(format!("cell index {} out of range", q.cell)));
    }
    let supply = mtn.supply(q.cell).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "cell {} is an on-ramp and has no capacity region",
            mtn.topology().cell_id(q.cell)
        ))
    })?;
    if q.zeta.len() != kc {
        return Err(Error::Dimension {
            what: "capacity query",
            expected: kc,
            found: q.zeta.len(),
        });
    }
    if q.zeta.iter().any(|z| !(*z >= 0.0) || !z.is_finite()) {
        return Err(Error::InvalidArgument("throughputs must be finite and nonnegative".into()));
    }
    let mut density = 0.0;
    for (k, &z) in q.zeta.iter().enumerate() {
        match mtn.demand(q.cell, k).inverse(z) {
            Ok(x) => density += x,
            Err(Error::DemandOutOfRange { .. }) => {
                return Ok(CapacityCheck {
                    slack: f64::NEG_INFINITY,
                    membership: Membership::Outside,
                    out_of_range: Some(k),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let slack = supply.value(density) - q.zeta.iter().sum::<f64>();
    Ok(CapacityCheck {
        slack,
        membership: Membership::from_slack(slack),
        out_of_range: None,
    })
}

/// `ζ^k = (I − (R^k)ᵀ)⁻¹ λ^k` for every commodity, cell-major.
pub fn transported_inflows(mtn: &Mtn, inflow: &InflowArray) -> Result<Vec<f64>> {
    let (n, kc) = (mtn.num_cells(), mtn.num_commodities());
    let mut zeta = vec![0.0; n * kc];
    for k in 0..kc {
        let u = leontief_inverse_apply(mtn.routing(k), &inflow.commodity_vector(k))?;
        for i in 0..n {
            // exact zeros stay zero; tiny negative round-off is clipped
            zeta[i * kc + k] = u[i].max(0.0);
        }
    }
    Ok(zeta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellCapacity {
    pub cell: usize,
    pub zeta: Vec<f64>,
    pub check: CapacityCheck,
}

/// Capacity verdict of every non-on-ramp cell for one inflow array.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRegionReport {
    pub cells: Vec<CellCapacity>,
}

impl StabilityRegionReport {
    pub fn contains(&self) -> bool {
        self.cells.iter().all(|c| c.check.contains())
    }

    /// Cells whose transported inflow is not strictly inside their capacity region.
    pub fn failing(&self) -> impl Iterator<Item = &CellCapacity> {
        self.cells.iter().filter(|c| !c.check.contains())
    }

    pub fn on_boundary(&self) -> bool {
        self.cells
            .iter()
            .any(|c| c.check.membership == Membership::Boundary)
            && self
                .cells
                .iter()
                .all(|c| c.check.membership != Membership::Outside)
    }

    pub fn min_slack(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.check.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn stability_region_contains(mtn: &Mtn, inflow: &InflowArray) -> Result<StabilityRegionReport> {
    let kc = mtn.num_commodities();
    let zeta = transported_inflows(mtn, inflow)?;
    let mut cells = Vec::new();
    for i in (0..mtn.num_cells()).filter(|&i| !mtn.topology().is_onramp(i)) {
        let q = CapacityQuery {
            cell: i,
            zeta: zeta[i * kc..(i + 1) * kc].to_vec(),
        };
        let check = capacity_contains(mtn, &q)?;
        cells.push(CellCapacity {
            cell: i,
            zeta: q.zeta,
            check,
        });
    }
    Ok(StabilityRegionReport { cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub x_star: StateArray,
    /// Transported inflows, cell-major.
    pub zeta: Vec<f64>,
    pub in_free_flow: bool,
    /// `s_i(Σ_k x*_i) − Σ_k ζ_i` per cell; `None` on on-ramps.
    pub slacks: Vec<Option<f64>>,
}

/// Candidate free-flow equilibrium `x*_i = d_i⁻¹(ζ_i)`.
///
/// The candidate is an equilibrium exactly when `in_free_flow` holds, i.e.
/// when the inflow lies strictly inside the stability region.
pub fn free_flow_equilibrium(mtn: &Mtn, inflow: &InflowArray) -> Result<EquilibriumResult> {
    let (n, kc) = (mtn.num_cells(), mtn.num_commodities());
    let zeta = transported_inflows(mtn, inflow)?;
    let mut x = vec![0.0; n * kc];
    for i in 0..n {
        for k in 0..kc {
            let z = zeta[i * kc + k];
            x[i * kc + k] = mtn.demand(i, k).inverse(z).map_err(|e| match e {
                Error::DemandOutOfRange { .. } => Error::CapacityExceeded {
                    cell: mtn.topology().cell_id(i).to_owned(),
                    commodity: mtn.commodity(k).id.clone(),
                    flow: z,
                },
                other => other,
            })?;
        }
    }
    let x_star = StateArray::for_mtn(mtn, x)?;
    let slacks: Vec<Option<f64>> = (0..n)
        .map(|i| {
            mtn.supply(i).map(|s| {
                s.value(x_star.cell_total(i)) - zeta[i * kc..(i + 1) * kc].iter().sum::<f64>()
            })
        })
        .collect();
    let in_free_flow = slacks.iter().flatten().all(|&s| s > STRICT_SLACK);
    Ok(EquilibriumResult {
        x_star,
        zeta,
        in_free_flow,
        slacks,
    })
}

/// Largest throughput a cell can sustain with a single demand curve:
/// `sup { d(ξ) : d(ξ) < s(ξ) }`, found by bisecting the crossing of the
/// increasing demand and the nonincreasing supply.
pub fn single_commodity_capacity(demand: &DemandFunction, supply: &SupplyFunction) -> f64 {
    crossing_capacity(|xi| demand.value(xi), demand.supremum(), supply)
}

/// Aggregate throughput bound of a cell, using the largest of its commodity
/// demands at every density.
pub fn aggregate_capacity(mtn: &Mtn, cell: usize) -> Option<f64> {
    let supply = mtn.supply(cell)?;
    let kc = mtn.num_commodities();
    let sup = (0..kc)
        .map(|k| mtn.demand(cell, k).supremum())
        .fold(0.0, f64::max);
    Some(crossing_capacity(
        |xi| {
            (0..kc)
                .map(|k| mtn.demand(cell, k).value(xi))
                .fold(0.0, f64::max)
        },
        sup,
        supply,
    ))
}

fn crossing_capacity(demand: impl Fn(f64) -> f64, supremum: f64, supply: &SupplyFunction) -> f64 {
    let gap = |xi: f64| demand(xi) - supply.value(xi);
    if gap(INVERSE_BRACKET) < 0.0 {
        // curves do not meet on the bracket; capacity is the demand's reach
        return supremum.min(supply.infimum().max(demand(INVERSE_BRACKET)));
    }
    let (mut lo, mut hi) = (0.0_f64, INVERSE_BRACKET);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    demand(lo)
}

/// Largest `θ` (up to `cap`) with `θ λ` strictly inside the stability region.
pub fn stability_margin(mtn: &Mtn, inflow: &InflowArray, cap: f64) -> Result<f64> {
    let inside = |theta: f64| -> Result<bool> {
        Ok(stability_region_contains(mtn, &inflow.scaled(theta))?.contains())
    };
    if inside(cap)? {
        return Ok(cap);
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if inside(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
