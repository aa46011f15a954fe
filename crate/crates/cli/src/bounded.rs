//! Inflows the network can carry at all, congested or not.
//!
//! At any equilibrium every cell passes on what it receives, each commodity
//! only moves along its routing support, and a cell's throughput is bounded
//! by its capacity (the largest demand its supply can still absorb). The
//! bounded region is the set of inflows for which such a flow pattern exists;
//! it is found by maximising the feasible multiple `θ` of `λ` with a linear
//! program.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use mdfn_core::analysis::aggregate_capacity;
use mdfn_core::{InflowArray, Mtn};

/// Relative tolerance for reporting `λ` on the boundary of the region.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;
/// Cap on `θ`; inflows that can be scaled this far count as unconstrained.
pub const THETA_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundedMembership {
    Inside,
    Boundary,
    Outside,
}

impl BoundedMembership {
    pub fn name(self) -> &'static str {
        match self {
            BoundedMembership::Inside => "inside",
            BoundedMembership::Boundary => "boundary",
            BoundedMembership::Outside => "outside",
        }
    }

    /// Closed region: boundary points belong to it.
    pub fn contains(self) -> bool {
        self != BoundedMembership::Outside
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedCheck {
    /// Largest `θ ≤ THETA_CAP` such that `θ λ` can be carried.
    pub theta_max: f64,
    pub membership: BoundedMembership,
}

pub fn bounded_region_check(mtn: &Mtn, inflow: &InflowArray) -> anyhow::Result<BoundedCheck> {
    let n = mtn.num_cells();
    let kc = mtn.num_commodities();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let theta = lp.add_var(1.0, (0.0, THETA_CAP));
    // one flow variable per routing entry
    let mut edges = Vec::new();
    for k in 0..kc {
        for r in mtn.routes(k) {
            edges.push((k, r.from, r.to, lp.add_var(0.0, (0.0, f64::INFINITY))));
        }
    }
    // throughput of (cell, commodity): θ λ + inflow from upstream cells
    let through = |i: usize, k: usize| {
        let mut terms = vec![(theta, inflow.get(i, k))];
        terms.extend(edges.iter().filter(|e| e.0 == k && e.2 == i).map(|e| (e.3, 1.0)));
        terms
    };
    for i in 0..n {
        for k in 0..kc {
            let mut balance = through(i, k);
            if !mtn.topology().is_offramp(i) {
                balance.extend(edges.iter().filter(|e| e.0 == k && e.1 == i).map(|e| (e.3, -1.0)));
                lp.add_constraint(balance.as_slice(), ComparisonOp::Eq, 0.0);
            }
            let sup = mtn.demand(i, k).supremum();
            if sup.is_finite() {
                lp.add_constraint(through(i, k).as_slice(), ComparisonOp::Le, sup);
            }
        }
        if let Some(cap) = aggregate_capacity(mtn, i) {
            let mut total = vec![(theta, (0..kc).map(|k| inflow.get(i, k)).sum())];
            total.extend(edges.iter().filter(|e| e.2 == i).map(|e| (e.3, 1.0)));
            lp.add_constraint(total.as_slice(), ComparisonOp::Le, cap);
        }
    }
    let solution = lp
        .solve()
        .map_err(|e| anyhow::anyhow!("bounded-region linear program failed: {e}"))?;
    let theta_max = solution[theta];
    let membership = if (theta_max - 1.0).abs() <= BOUNDARY_TOLERANCE {
        BoundedMembership::Boundary
    } else if theta_max > 1.0 {
        BoundedMembership::Inside
    } else {
        BoundedMembership::Outside
    };
    Ok(BoundedCheck {
        theta_max,
        membership,
    })
}
