//! Cell-to-cell flows under the allocation rules and the mass-conservation
//! right-hand side.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Mtn;
use crate::state::{InflowArray, StateArray};

/// How flows are scaled when a receiving cell cannot absorb its demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocationRule {
    /// Demand is always met; undefined once any supply binds.
    FreeFlowOnly,
    /// All outflows of a cell share one scaling factor, set by its most
    /// congested downstream cell.
    Fifo,
    /// Each flow is scaled by the congestion factor of its own destination.
    NonFifo,
}

impl AllocationRule {
    pub const ALL: [AllocationRule; 3] = [
        AllocationRule::FreeFlowOnly,
        AllocationRule::Fifo,
        AllocationRule::NonFifo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AllocationRule::FreeFlowOnly => "free_flow",
            AllocationRule::Fifo => "fifo",
            AllocationRule::NonFifo => "non_fifo",
        }
    }
}

impl fmt::Display for AllocationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllocationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "free_flow" | "free_flow_only" | "freeflow" => Ok(AllocationRule::FreeFlowOnly),
            "fifo" => Ok(AllocationRule::Fifo),
            "non_fifo" | "nonfifo" => Ok(AllocationRule::NonFifo),
            other => Err(Error::InvalidArgument(format!("unknown allocation rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub from: usize,
    pub to: usize,
    pub commodity: usize,
    pub value: f64,
}

/// Flows on every positive routing entry plus per-cell total outflows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    commodities: usize,
    /// Ordered by commodity, then `(from, to)`.
    pub flows: Vec<Flow>,
    /// Total outflow per `(cell, commodity)`, cell-major.
    pub outflows: Vec<f64>,
}

impl FlowField {
    /// `f_ij` of commodity `k`; zero off the routing support.
    pub fn flow(&self, from: usize, to: usize, commodity: usize) -> f64 {
        self.flows
            .binary_search_by(|f| (f.commodity, f.from, f.to).cmp(&(commodity, from, to)))
            .map_or(0.0, |idx| self.flows[idx].value)
    }

    pub fn outflow(&self, cell: usize, commodity: usize) -> f64 {
        self.outflows[cell * self.commodities + commodity]
    }

    /// Total inflow of all commodities into `cell`.
    pub fn total_inflow(&self, cell: usize) -> f64 {
        self.flows.iter().filter(|f| f.to == cell).map(|f| f.value).sum()
    }

    pub fn max_abs_difference(&self, other: &FlowField) -> f64 {
        let a = self
            .flows
            .iter()
            .zip(&other.flows)
            .map(|(x, y)| (x.value - y.value).abs());
        let b = self
            .outflows
            .iter()
            .zip(&other.outflows)
            .map(|(x, y)| (x - y).abs());
        a.chain(b).fold(0.0, f64::max)
    }
}

/// Scratch buffers reused across right-hand-side evaluations.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    /// `d_i^k(x_i^k)`, cell-major.
    demand: Vec<f64>,
    /// Aggregate demand routed into each cell.
    incoming: Vec<f64>,
    /// `min(1, s_j / incoming_j)` per receiving cell.
    factor: Vec<f64>,
    /// FIFO factor per sending cell.
    gamma: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(mtn: &Mtn) -> Self {
        let n = mtn.num_cells();
        Self {
            demand: vec![0.0; n * mtn.num_commodities()],
            incoming: vec![0.0; n],
            factor: vec![1.0; n],
            gamma: vec![1.0; n],
        }
    }
}

fn cell_total(x: &[f64], i: usize, kc: usize) -> f64 {
    x[i * kc..(i + 1) * kc].iter().map(|v| v.max(0.0)).sum()
}

fn evaluate_demands(mtn: &Mtn, x: &[f64], ws: &mut Workspace) {
    let kc = mtn.num_commodities();
    for k in 0..kc {
        let demands = &mtn.commodity(k).demands;
        for (i, d) in demands.iter().enumerate() {
            ws.demand[i * kc + k] = d.value(x[i * kc + k]);
        }
    }
    ws.incoming.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..kc {
        for r in mtn.routes(k) {
            ws.incoming[r.to] += r.ratio * ws.demand[r.from * kc + k];
        }
    }
}

/// Per-cell supply slack `s_j − incoming_j`, `None` on on-ramps.
fn slacks_from(mtn: &Mtn, x: &[f64], ws: &Workspace) -> Vec<Option<f64>> {
    let kc = mtn.num_commodities();
    (0..mtn.num_cells())
        .map(|j| {
            mtn.supply(j)
                .map(|s| s.value(cell_total(x, j, kc)) - ws.incoming[j])
        })
        .collect()
}

fn first_congested(mtn: &Mtn, x: &[f64], ws: &Workspace) -> Option<usize> {
    let kc = mtn.num_commodities();
    (0..mtn.num_cells()).find(|&j| {
        mtn.supply(j)
            .is_some_and(|s| !(ws.incoming[j] < s.value(cell_total(x, j, kc))))
    })
}

fn congestion_factors(mtn: &Mtn, x: &[f64], ws: &mut Workspace, rule: AllocationRule) {
    let kc = mtn.num_commodities();
    for j in 0..mtn.num_cells() {
        ws.factor[j] = match mtn.supply(j) {
            Some(s) if ws.incoming[j] > 0.0 => {
                (s.value(cell_total(x, j, kc)) / ws.incoming[j]).min(1.0)
            }
            _ => 1.0,
        };
    }
    if rule == AllocationRule::Fifo {
        for i in 0..mtn.num_cells() {
            ws.gamma[i] = mtn
                .downstream(i)
                .iter()
                .map(|&j| ws.factor[j])
                .fold(1.0, f64::min);
        }
    }
}

#[inline]
fn route_scale(rule: AllocationRule, ws: &Workspace, from: usize, to: usize) -> f64 {
    match rule {
        AllocationRule::FreeFlowOnly => 1.0,
        AllocationRule::Fifo => ws.gamma[from],
        AllocationRule::NonFifo => ws.factor[to],
    }
}

/// Prepares `ws` for `rule` at state `x`; fails when the free-flow rule is
/// asked to act on a congested state.
fn prepare(mtn: &Mtn, x: &[f64], rule: AllocationRule, ws: &mut Workspace) -> Result<()> {
    evaluate_demands(mtn, x, ws);
    if rule == AllocationRule::FreeFlowOnly {
        if let Some(j) = first_congested(mtn, x, ws) {
            return Err(Error::OutsideFreeFlow {
                cell: mtn.topology().cell_id(j).to_owned(),
            });
        }
    } else {
        congestion_factors(mtn, x, ws, rule);
    }
    Ok(())
}

/// Writes the right-hand side `λ + Σ_j f_ji − z_i` at `x` into `out`.
/// Slightly negative entries of `x` are read as zero.
pub(crate) fn rhs_into(
    mtn: &Mtn,
    x: &[f64],
    inflow: &[f64],
    rule: AllocationRule,
    ws: &mut Workspace,
    out: &mut [f64],
) -> Result<()> {
    prepare(mtn, x, rule, ws)?;
    let kc = mtn.num_commodities();
    out.copy_from_slice(inflow);
    for k in 0..kc {
        for r in mtn.routes(k) {
            let f = route_scale(rule, ws, r.from, r.to) * r.ratio * ws.demand[r.from * kc + k];
            out[r.to * kc + k] += f;
            out[r.from * kc + k] -= f;
        }
    }
    for i in mtn.topology().offramps() {
        for k in 0..kc {
            out[i * kc + k] -= ws.demand[i * kc + k];
        }
    }
    Ok(())
}

/// Minimum supply slack over non-on-ramp cells (`+∞` if there are none).
pub(crate) fn min_slack_into(mtn: &Mtn, x: &[f64], ws: &mut Workspace) -> f64 {
    evaluate_demands(mtn, x, ws);
    slacks_from(mtn, x, ws)
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min)
}

/// Aggregate demand of all commodities routed into cell `j`.
pub fn aggregate_demand_into(mtn: &Mtn, x: &StateArray, j: usize) -> f64 {
    let kc = mtn.num_commodities();
    let mut total = 0.0;
    for k in 0..kc {
        for r in mtn.routes(k).iter().filter(|r| r.to == j) {
            total += r.ratio * mtn.demand(r.from, k).value(x.get(r.from, k));
        }
    }
    total
}

/// `s_j(Σ_k x_j^k) − aggregate_demand_into(j)` per cell, `None` on on-ramps.
pub fn free_flow_slacks(mtn: &Mtn, x: &StateArray) -> Vec<Option<f64>> {
    let mut ws = Workspace::new(mtn);
    evaluate_demands(mtn, x.as_slice(), &mut ws);
    slacks_from(mtn, x.as_slice(), &ws)
}

/// Whether every supply strictly exceeds the aggregate demand routed to it.
pub fn is_free_flow(mtn: &Mtn, x: &StateArray) -> bool {
    let mut ws = Workspace::new(mtn);
    evaluate_demands(mtn, x.as_slice(), &mut ws);
    first_congested(mtn, x.as_slice(), &ws).is_none()
}

/// Flow field of `rule` at `x`.
pub fn flows(mtn: &Mtn, x: &StateArray, rule: AllocationRule) -> Result<FlowField> {
    let kc = mtn.num_commodities();
    let mut ws = Workspace::new(mtn);
    prepare(mtn, x.as_slice(), rule, &mut ws)?;
    let mut field = FlowField {
        commodities: kc,
        flows: Vec::new(),
        outflows: vec![0.0; mtn.num_cells() * kc],
    };
    for k in 0..kc {
        for r in mtn.routes(k) {
            let value = route_scale(rule, &ws, r.from, r.to) * r.ratio * ws.demand[r.from * kc + k];
            field.flows.push(Flow {
                from: r.from,
                to: r.to,
                commodity: k,
                value,
            });
            field.outflows[r.from * kc + k] += value;
        }
    }
    for i in mtn.topology().offramps() {
        for k in 0..kc {
            field.outflows[i * kc + k] = ws.demand[i * kc + k];
        }
    }
    Ok(field)
}

/// Demand-limited flows `R_ij d_i(x_i)`; only defined on free-flow states.
pub fn flows_free(mtn: &Mtn, x: &StateArray) -> Result<FlowField> {
    flows(mtn, x, AllocationRule::FreeFlowOnly)
}

pub fn flows_fifo(mtn: &Mtn, x: &StateArray) -> FlowField {
    flows(mtn, x, AllocationRule::Fifo).expect("FIFO is defined on every state")
}

pub fn flows_nonfifo(mtn: &Mtn, x: &StateArray) -> FlowField {
    flows(mtn, x, AllocationRule::NonFifo).expect("non-FIFO is defined on every state")
}

/// Time derivative of the state, cell-major like the state itself.
pub fn rhs(
    mtn: &Mtn,
    x: &StateArray,
    inflow: &InflowArray,
    rule: AllocationRule,
) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(mtn);
    let mut out = vec![0.0; x.as_slice().len()];
    rhs_into(mtn, x.as_slice(), inflow.as_slice(), rule, &mut ws, &mut out)?;
    Ok(out)
}

/// Total outflow to the external world, `Σ_{i ∈ S} Σ_k d_i^k(x_i^k)`.
pub fn offramp_outflow(mtn: &Mtn, x: &StateArray) -> f64 {
    mtn.topology()
        .offramps()
        .map(|i| {
            (0..mtn.num_commodities())
                .map(|k| mtn.demand(i, k).value(x.get(i, k)))
                .sum::<f64>()
        })
        .sum()
}
