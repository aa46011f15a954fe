//! Multi-commodity transportation networks and their validation.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functions::{DemandFunction, SupplyFunction};
use crate::topology::NetworkTopology;

/// Networks with more cells than this use Neumann iteration instead of LU.
pub const DENSE_SOLVE_LIMIT: usize = 2000;
const NEUMANN_TOLERANCE: f64 = 1e-12;
const NEUMANN_MAX_TERMS: usize = 1_000_000;

/// One vehicle class: its turning ratios and its per-cell demand functions.
#[derive(Debug, Clone)]
pub struct CommoditySpec {
    pub id: String,
    /// Dense `cells × cells` routing matrix.
    pub routing: DMatrix<f64>,
    /// Demand function per cell, in cell order.
    pub demands: Vec<DemandFunction>,
}

impl CommoditySpec {
    /// Builds a commodity from sparse `(from, to, ratio)` index triples.
    pub fn from_routes(
        id: impl Into<String>,
        cells: usize,
        routes: &[(usize, usize, f64)],
        demands: Vec<DemandFunction>,
    ) -> Self {
        let mut routing = DMatrix::zeros(cells, cells);
        for &(i, j, r) in routes {
            routing[(i, j)] = r;
        }
        Self {
            id: id.into(),
            routing,
            demands,
        }
    }
}

/// Which defining property a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Requirement {
    /// Sizes of matrices and per-cell tables.
    Structure,
    /// Supply positive at zero, nonincreasing, Lipschitz.
    Supply,
    /// Demand zero at zero, strictly increasing.
    Demand,
    /// Routing support inside the adjacency relation.
    RoutingSupport,
    /// Routing rows sum to one off the off-ramps and to zero on them.
    RowSum,
    /// Every cell drains into some off-ramp.
    PathToSink,
}

impl Requirement {
    pub fn tag(self) -> &'static str {
        match self {
            Requirement::Structure => "structure",
            Requirement::Supply => "eq. (1)",
            Requirement::Demand => "eq. (2)",
            Requirement::RoutingSupport => "eq. (3)",
            Requirement::RowSum => "eq. (4)",
            Requirement::PathToSink => "eq. (5)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub requirement: Requirement,
    pub cell: Option<String>,
    pub commodity: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.requirement.tag())?;
        if let Some(c) = &self.commodity {
            write!(f, " commodity {c}")?;
        }
        if let Some(c) = &self.cell {
            write!(f, " cell {c}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Every violated requirement of a candidate network; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, requirement: Requirement) -> bool {
        self.violations.iter().any(|v| v.requirement == requirement)
    }

    fn push(
        &mut self,
        requirement: Requirement,
        cell: Option<&str>,
        commodity: Option<&str>,
        message: impl Into<String>,
    ) {
        self.violations.push(Violation {
            requirement,
            cell: cell.map(str::to_owned),
            commodity: commodity.map(str::to_owned),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Sample grid for monotonicity checks of general (non closed-form) functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub grid_max: f64,
    pub grid_points: usize,
    pub row_sum_tolerance: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            grid_max: 100.0,
            grid_points: 1000,
            row_sum_tolerance: 1e-9,
        }
    }
}

/// Unvalidated network parts. `supplies` is indexed by cell; on-ramp entries
/// are ignored.
#[derive(Debug, Clone)]
pub struct MtnDraft {
    pub topology: NetworkTopology,
    pub commodities: Vec<CommoditySpec>,
    pub supplies: Vec<Option<SupplyFunction>>,
}

impl MtnDraft {
    pub fn validate(&self) -> ValidationReport {
        validate_mtn(self, &ValidationOptions::default())
    }

    pub fn build(self) -> Result<Mtn> {
        self.build_with(&ValidationOptions::default())
    }

    pub fn build_with(self, options: &ValidationOptions) -> Result<Mtn> {
        let report = validate_mtn(&self, options);
        if !report.is_valid() {
            return Err(Error::InvalidNetwork(report));
        }
        Ok(Mtn::assemble(self))
    }
}

/// Positive routing entry of one commodity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub from: usize,
    pub to: usize,
    pub ratio: f64,
}

/// A validated multi-commodity transportation network. Immutable.
#[derive(Debug, Clone)]
pub struct Mtn {
    topology: NetworkTopology,
    commodities: Vec<CommoditySpec>,
    supplies: Vec<Option<SupplyFunction>>,
    routes: Vec<Vec<Route>>,
    downstream: Vec<Vec<usize>>,
}

impl Mtn {
    pub fn new(
        topology: NetworkTopology,
        commodities: Vec<CommoditySpec>,
        supplies: Vec<Option<SupplyFunction>>,
    ) -> Result<Self> {
        MtnDraft {
            topology,
            commodities,
            supplies,
        }
        .build()
    }

    fn assemble(draft: MtnDraft) -> Self {
        let MtnDraft {
            topology,
            commodities,
            mut supplies,
        } = draft;
        let n = topology.num_cells();
        for (i, s) in supplies.iter_mut().enumerate() {
            if topology.is_onramp(i) {
                *s = None;
            }
        }
        let routes: Vec<Vec<Route>> = commodities
            .iter()
            .map(|c| {
                let mut r = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        let ratio = c.routing[(i, j)];
                        if ratio > 0.0 {
                            r.push(Route { from: i, to: j, ratio });
                        }
                    }
                }
                r
            })
            .collect();
        let mut downstream = vec![Vec::new(); n];
        for r in routes.iter().flatten() {
            if !downstream[r.from].contains(&r.to) {
                downstream[r.from].push(r.to);
            }
        }
        for d in &mut downstream {
            d.sort_unstable();
        }
        Self {
            topology,
            commodities,
            supplies,
            routes,
            downstream,
        }
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn num_cells(&self) -> usize {
        self.topology.num_cells()
    }

    pub fn num_commodities(&self) -> usize {
        self.commodities.len()
    }

    pub fn commodities(&self) -> &[CommoditySpec] {
        &self.commodities
    }

    pub fn commodity(&self, k: usize) -> &CommoditySpec {
        &self.commodities[k]
    }

    pub fn commodity_index(&self, id: &str) -> Option<usize> {
        self.commodities.iter().position(|c| c.id == id)
    }

    pub fn routing(&self, k: usize) -> &DMatrix<f64> {
        &self.commodities[k].routing
    }

    #[inline]
    pub fn demand(&self, i: usize, k: usize) -> &DemandFunction {
        &self.commodities[k].demands[i]
    }

    /// Supply of a non-on-ramp cell; `None` on on-ramps.
    #[inline]
    pub fn supply(&self, i: usize) -> Option<&SupplyFunction> {
        self.supplies[i].as_ref()
    }

    /// Positive routing entries of commodity `k`, ordered by `(from, to)`.
    pub fn routes(&self, k: usize) -> &[Route] {
        &self.routes[k]
    }

    /// Cells receiving a positive routing share from `i` for some commodity.
    pub fn downstream(&self, i: usize) -> &[usize] {
        &self.downstream[i]
    }

    /// True when every demand is linear and every supply affine.
    pub fn is_affine(&self) -> bool {
        self.commodities
            .iter()
            .all(|c| c.demands.iter().all(|d| d.linear_slope().is_some()))
            && self
                .supplies
                .iter()
                .flatten()
                .all(|s| s.affine_coefficients().is_some())
    }

    pub fn to_draft(&self) -> MtnDraft {
        MtnDraft {
            topology: self.topology.clone(),
            commodities: self.commodities.clone(),
            supplies: self.supplies.clone(),
        }
    }
}

/// Checks a candidate network against every modelling requirement.
pub fn validate_mtn(draft: &MtnDraft, options: &ValidationOptions) -> ValidationReport {
    let mut report = ValidationReport::default();
    let topo = &draft.topology;
    let n = topo.num_cells();

    if draft.commodities.is_empty() {
        report.push(Requirement::Structure, None, None, "network has no commodities");
    }
    let mut seen = HashSet::new();
    for c in &draft.commodities {
        if !seen.insert(c.id.as_str()) {
            report.push(
                Requirement::Structure,
                None,
                Some(&c.id),
                "duplicate commodity id",
            );
        }
    }

    if draft.supplies.len() != n {
        report.push(
            Requirement::Structure,
            None,
            None,
            format!("supply table has {} entries for {n} cells", draft.supplies.len()),
        );
    } else {
        for i in (0..n).filter(|&i| !topo.is_onramp(i)) {
            let id = topo.cell_id(i);
            match &draft.supplies[i] {
                None => report.push(Requirement::Supply, Some(id), None, "missing supply function"),
                Some(s) => {
                    for p in s.check(options.grid_max, options.grid_points) {
                        report.push(Requirement::Supply, Some(id), None, p);
                    }
                }
            }
        }
    }

    for c in &draft.commodities {
        let k = Some(c.id.as_str());
        let mut structural = false;
        if c.routing.nrows() != n || c.routing.ncols() != n {
            report.push(
                Requirement::Structure,
                None,
                k,
                format!(
                    "routing matrix is {}x{} for {n} cells",
                    c.routing.nrows(),
                    c.routing.ncols()
                ),
            );
            structural = true;
        }
        if c.demands.len() != n {
            report.push(
                Requirement::Structure,
                None,
                k,
                format!("{} demand functions for {n} cells", c.demands.len()),
            );
        } else {
            for (i, d) in c.demands.iter().enumerate() {
                for p in d.check(options.grid_max, options.grid_points) {
                    report.push(Requirement::Demand, Some(topo.cell_id(i)), k, p);
                }
            }
        }
        if structural {
            continue;
        }

        let mut support_ok = true;
        for i in 0..n {
            for j in 0..n {
                let r = c.routing[(i, j)];
                if !r.is_finite() || r < 0.0 {
                    report.push(
                        Requirement::RoutingSupport,
                        Some(topo.cell_id(i)),
                        k,
                        format!("routing entry to {} is {r}", topo.cell_id(j)),
                    );
                    support_ok = false;
                } else if r != 0.0 && !topo.is_adjacent(i, j) {
                    report.push(
                        Requirement::RoutingSupport,
                        Some(topo.cell_id(i)),
                        k,
                        format!("positive routing to non-adjacent cell {}", topo.cell_id(j)),
                    );
                    support_ok = false;
                }
            }
        }

        let mut rows_ok = true;
        for i in 0..n {
            let sum: f64 = c.routing.row(i).iter().sum();
            let expected = if topo.is_offramp(i) { 0.0 } else { 1.0 };
            if (sum - expected).abs() > options.row_sum_tolerance {
                report.push(
                    Requirement::RowSum,
                    Some(topo.cell_id(i)),
                    k,
                    format!("routing row sums to {sum}, expected {expected}"),
                );
                rows_ok = false;
            }
        }

        if support_ok && rows_ok {
            for (i, ok) in path_to_sink_exists(&c.routing, topo).into_iter().enumerate() {
                if !ok {
                    report.push(
                        Requirement::PathToSink,
                        Some(topo.cell_id(i)),
                        k,
                        "no positive routing path reaches an off-ramp",
                    );
                }
            }
        }
    }
    report
}

/// For every cell, whether some chain of strictly positive routing entries
/// leads to an off-ramp. Off-ramps trivially qualify.
pub fn path_to_sink_exists(routing: &DMatrix<f64>, topology: &NetworkTopology) -> Vec<bool> {
    let n = topology.num_cells();
    let mut reaches = vec![false; n];
    let mut queue = VecDeque::new();
    for i in topology.offramps() {
        reaches[i] = true;
        queue.push_back(i);
    }
    // backwards search along positive entries
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !reaches[i] && routing[(i, j)] > 0.0 {
                reaches[i] = true;
                queue.push_back(i);
            }
        }
    }
    reaches
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeontiefSolver {
    /// LU on `I − Rᵀ` up to `DENSE_SOLVE_LIMIT` cells, Neumann above.
    Auto,
    DenseLu,
    Neumann,
}

/// Solves `(I − Rᵀ) u = v`, the transported throughput of inflow `v`.
pub fn leontief_inverse_apply(routing: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    leontief_inverse_apply_using(routing, v, LeontiefSolver::Auto)
}

pub fn leontief_inverse_apply_using(
    routing: &DMatrix<f64>,
    v: &DVector<f64>,
    solver: LeontiefSolver,
) -> Result<DVector<f64>> {
    let n = routing.nrows();
    if routing.ncols() != n {
        return Err(Error::Dimension {
            what: "routing matrix columns",
            expected: n,
            found: routing.ncols(),
        });
    }
    if v.len() != n {
        return Err(Error::Dimension {
            what: "inflow vector",
            expected: n,
            found: v.len(),
        });
    }
    let use_lu = match solver {
        LeontiefSolver::Auto => n <= DENSE_SOLVE_LIMIT,
        LeontiefSolver::DenseLu => true,
        LeontiefSolver::Neumann => false,
    };
    let u = if use_lu {
        let a = DMatrix::identity(n, n) - routing.transpose();
        let u = a
            .lu()
            .solve(v)
            .ok_or_else(|| Error::NotSchurStable("I − Rᵀ is singular".into()))?;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotSchurStable("non-finite solution".into()));
        }
        u
    } else {
        neumann(routing, v)?
    };
    if v.iter().all(|&x| x >= 0.0) {
        let scale = v.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        if u.iter().any(|&x| x < -1e-9 * scale) {
            return Err(Error::NotSchurStable(
                "nonnegative inflow produced negative throughput".into(),
            ));
        }
    }
    Ok(u)
}

fn neumann(routing: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let rt = routing.transpose();
    let mut u = v.clone();
    let mut term = v.clone();
    for _ in 0..NEUMANN_MAX_TERMS {
        term = &rt * &term;
        u += &term;
        if term.abs().sum() <= NEUMANN_TOLERANCE * (1.0 + u.abs().sum()) {
            return Ok(u);
        }
    }
    Err(Error::NotSchurStable(format!(
        "Neumann series did not converge in {NEUMANN_MAX_TERMS} terms"
    )))
}

/// Density at which demand `d` carries flow `zeta`.
pub fn demand_inverse(d: &DemandFunction, zeta: f64) -> Result<f64> {
    d.inverse(zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::diverge_junction;

    fn two_cell_cycle() -> MtnDraft {
        // a ↔ b loop fed from an on-ramp; the exit exists but is never routed to
        let topology = NetworkTopology::new(
            "w",
            [
                ("in", "w", "u"),
                ("a", "u", "v"),
                ("b", "v", "u"),
                ("out", "v", "w"),
            ],
        )
        .unwrap();
        let routing = [(0, 1, 1.0), (1, 2, 1.0), (2, 1, 1.0)];
        let c = CommoditySpec::from_routes("k", 4, &routing, vec![DemandFunction::linear(1.0); 4]);
        MtnDraft {
            topology,
            commodities: vec![c],
            supplies: vec![None, Some(SupplyFunction::affine(2.0, 1.0)), Some(SupplyFunction::affine(2.0, 1.0)), Some(SupplyFunction::affine(2.0, 1.0))],
        }
    }

    #[test]
    fn diverge_network_is_valid() {
        let report = diverge_junction().to_draft().validate();
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn single_offramp_with_zero_row_is_valid() {
        let topology = NetworkTopology::new("w", [("only", "w", "v"), ("x", "v", "w")]).unwrap();
        let c = CommoditySpec::from_routes("k", 2, &[(0, 1, 1.0)], vec![DemandFunction::linear(1.0); 2]);
        let draft = MtnDraft {
            topology,
            commodities: vec![c],
            supplies: vec![None, Some(SupplyFunction::affine(1.0, 0.5))],
        };
        assert!(draft.validate().is_valid());
    }

    #[test]
    fn cycle_without_exit_violates_path_to_sink() {
        let report = two_cell_cycle().validate();
        assert!(report.has(Requirement::PathToSink), "{report}");
        assert!(!report.has(Requirement::RowSum));
        let cells: Vec<_> = report
            .violations
            .iter()
            .filter_map(|v| v.cell.clone())
            .collect();
        assert!(cells.contains(&"a".to_string()) && cells.contains(&"b".to_string()));
        assert!(!cells.contains(&"out".to_string()));
    }

    #[test]
    fn bad_row_sum_and_support_are_reported() {
        let mut draft = diverge_junction().to_draft();
        draft.commodities[0].routing[(0, 1)] = 0.4;
        draft.commodities[1].routing[(1, 2)] = 0.3;
        let report = draft.validate();
        assert!(report.has(Requirement::RowSum));
        assert!(report.has(Requirement::RoutingSupport));
        let text = report.to_string();
        assert!(text.contains("eq. (4)") && text.contains("eq. (3)"), "{text}");
    }

    #[test]
    fn dimension_mismatch_is_structural_not_a_panic() {
        let mut draft = diverge_junction().to_draft();
        draft.commodities[0].routing = DMatrix::zeros(2, 2);
        draft.commodities[1].demands.pop();
        draft.supplies.push(None);
        let report = draft.validate();
        assert_eq!(
            report
                .violations
                .iter()
                .filter(|v| v.requirement == Requirement::Structure)
                .count(),
            3
        );
    }

    #[test]
    fn missing_supply_is_reported() {
        let mut draft = diverge_junction().to_draft();
        draft.supplies[2] = None;
        assert!(draft.validate().has(Requirement::Supply));
        assert!(draft.build().is_err());
    }

    #[test]
    fn path_to_sink_cases() {
        let mtn = diverge_junction();
        assert_eq!(path_to_sink_exists(mtn.routing(0), mtn.topology()), vec![true; 3]);
        let cyc = two_cell_cycle();
        let reach = path_to_sink_exists(&cyc.commodities[0].routing, &cyc.topology);
        assert_eq!(reach, vec![false, false, false, true]);
    }

    #[test]
    fn leontief_identity_and_diverge() {
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let u = leontief_inverse_apply(&DMatrix::zeros(3, 3), &v).unwrap();
        assert_eq!(u, v);
        let mtn = diverge_junction();
        let lam = 0.8;
        let u = leontief_inverse_apply(mtn.routing(0), &DVector::from_vec(vec![lam, 0.0, 0.0])).unwrap();
        assert!((u - DVector::from_vec(vec![lam, lam / 2.0, lam / 2.0])).abs().max() < 1e-15);
    }

    #[test]
    fn leontief_solvers_agree_and_detect_instability() {
        let mtn = diverge_junction();
        let v = DVector::from_vec(vec![1.0, 0.2, 0.0]);
        let a = leontief_inverse_apply_using(mtn.routing(0), &v, LeontiefSolver::DenseLu).unwrap();
        let b = leontief_inverse_apply_using(mtn.routing(0), &v, LeontiefSolver::Neumann).unwrap();
        assert!((a - b).abs().max() < 1e-12);
        let cyc = two_cell_cycle();
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(leontief_inverse_apply_using(&cyc.commodities[0].routing, &v, LeontiefSolver::DenseLu).is_err());
        assert!(leontief_inverse_apply_using(&cyc.commodities[0].routing, &v, LeontiefSolver::Neumann).is_err());
    }
}
