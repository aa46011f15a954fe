//! JSON scenario files: schema, parsing and conversion into core types.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use mdfn_core::model::{validate_mtn, ValidationOptions};
use mdfn_core::{
    AllocationRule, CommoditySpec, DemandFunction, InflowArray, IntegrationMethod,
    IntegratorConfig, Mtn, MtnDraft, NetworkTopology, StateArray, SupplyFunction, ValidationReport,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub network: NetworkSpec,
    pub commodities: Vec<CommodityEntry>,
    pub supply: SupplySpec,
    /// On-ramp id, then commodity id, to inflow rate.
    #[serde(default)]
    pub inflows: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default = "default_rule", with = "rule_name")]
    pub rule: AllocationRule,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
}

fn default_rule() -> AllocationRule {
    AllocationRule::NonFifo
}

mod rule_name {
    use mdfn_core::AllocationRule;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rule: &AllocationRule, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(rule.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AllocationRule, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(|_| {
            D::Error::custom(format!("unknown rule {name:?}, expected free_flow, fifo or non_fifo"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub world: String,
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub id: String,
    pub tail: String,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommodityEntry {
    pub id: String,
    /// Sparse `(from, to, ratio)` triples; missing entries are zero.
    #[serde(default)]
    pub routing: Vec<(String, String, f64)>,
    pub demand: DemandSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<DemandCurve>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cells: BTreeMap<String, DemandCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<SupplyCurve>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cells: BTreeMap<String, SupplyCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandCurve {
    /// `slope · ξ`
    Linear { slope: f64 },
    /// `capacity · ξ / (half_density + ξ)`
    Saturating { capacity: f64, half_density: f64 },
    /// Piecewise linear through `(ξ, d)` points starting at `(0, 0)`.
    Table { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupplyCurve {
    /// `max(intercept − slope · ξ, 0)`
    Affine { intercept: f64, slope: f64 },
    Constant { value: f64 },
    Table { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSpec {
    pub method: MethodName,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let cfg = IntegratorConfig::default();
        Self {
            method: MethodName::Rk4,
            dt: cfg.dt,
            t_end: cfg.t_end,
            record_every: cfg.record_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Replaces the scenario inflows when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflows: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub initial_states: Vec<InitialStateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSpec {
    pub name: String,
    pub state: StateSpec,
}

/// Either a cell-major array or a sparse cell → commodity → density map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Dense(Vec<f64>),
    Sparse(BTreeMap<String, BTreeMap<String, f64>>),
}

/// A scenario file that could not be turned into a valid network.
#[derive(Debug)]
pub enum ScenarioError {
    /// Unknown ids, missing curves, malformed inflows or states.
    Invalid(String),
    /// The network data violates the model assumptions.
    Validation(ValidationReport),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Invalid(msg) => write!(f, "invalid scenario: {msg}"),
            ScenarioError::Validation(report) => write!(f, "invalid network:\n{report}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Reads and parses a scenario; errors carry the JSON path and position.
pub fn read_scenario(path: &Path) -> anyhow::Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    parse_scenario(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn parse_scenario(text: &str) -> anyhow::Result<ScenarioFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        anyhow::anyhow!("parse error at `{path}` (line {}, column {}): {inner}", inner.line(), inner.column())
    })
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub inflow: InflowArray,
    pub t_end: f64,
    pub initial_states: Vec<(String, StateArray)>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub mtn: Mtn,
    pub inflow: InflowArray,
    pub rule: AllocationRule,
    pub integrator: IntegratorConfig,
    pub experiments: Vec<Experiment>,
}

impl ScenarioFile {
    /// Network data in core form, not yet validated.
    pub fn draft(&self) -> Result<MtnDraft, ScenarioError> {
        let topology = NetworkTopology::new(
            self.network.world.clone(),
            self.network.cells.iter().map(|c| (c.id.clone(), c.tail.clone(), c.head.clone())),
        )
        .map_err(|e| invalid(e.to_string()))?;
        let n = topology.num_cells();
        let cell = |id: &str, what: &str| {
            topology
                .cell_index(id)
                .ok_or_else(|| invalid(format!("{what} refers to unknown cell {id:?}")))
        };
        if self.commodities.is_empty() {
            return Err(invalid("at least one commodity is required"));
        }
        let mut commodities = Vec::with_capacity(self.commodities.len());
        for c in &self.commodities {
            let mut routes = Vec::with_capacity(c.routing.len());
            for (from, to, ratio) in &c.routing {
                let what = format!("routing of commodity {:?}", c.id);
                routes.push((cell(from, &what)?, cell(to, &what)?, *ratio));
            }
            for id in c.demand.cells.keys() {
                cell(id, &format!("demand of commodity {:?}", c.id))?;
            }
            let demands = (0..n)
                .map(|i| {
                    let id = topology.cell_id(i);
                    let curve = c.demand.cells.get(id).or(c.demand.default.as_ref()).ok_or_else(|| {
                        invalid(format!("commodity {:?} has no demand for cell {id:?}", c.id))
                    })?;
                    curve.build().map_err(|e| invalid(format!("demand of {:?} in cell {id:?}: {e}", c.id)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            commodities.push(CommoditySpec::from_routes(c.id.clone(), n, &routes, demands));
        }
        for id in self.supply.cells.keys() {
            let i = cell(id, "supply")?;
            if topology.is_onramp(i) {
                return Err(invalid(format!("supply given for on-ramp {id:?}")));
            }
        }
        let supplies = (0..n)
            .map(|i| {
                if topology.is_onramp(i) {
                    return Ok(None);
                }
                let id = topology.cell_id(i);
                match self.supply.cells.get(id).or(self.supply.default.as_ref()) {
                    Some(curve) => curve
                        .build()
                        .map(Some)
                        .map_err(|e| invalid(format!("supply of cell {id:?}: {e}"))),
                    None => Ok(None),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MtnDraft {
            topology,
            commodities,
            supplies,
        })
    }

    pub fn validate(&self) -> Result<ValidationReport, ScenarioError> {
        Ok(validate_mtn(&self.draft()?, &ValidationOptions::default()))
    }

    pub fn load(&self) -> Result<Scenario, ScenarioError> {
        let draft = self.draft()?;
        let report = validate_mtn(&draft, &ValidationOptions::default());
        if !report.is_valid() {
            return Err(ScenarioError::Validation(report));
        }
        let mtn = draft.build().map_err(|e| invalid(e.to_string()))?;
        let inflow = inflow_from(&mtn, &self.inflows)?;
        let integrator = IntegratorConfig {
            method: match self.integrator.method {
                MethodName::Rk4 => IntegrationMethod::Rk4,
                MethodName::Euler => IntegrationMethod::Euler,
            },
            dt: self.integrator.dt,
            t_end: self.integrator.t_end,
            record_every: self.integrator.record_every,
            ..IntegratorConfig::default()
        };
        integrator.validate().map_err(|e| invalid(e.to_string()))?;
        let experiments = self
            .experiments
            .iter()
            .map(|e| {
                let inflow = match &e.inflows {
                    Some(map) => inflow_from(&mtn, map)?,
                    None => inflow.clone(),
                };
                let initial_states = e
                    .initial_states
                    .iter()
                    .map(|s| {
                        state_from(&mtn, &s.state)
                            .map(|x| (s.name.clone(), x))
                            .map_err(|msg| invalid(format!("experiment {:?}, state {:?}: {msg}", e.name, s.name)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Experiment {
                    name: e.name.clone(),
                    inflow,
                    t_end: e.t_end.unwrap_or(integrator.t_end),
                    initial_states,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(Scenario {
            mtn,
            inflow,
            rule: self.rule,
            integrator,
            experiments,
        })
    }
}

impl DemandCurve {
    fn build(&self) -> mdfn_core::Result<DemandFunction> {
        match self {
            DemandCurve::Linear { slope } => Ok(DemandFunction::linear(*slope)),
            DemandCurve::Saturating { capacity, half_density } => {
                Ok(DemandFunction::saturating(*capacity, *half_density))
            }
            DemandCurve::Table { points } => DemandFunction::table(points.clone()),
        }
    }
}

impl SupplyCurve {
    fn build(&self) -> mdfn_core::Result<SupplyFunction> {
        match self {
            SupplyCurve::Affine { intercept, slope } => Ok(SupplyFunction::affine(*intercept, *slope)),
            SupplyCurve::Constant { value } => Ok(SupplyFunction::constant(*value)),
            SupplyCurve::Table { points } => SupplyFunction::table(points.clone()),
        }
    }
}

pub fn inflow_from(mtn: &Mtn, map: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<InflowArray, ScenarioError> {
    let mut entries = Vec::new();
    for (cell, rates) in map {
        let i = mtn
            .topology()
            .cell_index(cell)
            .ok_or_else(|| invalid(format!("inflow refers to unknown cell {cell:?}")))?;
        for (commodity, rate) in rates {
            let k = mtn
                .commodity_index(commodity)
                .ok_or_else(|| invalid(format!("inflow refers to unknown commodity {commodity:?}")))?;
            entries.push((i, k, *rate));
        }
    }
    InflowArray::from_entries(mtn, &entries).map_err(|e| invalid(e.to_string()))
}

fn state_from(mtn: &Mtn, spec: &StateSpec) -> Result<StateArray, String> {
    match spec {
        StateSpec::Dense(values) => StateArray::for_mtn(mtn, values.clone()).map_err(|e| e.to_string()),
        StateSpec::Sparse(map) => {
            let kc = mtn.num_commodities();
            let mut values = vec![0.0; mtn.num_cells() * kc];
            for (cell, densities) in map {
                let i = mtn.topology().cell_index(cell).ok_or(format!("unknown cell {cell:?}"))?;
                for (commodity, v) in densities {
                    let k = mtn.commodity_index(commodity).ok_or(format!("unknown commodity {commodity:?}"))?;
                    values[i * kc + k] = *v;
                }
            }
            StateArray::for_mtn(mtn, values).map_err(|e| e.to_string())
        }
    }
}

/// Labels of state entries in storage order, e.g. `x[2,b]`.
pub fn state_labels(mtn: &Mtn) -> Vec<String> {
    let mut labels = Vec::new();
    for i in 0..mtn.num_cells() {
        for k in 0..mtn.num_commodities() {
            labels.push(format!("{},{}", mtn.topology().cell_id(i), mtn.commodity(k).id));
        }
    }
    labels
}

/// The inflow of a scenario with the on-ramp entries replaced, in on-ramp
/// then commodity order.
pub fn override_inflow(mtn: &Mtn, values: &[f64]) -> Result<InflowArray, ScenarioError> {
    let kc = mtn.num_commodities();
    let onramps: Vec<usize> = mtn.topology().onramps().collect();
    if values.len() != onramps.len() * kc {
        return Err(invalid(format!(
            "--lambda needs {} values (on-ramps × commodities), got {}",
            onramps.len() * kc,
            values.len()
        )));
    }
    let entries: Vec<_> = onramps
        .iter()
        .flat_map(|&i| (0..kc).map(move |k| (i, k)))
        .zip(values)
        .map(|((i, k), v)| (i, k, *v))
        .collect();
    InflowArray::from_entries(mtn, &entries).map_err(|e| invalid(e.to_string()))
}
