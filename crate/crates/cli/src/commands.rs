//! Subcommand implementations. Each returns a [`Report`] holding both the
//! human-readable text and the machine-readable JSON form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mdfn_core::analysis::{
    certify, free_flow_equilibrium, stability_region_contains, Membership, StabilityRegionReport,
};
use mdfn_core::dynamics::rhs;
use mdfn_core::simulation::{format_time, write_trajectory_csv};
use mdfn_core::{integrate, InflowArray, IntegratorConfig, Mtn, StateArray};

use crate::bounded::{bounded_region_check, BoundedCheck, BoundedMembership};
use crate::scenario::{override_inflow, read_scenario, state_labels, Scenario, ScenarioError, ScenarioFile};

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub json: Value,
    /// False for domain failures: invalid network, infeasible inflow, failed check.
    pub success: bool,
}

/// A command that could not run.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input.
    Input(anyhow::Error),
    /// Well-formed input describing something invalid or infeasible.
    Domain(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Input(e) | CliError::Domain(e) => format!("{e:#}"),
        }
    }
}

pub type CommandResult = Result<Report, CliError>;

fn domain(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Domain(e.into())
}

pub(crate) fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format_time(v)
    }
}

pub(crate) fn vector(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| num(*v)).collect();
    format!("({})", parts.join(", "))
}

/// JSON cannot hold infinities; they are written as strings.
pub(crate) fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(num(v))
    }
}

pub(crate) fn load(path: &Path) -> Result<(ScenarioFile, Scenario), CliError> {
    let file = read_scenario(path).map_err(CliError::Input)?;
    let scenario = file.load().map_err(domain)?;
    Ok((file, scenario))
}

pub fn validate(path: &Path) -> CommandResult {
    let file = read_scenario(path).map_err(CliError::Input)?;
    let report = match file.validate() {
        Ok(report) => report,
        Err(ScenarioError::Invalid(msg)) => return Err(domain(anyhow::anyhow!(msg))),
        Err(e) => return Err(domain(e)),
    };
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| {
            json!({
                "requirement": v.requirement.tag(),
                "cell": v.cell,
                "commodity": v.commodity,
                "message": v.message,
            })
        })
        .collect();
    let mut text = String::new();
    if report.is_valid() {
        let draft = file.draft().map_err(domain)?;
        let t = &draft.topology;
        let names = |it: &mut dyn Iterator<Item = usize>| it.map(|i| t.cell_id(i).to_owned()).collect::<Vec<_>>().join(", ");
        writeln!(
            text,
            "valid: {} cells, {} commodities; on-ramps: {}; off-ramps: {}",
            t.num_cells(),
            draft.commodities.len(),
            names(&mut t.onramps()),
            names(&mut t.offramps())
        )
        .unwrap();
    } else {
        writeln!(text, "invalid: {} violation(s)", report.violations.len()).unwrap();
        for v in &report.violations {
            writeln!(text, "  {v}").unwrap();
        }
    }
    Ok(Report {
        text,
        json: json!({ "valid": report.is_valid(), "violations": violations }),
        success: report.is_valid(),
    })
}

fn membership_name(m: Membership) -> &'static str {
    match m {
        Membership::Inside => "inside",
        Membership::Boundary => "boundary",
        Membership::Outside => "outside",
    }
}

fn region_summary(report: &StabilityRegionReport) -> &'static str {
    if report.contains() {
        "inside"
    } else if report.on_boundary() {
        "boundary"
    } else {
        "outside"
    }
}

fn inflow_json(mtn: &Mtn, inflow: &InflowArray) -> Value {
    let mut map = serde_json::Map::new();
    for i in mtn.topology().onramps() {
        let mut rates = serde_json::Map::new();
        for k in 0..mtn.num_commodities() {
            rates.insert(mtn.commodity(k).id.clone(), json!(inflow.get(i, k)));
        }
        map.insert(mtn.topology().cell_id(i).to_owned(), Value::Object(rates));
    }
    Value::Object(map)
}

fn onramp_values(mtn: &Mtn, inflow: &InflowArray) -> Vec<f64> {
    mtn.topology()
        .onramps()
        .flat_map(|i| (0..mtn.num_commodities()).map(move |k| inflow.get(i, k)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub points: usize,
}

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err("expected a0,a1,b0,b1,n".into());
        }
        let f = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let points: usize = parts[4].parse().map_err(|e| format!("{:?}: {e}", parts[4]))?;
        if points < 2 {
            return Err("the grid needs at least 2 points per axis".into());
        }
        Ok(Grid {
            a: (f(parts[0])?, f(parts[1])?),
            b: (f(parts[2])?, f(parts[3])?),
            points,
        })
    }
}

impl Grid {
    fn axis(range: (f64, f64), points: usize, idx: usize) -> f64 {
        range.0 + (range.1 - range.0) * idx as f64 / (points - 1) as f64
    }
}

pub fn regions(path: &Path, lambda: Option<&[f64]>, grid: Option<Grid>, out: Option<&Path>) -> CommandResult {
    let (_, scenario) = load(path)?;
    let mtn = &scenario.mtn;
    if let Some(grid) = grid {
        return region_grid(mtn, grid, out);
    }
    let inflow = match lambda {
        Some(values) => override_inflow(mtn, values).map_err(domain)?,
        None => scenario.inflow.clone(),
    };
    let report = stability_region_contains(mtn, &inflow).map_err(domain)?;
    let bounded = bounded_region_check(mtn, &inflow).map_err(domain)?;
    let summary = region_summary(&report);
    let mut text = String::new();
    let lam = vector(&onramp_values(mtn, &inflow));
    match summary {
        "inside" => writeln!(text, "λ = {lam}: inside Λ").unwrap(),
        "boundary" => writeln!(text, "λ = {lam}: on the boundary of Λ").unwrap(),
        _ => writeln!(text, "λ = {lam}: outside Λ").unwrap(),
    }
    let bounded_text = match bounded.membership {
        BoundedMembership::Inside => "inside Λ_B".to_owned(),
        BoundedMembership::Boundary => "boundary of Λ_B".to_owned(),
        BoundedMembership::Outside => "outside Λ_B".to_owned(),
    };
    writeln!(text, "bounded region: {bounded_text} (largest carried multiple θ = {})", num(bounded.theta_max)).unwrap();
    let mut cells = Vec::new();
    for c in &report.cells {
        let id = mtn.topology().cell_id(c.cell);
        writeln!(
            text,
            "  cell {id}: ζ = {}, slack = {}, {}",
            vector(&c.zeta),
            num(c.check.slack),
            membership_name(c.check.membership)
        )
        .unwrap();
        cells.push(json!({
            "cell": id,
            "zeta": c.zeta,
            "slack": json_num(c.check.slack),
            "membership": membership_name(c.check.membership),
        }));
    }
    Ok(Report {
        text,
        json: json!({
            "lambda": inflow_json(mtn, &inflow),
            "stability_region": summary,
            "in_stability_region": report.contains(),
            "bounded_region": bounded.membership.name(),
            "in_bounded_region": bounded.membership.contains(),
            "theta_max": bounded.theta_max,
            "cells": cells,
        }),
        success: true,
    })
}

fn bounded_contains(check: &BoundedCheck) -> bool {
    check.membership.contains()
}

fn region_grid(mtn: &Mtn, grid: Grid, out: Option<&Path>) -> CommandResult {
    let onramps: Vec<usize> = mtn.topology().onramps().collect();
    if onramps.len() != 1 || mtn.num_commodities() != 2 {
        return Err(domain(anyhow::anyhow!(
            "a region grid needs exactly one on-ramp and two commodities (found {} and {})",
            onramps.len(),
            mtn.num_commodities()
        )));
    }
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    csv_out
        .write_record(["lambda_a", "lambda_b", "in_stability_region", "in_bounded_region"])
        .map_err(|e| CliError::Input(e.into()))?;
    let (mut inside, mut bounded_inside) = (0usize, 0usize);
    for ia in 0..grid.points {
        for ib in 0..grid.points {
            let la = Grid::axis(grid.a, grid.points, ia);
            let lb = Grid::axis(grid.b, grid.points, ib);
            let inflow = InflowArray::from_entries(mtn, &[(onramps[0], 0, la), (onramps[0], 1, lb)]).map_err(domain)?;
            let s = stability_region_contains(mtn, &inflow).map_err(domain)?.contains();
            let b = bounded_contains(&bounded_region_check(mtn, &inflow).map_err(domain)?);
            inside += s as usize;
            bounded_inside += b as usize;
            csv_out
                .write_record([num(la), num(lb), s.to_string(), b.to_string()])
                .map_err(|e| CliError::Input(e.into()))?;
        }
    }
    let bytes = csv_out.into_inner().map_err(|e| CliError::Input(anyhow::anyhow!("{e}")))?;
    let csv_text = String::from_utf8(bytes).expect("csv output is UTF-8");
    let total = grid.points * grid.points;
    let (text, file) = match out {
        Some(path) => {
            fs::write(path, &csv_text).map_err(|e| CliError::Input(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
            (
                format!("{total} grid points: {inside} in Λ, {bounded_inside} in Λ_B; written to {}\n", path.display()),
                Some(path.display().to_string()),
            )
        }
        None => (csv_text, None),
    };
    Ok(Report {
        text,
        json: json!({
            "points": total,
            "in_stability_region": inside,
            "in_bounded_region": bounded_inside,
            "file": file,
        }),
        success: true,
    })
}

pub fn equilibrium(path: &Path, out: Option<&Path>) -> CommandResult {
    let (_, scenario) = load(path)?;
    let mtn = &scenario.mtn;
    let inflow = &scenario.inflow;
    let region = stability_region_contains(mtn, inflow).map_err(domain)?;
    let labels = state_labels(mtn);
    let mut text = String::new();
    writeln!(text, "order: {}", labels.iter().map(|l| format!("({l})")).collect::<Vec<_>>().join(" ")).unwrap();
    if !region.contains() {
        let failing: Vec<&str> = region.failing().map(|c| mtn.topology().cell_id(c.cell)).collect();
        writeln!(text, "λ ∉ Λ: no free-flow equilibrium (failing cells: {})", failing.join(", ")).unwrap();
        return Ok(Report {
            text,
            json: json!({
                "in_stability_region": false,
                "failing_cells": failing,
                "order": labels,
            }),
            success: false,
        });
    }
    let eq = free_flow_equilibrium(mtn, inflow).map_err(domain)?;
    let cert = certify(mtn, &eq.x_star).map_err(domain)?;
    writeln!(text, "ζ  = {}", vector(&eq.zeta)).unwrap();
    writeln!(text, "x* = {}", vector(eq.x_star.as_slice())).unwrap();
    writeln!(text, "free flow: {}", if eq.in_free_flow { "yes" } else { "no" }).unwrap();
    let db = &cert.delta_bar;
    writeln!(
        text,
        "δ̄ = {} ({:?}{})",
        num(db.value),
        db.method,
        if db.upper_bound != db.value { format!(", congested state found at {}", num(db.upper_bound)) } else { String::new() }
    )
    .unwrap();
    writeln!(text, "Hurwitz: {}", if cert.is_hurwitz() { "yes" } else { "no" }).unwrap();
    for k in 0..mtn.num_commodities() {
        writeln!(
            text,
            "  commodity {}: max Re λ = {}, l1 measure = {}",
            mtn.commodity(k).id,
            num(cert.max_real_eigenvalue[k]),
            num(cert.l1_measure[k])
        )
        .unwrap();
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Input(e.into()))?;
        let io = |e: csv::Error| CliError::Input(e.into());
        w.write_record(["cell", "commodity", "zeta", "x_star"]).map_err(io)?;
        let kc = mtn.num_commodities();
        for i in 0..mtn.num_cells() {
            for k in 0..kc {
                w.write_record([
                    mtn.topology().cell_id(i).to_owned(),
                    mtn.commodity(k).id.clone(),
                    num(eq.zeta[i * kc + k]),
                    num(eq.x_star.get(i, k)),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| CliError::Input(e.into()))?;
        writeln!(text, "written to {}", path.display()).unwrap();
    }
    Ok(Report {
        text,
        json: json!({
            "in_stability_region": true,
            "order": labels,
            "zeta": eq.zeta,
            "x_star": eq.x_star.as_slice(),
            "in_free_flow": eq.in_free_flow,
            "delta_bar": {
                "value": json_num(db.value),
                "method": format!("{:?}", db.method),
                "upper_bound": json_num(db.upper_bound),
            },
            "hurwitz": cert.is_hurwitz(),
            "max_real_eigenvalue": cert.max_real_eigenvalue,
            "l1_measure": cert.l1_measure,
        }),
        success: true,
    })
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn simulate(path: &Path, out_dir: &Path) -> CommandResult {
    let (_, scenario) = load(path)?;
    let mtn = &scenario.mtn;
    if scenario.experiments.is_empty() {
        return Err(domain(anyhow::anyhow!("the scenario defines no experiments")));
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Input(anyhow::anyhow!("cannot create {}: {e}", out_dir.display())))?;
    let mut text = String::new();
    writeln!(text, "order: {}", state_labels(mtn).iter().map(|l| format!("({l})")).collect::<Vec<_>>().join(" ")).unwrap();
    let mut runs = Vec::new();
    for e in &scenario.experiments {
        for (name, x0) in &e.initial_states {
            let cfg = IntegratorConfig {
                t_end: e.t_end,
                ..scenario.integrator
            };
            let trajectory = integrate(mtn, &e.inflow, scenario.rule, x0, &cfg)
                .map_err(|err| domain(anyhow::anyhow!("experiment {:?}, state {name:?}: {err}", e.name)))?;
            let file: PathBuf = out_dir.join(format!("{}_{}.csv", file_stem(&e.name), file_stem(name)));
            let writer = fs::File::create(&file)
                .map_err(|err| CliError::Input(anyhow::anyhow!("cannot write {}: {err}", file.display())))?;
            write_trajectory_csv(mtn, &trajectory, std::io::BufWriter::new(writer))
                .map_err(|err| CliError::Input(err.into()))?;
            let last: &StateArray = trajectory.final_state();
            let r = rhs(mtn, last, &e.inflow, scenario.rule).map_err(domain)?;
            let rhs_norm: f64 = r.iter().map(|v| v.abs()).sum();
            writeln!(
                text,
                "{} / {}: x(T = {}) = {}, |rhs|_1 = {}, free-flow crossings: {}, -> {}",
                e.name,
                name,
                num(e.t_end),
                vector(last.as_slice()),
                num(rhs_norm),
                trajectory.crossings.len(),
                file.display()
            )
            .unwrap();
            runs.push(json!({
                "experiment": e.name,
                "initial_state": name,
                "t_end": e.t_end,
                "final_state": last.as_slice(),
                "rhs_norm": rhs_norm,
                "crossings": trajectory.exit_events(),
                "file": file.display().to_string(),
            }));
        }
    }
    Ok(Report {
        text,
        json: json!({ "rule": scenario.rule.name(), "runs": runs }),
        success: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g: Grid = "0, 2, 0.5, 1, 3".parse().unwrap();
        assert_eq!(g, Grid { a: (0.0, 2.0), b: (0.5, 1.0), points: 3 });
        assert_eq!(Grid::axis(g.a, g.points, 1), 1.0);
        assert!("0,1,0,1".parse::<Grid>().is_err());
        assert!("0,1,0,1,1".parse::<Grid>().is_err());
        assert!("0,x,0,1,4".parse::<Grid>().is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(vector(&[0.5, 0.0, 1.0 / 3.0]), "(0.5, 0, 0.333333333333)");
        assert_eq!(json_num(f64::INFINITY), json!("inf"));
    }
}
