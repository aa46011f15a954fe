//! Self-checks run against a scenario: Jacobian structure, region and
//! conservation identities, and sampled nonexpansiveness near `x*`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use mdfn_core::analysis::{
    certify, free_flow_equilibrium, nonexpansiveness_probe, stability_region_contains,
    StabilityCertificate,
};
use mdfn_core::dynamics::{flows, is_free_flow, offramp_outflow, rhs};
use mdfn_core::generate::random_state_in_ball;
use mdfn_core::{AllocationRule, InflowArray, Mtn, StateArray};

use crate::commands::{json_num, load, num, vector, CliError, CommandResult, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Contraction,
    Jacobian,
    Regions,
    All,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub suite: Suite,
    pub seed: u64,
    pub samples: usize,
    /// Sampling radius for the contraction suite; `δ̄` when absent.
    pub radius: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            suite: Suite::All,
            seed: 0,
            samples: 50,
            radius: None,
            horizon: 50.0,
            dt: 0.02,
        }
    }
}

pub const AGREEMENT_TOL: f64 = 1e-12;
pub const STATIONARY_TOL: f64 = 1e-9;
pub const MASS_TOL: f64 = 1e-9;
pub const EXPANSION_SLACK: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    fn name(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        }
    }
}

struct Check {
    suite: &'static str,
    name: &'static str,
    status: Status,
    detail: String,
    counterexample: Option<Value>,
}

impl Check {
    fn pass(suite: &'static str, name: &'static str, detail: String) -> Self {
        Check { suite, name, status: Status::Pass, detail, counterexample: None }
    }

    fn skip(suite: &'static str, name: &'static str, detail: &str) -> Self {
        Check { suite, name, status: Status::Skip, detail: detail.to_owned(), counterexample: None }
    }

    fn fail(suite: &'static str, name: &'static str, detail: String, counterexample: Value) -> Self {
        Check { suite, name, status: Status::Fail, detail, counterexample: Some(counterexample) }
    }
}

struct Context<'a> {
    mtn: &'a Mtn,
    inflow: &'a InflowArray,
    rule: AllocationRule,
    /// `x*` and its certificate when `λ ∈ Λ`.
    equilibrium: Option<(StateArray, StabilityCertificate)>,
}

pub fn verify(path: &Path, opts: &VerifyOptions) -> CommandResult {
    let (_, scenario) = load(path)?;
    let mtn = &scenario.mtn;
    let inflow = &scenario.inflow;
    let domain = |e: mdfn_core::Error| CliError::Domain(e.into());
    let region = stability_region_contains(mtn, inflow).map_err(domain)?;
    let equilibrium = if region.contains() {
        let eq = free_flow_equilibrium(mtn, inflow).map_err(domain)?;
        let cert = certify(mtn, &eq.x_star).map_err(domain)?;
        Some((eq.x_star, cert))
    } else {
        None
    };
    let ctx = Context { mtn, inflow, rule: scenario.rule, equilibrium };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    if opts.suite.includes(Suite::Jacobian) {
        checks.extend(jacobian_suite(&ctx));
    }
    if opts.suite.includes(Suite::Regions) {
        checks.extend(regions_suite(&ctx, opts, &mut rng));
    }
    if opts.suite.includes(Suite::Contraction) {
        checks.push(contraction_suite(&ctx, opts, &mut rng));
    }

    let mut text = String::new();
    let mut items = Vec::new();
    for c in &checks {
        writeln!(text, "{} {}/{}: {}", c.status.name(), c.suite, c.name, c.detail).unwrap();
        if let Some(ce) = &c.counterexample {
            writeln!(text, "  counterexample: {ce}").unwrap();
        }
        items.push(json!({
            "suite": c.suite,
            "check": c.name,
            "status": c.status.name(),
            "detail": c.detail,
            "counterexample": c.counterexample,
        }));
    }
    let failed = checks.iter().filter(|c| c.status == Status::Fail).count();
    writeln!(text, "{} checks, {} failed", checks.len(), failed).unwrap();
    Ok(Report {
        text,
        json: json!({ "seed": opts.seed, "checks": items, "failed": failed }),
        success: failed == 0,
    })
}

const NO_EQUILIBRIUM: &str = "λ ∉ Λ, no free-flow equilibrium";

fn jacobian_suite(ctx: &Context) -> Vec<Check> {
    const S: &str = "jacobian";
    let Some((x_star, cert)) = &ctx.equilibrium else {
        return vec![
            Check::skip(S, "finite_differences", NO_EQUILIBRIUM),
            Check::skip(S, "column_sums", NO_EQUILIBRIUM),
            Check::skip(S, "hurwitz", NO_EQUILIBRIUM),
        ];
    };
    let mtn = ctx.mtn;
    let (n, kc) = (mtn.num_cells(), mtn.num_commodities());
    let mut out = Vec::new();

    // FIFO coincides with free flow on F and stays defined just outside it.
    let eval = |x: &[f64]| -> Result<Vec<f64>, String> {
        let s = StateArray::from_vec(n, kc, x.to_vec()).map_err(|e| e.to_string())?;
        rhs(mtn, &s, ctx.inflow, AllocationRule::Fifo).map_err(|e| e.to_string())
    };
    let mut worst = 0.0f64;
    let mut failure = None;
    'outer: for k in 0..kc {
        let jac = &cert.jacobians[k];
        for j in 0..n {
            let idx = j * kc + k;
            let x0 = x_star.as_slice()[idx];
            let h = 1e-6 * x0.abs().max(1.0);
            let mut hi = x_star.as_slice().to_vec();
            let mut lo = hi.clone();
            hi[idx] += h;
            // one-sided at the nonnegativity boundary
            let span = if x0 >= h {
                lo[idx] -= h;
                2.0 * h
            } else {
                h
            };
            let (fh, fl) = match (eval(&hi), eval(&lo)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    failure = Some((format!("cannot evaluate near x*: {e}"), json!({ "commodity": k, "cell": j })));
                    break 'outer;
                }
            };
            for i in 0..n {
                for kk in 0..kc {
                    let fd = (fh[i * kc + kk] - fl[i * kc + kk]) / span;
                    let expected = if kk == k { jac[(i, j)] } else { 0.0 };
                    let err = (fd - expected).abs() / expected.abs().max(1.0);
                    worst = worst.max(err);
                    if err > FD_TOL {
                        failure = Some((
                            format!("entry mismatch: finite difference {} vs {}", num(fd), num(expected)),
                            json!({
                                "row": { "cell": mtn.topology().cell_id(i), "commodity": mtn.commodity(kk).id },
                                "column": { "cell": mtn.topology().cell_id(j), "commodity": mtn.commodity(k).id },
                                "finite_difference": fd,
                                "analytic": expected,
                            }),
                        ));
                        break 'outer;
                    }
                }
            }
        }
    }
    out.push(match failure {
        None => Check::pass(S, "finite_differences", format!("max relative error {worst:.2e}")),
        Some((detail, ce)) => Check::fail(S, "finite_differences", detail, ce),
    });

    let mut column_failure = None;
    let mut max_sum = f64::NEG_INFINITY;
    for k in 0..kc {
        let jac = &cert.jacobians[k];
        for j in 0..n {
            let sum: f64 = jac.column(j).iter().sum();
            max_sum = max_sum.max(sum);
            if sum > 1e-12 && column_failure.is_none() {
                column_failure = Some(json!({
                    "commodity": mtn.commodity(k).id,
                    "cell": mtn.topology().cell_id(j),
                    "column_sum": sum,
                }));
            }
        }
        if cert.l1_measure[k] > 1e-12 && column_failure.is_none() {
            column_failure = Some(json!({ "commodity": mtn.commodity(k).id, "l1_measure": cert.l1_measure[k] }));
        }
    }
    out.push(match column_failure {
        None => Check::pass(
            S,
            "column_sums",
            format!("max column sum {}, l1 measures {}", num(max_sum), vector(&cert.l1_measure)),
        ),
        Some(ce) => Check::fail(S, "column_sums", "positive column sum or l1 measure".into(), ce),
    });

    out.push(if cert.is_hurwitz() {
        Check::pass(S, "hurwitz", format!("max real parts {}", vector(&cert.max_real_eigenvalue)))
    } else {
        Check::fail(
            S,
            "hurwitz",
            "a Jacobian block is not Hurwitz".into(),
            json!({ "max_real_eigenvalue": cert.max_real_eigenvalue }),
        )
    });
    out
}

/// Radius for sampling around `x*`: the requested one, else `δ̄`, else a
/// finite stand-in when no state is ever congested.
fn sampling_radius(x_star: &StateArray, cert: &StabilityCertificate, requested: Option<f64>) -> f64 {
    requested.unwrap_or_else(|| {
        let d = cert.delta_bar.value;
        if d.is_finite() {
            d
        } else {
            1.0 + x_star.l1_norm()
        }
    })
}

fn regions_suite(ctx: &Context, opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Vec<Check> {
    const S: &str = "regions";
    let mtn = ctx.mtn;
    let mut out = Vec::new();
    match &ctx.equilibrium {
        None => {
            out.push(Check::skip(S, "stationary_equilibrium", NO_EQUILIBRIUM));
            out.push(Check::skip(S, "rule_agreement", NO_EQUILIBRIUM));
        }
        Some((x_star, cert)) => {
            let scale = ctx.inflow.total().max(1.0);
            let mut bad = None;
            let mut worst = 0.0f64;
            for rule in AllocationRule::ALL {
                match rhs(mtn, x_star, ctx.inflow, rule) {
                    Ok(r) => {
                        let norm: f64 = r.iter().map(|v| v.abs()).sum();
                        worst = worst.max(norm);
                        if norm > STATIONARY_TOL * scale && bad.is_none() {
                            bad = Some(json!({ "rule": rule.name(), "rhs": r }));
                        }
                    }
                    Err(e) => {
                        bad.get_or_insert(json!({ "rule": rule.name(), "error": e.to_string() }));
                    }
                }
            }
            out.push(match bad {
                None => Check::pass(S, "stationary_equilibrium", format!("max |rhs(x*)|_1 {worst:.2e} over all rules")),
                Some(ce) => Check::fail(S, "stationary_equilibrium", "x* is not stationary".into(), ce),
            });

            let radius = sampling_radius(x_star, cert, None);
            let (mut tested, mut worst) = (0usize, 0.0f64);
            let mut bad = None;
            for _ in 0..opts.samples {
                let x = random_state_in_ball(rng, x_star, radius);
                if !is_free_flow(mtn, &x) {
                    continue;
                }
                tested += 1;
                let fields: Result<Vec<_>, _> = AllocationRule::ALL.iter().map(|r| flows(mtn, &x, *r)).collect();
                let diff = match fields {
                    Ok(f) => f[1..].iter().map(|g| f[0].max_abs_difference(g)).fold(0.0, f64::max),
                    Err(_) => f64::INFINITY,
                };
                worst = worst.max(diff);
                if diff > AGREEMENT_TOL {
                    bad = Some(json!({ "state": x.as_slice(), "max_difference": json_num(diff) }));
                    break;
                }
            }
            out.push(match bad {
                None => Check::pass(
                    S,
                    "rule_agreement",
                    format!("{tested} free-flow states within {} of x*, max difference {worst:.2e}", num(radius)),
                ),
                Some(ce) => Check::fail(S, "rule_agreement", "allocation rules disagree in free flow".into(), ce),
            });
        }
    }

    // Mass balance holds everywhere, so sample a box scaled to the inflow.
    let side = 2.0 * (1.0 + ctx.inflow.total());
    let (n, kc) = (mtn.num_cells(), mtn.num_commodities());
    let inflow_total = ctx.inflow.total();
    let mut bad = None;
    let mut worst = 0.0f64;
    let mut evaluated = 0usize;
    'samples: for _ in 0..opts.samples {
        let values: Vec<f64> = (0..n * kc).map(|_| rng.random_range(0.0..side)).collect();
        let x = StateArray::from_vec(n, kc, values).expect("sampled state is nonnegative");
        let expected = inflow_total - offramp_outflow(mtn, &x);
        for rule in AllocationRule::ALL {
            let Ok(r) = rhs(mtn, &x, ctx.inflow, rule) else {
                // free-flow-only dynamics are undefined off F
                continue;
            };
            evaluated += 1;
            let total: f64 = r.iter().sum();
            let err = (total - expected).abs() / expected.abs().max(1.0);
            worst = worst.max(err);
            if err > MASS_TOL {
                bad = Some(json!({
                    "rule": rule.name(),
                    "state": x.as_slice(),
                    "mass_rate": total,
                    "expected": expected,
                }));
                break 'samples;
            }
        }
    }
    out.push(match bad {
        None => Check::pass(S, "mass_balance", format!("{evaluated} evaluations, max relative error {worst:.2e}")),
        Some(ce) => Check::fail(S, "mass_balance", "total mass rate differs from inflow minus outflow".into(), ce),
    });
    out
}

fn contraction_suite(ctx: &Context, opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> Check {
    const S: &str = "contraction";
    let Some((x_star, cert)) = &ctx.equilibrium else {
        return Check::skip(S, "nonexpansive_pairs", NO_EQUILIBRIUM);
    };
    let radius = sampling_radius(x_star, cert, opts.radius);
    if radius <= 0.0 {
        return Check::skip(S, "nonexpansive_pairs", "sampling radius is zero");
    }
    let (mut truncated, mut worst, mut shortest) = (0usize, 0.0f64, f64::INFINITY);
    for _ in 0..opts.samples {
        let x = random_state_in_ball(rng, x_star, radius);
        let y = random_state_in_ball(rng, x_star, radius);
        let report = match nonexpansiveness_probe(ctx.mtn, ctx.inflow, ctx.rule, &x, &y, opts.horizon, opts.dt) {
            Ok(r) => r,
            Err(e) => {
                return Check::fail(
                    S,
                    "nonexpansive_pairs",
                    format!("integration failed: {e}"),
                    json!({ "x": x.as_slice(), "y": y.as_slice() }),
                )
            }
        };
        if !report.is_nonexpansive(EXPANSION_SLACK) {
            return Check::fail(
                S,
                "nonexpansive_pairs",
                format!("l1 distance grew by {:.3e}", report.max_excess.max(report.max_step_increase)),
                json!({
                    "x": x.as_slice(),
                    "y": y.as_slice(),
                    "initial_distance": report.initial_distance,
                    "max_excess": report.max_excess,
                    "max_step_increase": report.max_step_increase,
                    "certified_until": report.certified_until,
                }),
            );
        }
        worst = worst.max(report.max_excess.max(report.max_step_increase));
        if report.exit_time.is_some() {
            truncated += 1;
            shortest = shortest.min(report.certified_until);
        }
    }
    let mut detail = format!(
        "{} pairs within {} of x* under {}, max distance increase {worst:.2e}",
        opts.samples,
        num(radius),
        ctx.rule.name()
    );
    if truncated > 0 {
        write!(detail, "; {truncated} left free flow, window truncated (shortest {})", num(shortest)).unwrap();
    }
    Check::pass(S, "nonexpansive_pairs", detail)
}
