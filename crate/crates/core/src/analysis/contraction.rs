//! Empirical l1-nonexpansiveness checks on pairs of trajectories.

use crate::dynamics::AllocationRule;
use crate::error::{Error, Result};
use crate::model::Mtn;
use crate::simulation::{IntegrationMethod, IntegratorConfig, Stepper};
use crate::state::{l1_distance, InflowArray, StateArray};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonexpansivenessReport {
    pub initial_distance: f64,
    /// `max_t (‖φ(t,y) − φ(t,x)‖₁ − ‖y − x‖₁)` over the certified window.
    pub max_excess: f64,
    /// Largest increase of the distance between consecutive steps.
    pub max_step_increase: f64,
    /// End of the window in which both trajectories stayed in free flow.
    pub certified_until: f64,
    /// First time either trajectory left free flow.
    pub exit_time: Option<f64>,
    pub final_distance: f64,
}

impl NonexpansivenessReport {
    pub fn is_nonexpansive(&self, slack: f64) -> bool {
        self.max_excess <= slack && self.max_step_increase <= slack
    }
}

/// Integrates from `x` and `y` with RK4 and tracks their l1 distance while
/// both stay in the free-flow region. Leaving it ends the window.
pub fn nonexpansiveness_probe(
    mtn: &Mtn,
    inflow: &InflowArray,
    rule: AllocationRule,
    x: &StateArray,
    y: &StateArray,
    horizon: f64,
    dt: f64,
) -> Result<NonexpansivenessReport> {
    let cfg = IntegratorConfig::new(dt, horizon);
    cfg.validate()?;
    let mut sx = Stepper::new(mtn, inflow, rule, IntegrationMethod::Rk4, cfg.clamp_tolerance);
    let mut sy = Stepper::new(mtn, inflow, rule, IntegrationMethod::Rk4, cfg.clamp_tolerance);
    let mut a = x.as_slice().to_vec();
    let mut b = y.as_slice().to_vec();
    let initial_distance = l1_distance(&a, &b);
    let mut report = NonexpansivenessReport {
        initial_distance,
        max_excess: 0.0,
        max_step_increase: 0.0,
        certified_until: 0.0,
        exit_time: None,
        final_distance: initial_distance,
    };
    if !(sx.min_slack(&a) > 0.0 && sy.min_slack(&b) > 0.0) {
        report.exit_time = Some(0.0);
        return Ok(report);
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let mut previous = initial_distance;
    for m in 1..=steps {
        let t0 = (m - 1) as f64 * dt;
        let t1 = if m == steps { horizon } else { m as f64 * dt };
        let h = t1 - t0;
        let stepped = sx.step(&mut a, t0, h).and_then(|_| sy.step(&mut b, t0, h));
        match stepped {
            Ok(()) => {}
            Err(Error::OutsideFreeFlow { .. }) => {
                report.exit_time = Some(t0);
                break;
            }
            Err(e) => return Err(e),
        }
        if !(sx.min_slack(&a) > 0.0 && sy.min_slack(&b) > 0.0) {
            report.exit_time = Some(t1);
            break;
        }
        let d = l1_distance(&a, &b);
        report.max_excess = report.max_excess.max(d - initial_distance);
        report.max_step_increase = report.max_step_increase.max(d - previous);
        report.certified_until = t1;
        report.final_distance = d;
        previous = d;
    }
    Ok(report)
}
