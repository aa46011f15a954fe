//! Fixed-step time integration of the network dynamics.

use std::io::Write;

use crate::dynamics::{min_slack_into, rhs_into, AllocationRule, Workspace};
use crate::error::{Error, Result};
use crate::model::Mtn;
use crate::state::{InflowArray, StateArray};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationMethod {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub method: IntegrationMethod,
    pub dt: f64,
    pub t_end: f64,
    /// Record every n-th step (the final state is always recorded).
    pub record_every: usize,
    /// Post-step negativity tolerated as round-off and clamped to zero.
    pub clamp_tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: IntegrationMethod::Rk4,
            dt: 1e-2,
            t_end: 100.0,
            record_every: 1,
            clamp_tolerance: 1e-12,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidConfig(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(Error::InvalidConfig(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.t_end
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        if !(self.clamp_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("clamp tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    /// Step count and the length of the final (possibly shortened) step.
    fn schedule(&self) -> (usize, f64) {
        let ratio = self.t_end / self.dt;
        let steps = (ratio - 1e-9).ceil().max(1.0) as usize;
        let last = self.t_end - (steps - 1) as f64 * self.dt;
        (steps, last)
    }
}

/// Single-trajectory stepper with preallocated stage buffers.
pub(crate) struct Stepper<'a> {
    mtn: &'a Mtn,
    inflow: &'a [f64],
    rule: AllocationRule,
    method: IntegrationMethod,
    clamp_tolerance: f64,
    ws: Workspace,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(
        mtn: &'a Mtn,
        inflow: &'a InflowArray,
        rule: AllocationRule,
        method: IntegrationMethod,
        clamp_tolerance: f64,
    ) -> Self {
        let dim = mtn.num_cells() * mtn.num_commodities();
        Self {
            mtn,
            inflow: inflow.as_slice(),
            rule,
            method,
            clamp_tolerance,
            ws: Workspace::new(mtn),
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
        }
    }

    pub(crate) fn rhs(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        rhs_into(self.mtn, x, self.inflow, self.rule, &mut self.ws, out)
    }

    pub(crate) fn min_slack(&mut self, x: &[f64]) -> f64 {
        min_slack_into(self.mtn, x, &mut self.ws)
    }

    /// Advances `x` from time `t` by `dt`, clamping round-off negativity.
    pub(crate) fn step(&mut self, x: &mut [f64], t: f64, dt: f64) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        match self.method {
            IntegrationMethod::Euler => {
                rhs_into(self.mtn, x, self.inflow, self.rule, &mut self.ws, k1)?;
                for (xi, d) in x.iter_mut().zip(k1.iter()) {
                    *xi += dt * d;
                }
            }
            IntegrationMethod::Rk4 => {
                rhs_into(self.mtn, x, self.inflow, self.rule, &mut self.ws, k1)?;
                for ((s, xi), d) in self.stage.iter_mut().zip(x.iter()).zip(k1.iter()) {
                    *s = xi + 0.5 * dt * d;
                }
                rhs_into(self.mtn, &self.stage, self.inflow, self.rule, &mut self.ws, k2)?;
                for ((s, xi), d) in self.stage.iter_mut().zip(x.iter()).zip(k2.iter()) {
                    *s = xi + 0.5 * dt * d;
                }
                rhs_into(self.mtn, &self.stage, self.inflow, self.rule, &mut self.ws, k3)?;
                for ((s, xi), d) in self.stage.iter_mut().zip(x.iter()).zip(k3.iter()) {
                    *s = xi + dt * d;
                }
                rhs_into(self.mtn, &self.stage, self.inflow, self.rule, &mut self.ws, k4)?;
                for (idx, xi) in x.iter_mut().enumerate() {
                    *xi += dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
                }
            }
        }
        let kc = self.mtn.num_commodities();
        for (idx, xi) in x.iter_mut().enumerate() {
            if *xi < 0.0 {
                if *xi <= -self.clamp_tolerance {
                    return Err(Error::StepSize {
                        time: t + dt,
                        cell: self.mtn.topology().cell_id(idx / kc).to_owned(),
                        commodity: self.mtn.commodity(idx % kc).id.clone(),
                        value: *xi,
                    });
                }
                *xi = 0.0;
            }
        }
        Ok(())
    }
}

/// A change of free-flow status between two consecutive steps, stamped with
/// the later step's time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCrossing {
    pub time: f64,
    pub entered_free_flow: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateArray>,
    pub rule: AllocationRule,
    pub crossings: Vec<BoundaryCrossing>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateArray {
        self.states.last().expect("a trajectory holds at least its initial state")
    }

    pub fn exit_events(&self) -> Vec<f64> {
        self.crossings.iter().map(|c| c.time).collect()
    }
}

pub fn integrate(
    mtn: &Mtn,
    inflow: &InflowArray,
    rule: AllocationRule,
    x0: &StateArray,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dims(mtn, x0)?;
    let (steps, last) = cfg.schedule();
    let mut stepper = Stepper::new(mtn, inflow, rule, cfg.method, cfg.clamp_tolerance);
    let mut x = x0.as_slice().to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut crossings = Vec::new();
    let mut free = stepper.min_slack(&x) > 0.0;
    for m in 1..=steps {
        let t = (m - 1) as f64 * cfg.dt;
        let h = if m == steps { last } else { cfg.dt };
        stepper.step(&mut x, t, h)?;
        let now = if m == steps { cfg.t_end } else { m as f64 * cfg.dt };
        let free_now = stepper.min_slack(&x) > 0.0;
        if free_now != free {
            log::debug!("t = {now}: {} free flow", if free_now { "entered" } else { "left" });
            crossings.push(BoundaryCrossing {
                time: now,
                entered_free_flow: free_now,
            });
            free = free_now;
        }
        if m % cfg.record_every == 0 || m == steps {
            times.push(now);
            states.push(StateArray::for_mtn(mtn, x.clone())?);
        }
    }
    Ok(Trajectory {
        times,
        states,
        rule,
        crossings,
    })
}

fn check_dims(mtn: &Mtn, x: &StateArray) -> Result<()> {
    if x.cells() != mtn.num_cells() || x.commodities() != mtn.num_commodities() {
        return Err(Error::Dimension {
            what: "initial state",
            expected: mtn.num_cells() * mtn.num_commodities(),
            found: x.as_slice().len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Stop once `‖ẋ‖₁` falls below this.
    pub rhs_tol: f64,
    /// Declare unbounded growth once `‖x‖₁` exceeds this.
    pub blowup: f64,
    /// Steps between convergence checks.
    pub check_every: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            rhs_tol: 1e-9,
            blowup: 1e6,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchOutcome {
    Converged,
    HorizonReached,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSearch {
    pub outcome: SearchOutcome,
    pub time: f64,
    pub state: StateArray,
    pub rhs_norm: f64,
}

/// Integrates until the right-hand side vanishes, the state blows up, or the
/// horizon is reached.
pub fn find_equilibrium_by_simulation(
    mtn: &Mtn,
    inflow: &InflowArray,
    rule: AllocationRule,
    x0: &StateArray,
    cfg: &IntegratorConfig,
    options: &SearchOptions,
) -> Result<EquilibriumSearch> {
    cfg.validate()?;
    check_dims(mtn, x0)?;
    let (steps, last) = cfg.schedule();
    let mut stepper = Stepper::new(mtn, inflow, rule, cfg.method, cfg.clamp_tolerance);
    let mut x = x0.as_slice().to_vec();
    let mut dx = vec![0.0; x.len()];
    let check_every = options.check_every.max(1);
    let mut t = 0.0;
    for m in 0..=steps {
        if m % check_every == 0 || m == steps {
            stepper.rhs(&x, &mut dx)?;
            let rhs_norm: f64 = dx.iter().map(|v| v.abs()).sum();
            let norm: f64 = x.iter().sum();
            let outcome = if rhs_norm < options.rhs_tol {
                Some(SearchOutcome::Converged)
            } else if norm > options.blowup {
                Some(SearchOutcome::Diverged)
            } else if m == steps {
                Some(SearchOutcome::HorizonReached)
            } else {
                None
            };
            if let Some(outcome) = outcome {
                log::debug!("equilibrium search: {outcome:?} at t = {t}, |rhs|_1 = {rhs_norm:e}");
                return Ok(EquilibriumSearch {
                    outcome,
                    time: t,
                    state: StateArray::for_mtn(mtn, x)?,
                    rhs_norm,
                });
            }
        }
        let h = if m + 1 == steps { last } else { cfg.dt };
        stepper.step(&mut x, t, h)?;
        t = if m + 1 == steps { cfg.t_end } else { (m + 1) as f64 * cfg.dt };
    }
    unreachable!("the loop returns at the final step")
}

/// Formats a time stamp with 12 significant digits, `%.12g` style.
pub fn format_time(t: f64) -> String {
    if t == 0.0 {
        return "0".into();
    }
    let exponent = t.abs().log10().floor() as i32;
    if (-5..12).contains(&exponent) {
        let decimals = (11 - exponent).max(0) as usize;
        let s = format!("{t:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            s
        }
    } else {
        let s = format!("{t:.11e}");
        let (mantissa, exp) = s.split_once('e').expect("scientific notation");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{exp}")
    }
}

/// Writes `t,cell,commodity,density` rows, one per recorded state entry.
pub fn write_trajectory_csv<W: Write>(mtn: &Mtn, trajectory: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "cell", "commodity", "density"])?;
    for (t, x) in trajectory.times.iter().zip(&trajectory.states) {
        let ts = format_time(*t);
        for i in 0..mtn.num_cells() {
            for k in 0..mtn.num_commodities() {
                w.write_record([
                    ts.as_str(),
                    mtn.topology().cell_id(i),
                    mtn.commodity(k).id.as_str(),
                    &x.get(i, k).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
