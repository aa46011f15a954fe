//! Demand and supply function families.
//!
//! Demands map a single commodity's density on a cell to its maximum outflow.
//! Supplies map the aggregate density of a cell to the maximum inflow it can
//! absorb. Both come in a closed-form flavour (linear demand, affine supply)
//! and a general monotone flavour backed by a built-in curve, a table, or a
//! user callable.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Upper end of the bracket used to invert general monotone demands.
pub const INVERSE_BRACKET: f64 = 1e6;
/// Target accuracy of `d(d⁻¹(ζ)) = ζ` for bisection inverses.
pub const INVERSE_TOLERANCE: f64 = 1e-10;
/// Step used for central-difference derivatives of tabulated/custom curves.
pub const DERIVATIVE_STEP: f64 = 1e-6;

/// A scalar curve supplied by the caller.
///
/// `limit` is the value approached as the argument grows without bound, when
/// known. It is only used to certify unbounded basins, so returning `None` is
/// always safe.
pub trait Curve: Send + Sync + fmt::Debug {
    fn value(&self, xi: f64) -> f64;

    fn derivative(&self, xi: f64) -> f64 {
        central_difference(|t| self.value(t), xi)
    }

    fn limit(&self) -> Option<f64> {
        None
    }
}

pub(crate) fn central_difference(f: impl Fn(f64) -> f64, xi: f64) -> f64 {
    let h = DERIVATIVE_STEP;
    if xi < h {
        (f(xi + h) - f(xi)) / h
    } else {
        (f(xi + h) - f(xi - h)) / (2.0 * h)
    }
}

/// Piecewise-linear curve through `(density, value)` breakpoints.
///
/// The first breakpoint must sit at density 0 and densities must be strictly
/// increasing. How the table extends past its last breakpoint depends on the
/// role: demands keep the last slope, supplies hold the last value.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    points: Vec<(f64, f64)>,
}

impl Table {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidFunction(
                "a table needs at least two breakpoints".into(),
            ));
        }
        if points[0].0 != 0.0 {
            return Err(Error::InvalidFunction(
                "the first table breakpoint must be at density 0".into(),
            ));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidFunction("table entries must be finite".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidFunction(
                "table densities must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn segment(&self, xi: f64) -> usize {
        // index of the segment [p_s, p_{s+1}] containing xi, clamped to the ends
        match self
            .points
            .binary_search_by(|p| p.0.partial_cmp(&xi).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.points.len() - 2),
        }
    }

    fn eval(&self, xi: f64, extend_linearly: bool) -> f64 {
        let last = self.points[self.points.len() - 1];
        if xi >= last.0 && !extend_linearly {
            return last.1;
        }
        let s = self.segment(xi);
        let (x0, y0) = self.points[s];
        let (x1, y1) = self.points[s + 1];
        y0 + (y1 - y0) * (xi - x0) / (x1 - x0)
    }

    fn last_slope(&self) -> f64 {
        let n = self.points.len();
        let (x0, y0) = self.points[n - 2];
        let (x1, y1) = self.points[n - 1];
        (y1 - y0) / (x1 - x0)
    }
}

/// General monotone demand curves.
#[derive(Debug, Clone)]
pub enum MonotoneDemand {
    /// `capacity · ξ / (half_density + ξ)`.
    Saturating { capacity: f64, half_density: f64 },
    /// Piecewise linear, extended with its last slope.
    Table(Table),
    Custom(Arc<dyn Curve>),
}

#[derive(Debug, Clone)]
pub enum DemandFunction {
    /// `β ξ`.
    Linear { slope: f64 },
    GeneralMonotone(MonotoneDemand),
}

impl DemandFunction {
    pub fn linear(slope: f64) -> Self {
        DemandFunction::Linear { slope }
    }

    pub fn saturating(capacity: f64, half_density: f64) -> Self {
        DemandFunction::GeneralMonotone(MonotoneDemand::Saturating {
            capacity,
            half_density,
        })
    }

    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        Ok(DemandFunction::GeneralMonotone(MonotoneDemand::Table(
            Table::new(points)?,
        )))
    }

    pub fn custom(curve: impl Curve + 'static) -> Self {
        DemandFunction::GeneralMonotone(MonotoneDemand::Custom(Arc::new(curve)))
    }

    /// Maximum outflow at density `xi`. Negative arguments are treated as 0.
    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        let xi = xi.max(0.0);
        match self {
            DemandFunction::Linear { slope } => slope * xi,
            DemandFunction::GeneralMonotone(m) => match m {
                MonotoneDemand::Saturating {
                    capacity,
                    half_density,
                } => capacity * xi / (half_density + xi),
                MonotoneDemand::Table(t) => t.eval(xi, true),
                MonotoneDemand::Custom(c) => c.value(xi),
            },
        }
    }

    pub fn derivative(&self, xi: f64) -> f64 {
        let xi = xi.max(0.0);
        match self {
            DemandFunction::Linear { slope } => *slope,
            DemandFunction::GeneralMonotone(m) => match m {
                MonotoneDemand::Saturating {
                    capacity,
                    half_density,
                } => capacity * half_density / ((half_density + xi) * (half_density + xi)),
                MonotoneDemand::Table(_) => central_difference(|t| self.value(t), xi),
                MonotoneDemand::Custom(c) => c.derivative(xi),
            },
        }
    }

    /// Least upper bound of the demand over all densities (may be infinite).
    pub fn supremum(&self) -> f64 {
        match self {
            DemandFunction::Linear { .. } => f64::INFINITY,
            DemandFunction::GeneralMonotone(m) => match m {
                MonotoneDemand::Saturating { capacity, .. } => *capacity,
                MonotoneDemand::Table(t) => {
                    if t.last_slope() > 0.0 {
                        f64::INFINITY
                    } else {
                        t.points[t.points.len() - 1].1
                    }
                }
                MonotoneDemand::Custom(c) => c.limit().unwrap_or(f64::INFINITY),
            },
        }
    }

    pub fn linear_slope(&self) -> Option<f64> {
        match self {
            DemandFunction::Linear { slope } => Some(*slope),
            _ => None,
        }
    }

    /// Density at which the demand equals `zeta`.
    ///
    /// Linear demands invert in closed form; every other family is bisected
    /// on `[0, INVERSE_BRACKET]`.
    pub fn inverse(&self, zeta: f64) -> Result<f64> {
        if !(zeta >= 0.0) || !zeta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "demand inverse needs a finite nonnegative flow, got {zeta}"
            )));
        }
        if zeta == 0.0 {
            return Ok(0.0);
        }
        if let DemandFunction::Linear { slope } = self {
            return Ok(zeta / slope);
        }
        let top = self.value(INVERSE_BRACKET);
        if zeta > top {
            return Err(Error::DemandOutOfRange {
                flow: zeta,
                supremum: top,
            });
        }
        let (mut lo, mut hi) = (0.0_f64, INVERSE_BRACKET);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = self.value(mid);
            if (v - zeta).abs() <= 1e-3 * INVERSE_TOLERANCE {
                return Ok(mid);
            }
            if v < zeta {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Returns a description of every property the function fails on the
    /// sample grid `[0, xi_max]` with `points` nodes.
    pub fn check(&self, xi_max: f64, points: usize) -> Vec<String> {
        let mut problems = Vec::new();
        if let DemandFunction::Linear { slope } = self {
            if !(slope.is_finite() && *slope > 0.0) {
                problems.push(format!("linear demand slope must be positive, got {slope}"));
            }
            return problems;
        }
        if let DemandFunction::GeneralMonotone(MonotoneDemand::Saturating {
            capacity,
            half_density,
        }) = self
        {
            if !(capacity.is_finite() && *capacity > 0.0) {
                problems.push(format!("saturating demand capacity must be positive, got {capacity}"));
            }
            if !(half_density.is_finite() && *half_density > 0.0) {
                problems.push(format!(
                    "saturating demand half density must be positive, got {half_density}"
                ));
            }
            if !problems.is_empty() {
                return problems;
            }
        }
        let d0 = self.value(0.0);
        if d0.abs() > 1e-12 {
            problems.push(format!("demand at zero density must vanish, got {d0}"));
        }
        let mut prev = d0;
        for m in 1..points {
            let xi = xi_max * m as f64 / (points - 1) as f64;
            let v = self.value(xi);
            if !v.is_finite() || v <= prev {
                problems.push(format!("demand is not strictly increasing near density {xi}"));
                break;
            }
            prev = v;
        }
        for m in 0..points {
            let xi = xi_max * m as f64 / (points - 1) as f64;
            let dv = self.derivative(xi);
            if !(dv > 0.0) {
                problems.push(format!("demand derivative is not positive at density {xi}"));
                break;
            }
        }
        problems
    }
}

/// General monotone supply curves.
#[derive(Debug, Clone)]
pub enum MonotoneSupply {
    /// Piecewise linear, held constant after the last breakpoint.
    Table(Table),
    Custom(Arc<dyn Curve>),
}

#[derive(Debug, Clone)]
pub enum SupplyFunction {
    /// `max(γ − α ξ, 0)`.
    Affine { intercept: f64, slope: f64 },
    GeneralMonotone(MonotoneSupply),
}

impl SupplyFunction {
    pub fn affine(intercept: f64, slope: f64) -> Self {
        SupplyFunction::Affine { intercept, slope }
    }

    pub fn constant(value: f64) -> Self {
        SupplyFunction::Affine {
            intercept: value,
            slope: 0.0,
        }
    }

    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        Ok(SupplyFunction::GeneralMonotone(MonotoneSupply::Table(
            Table::new(points)?,
        )))
    }

    pub fn custom(curve: impl Curve + 'static) -> Self {
        SupplyFunction::GeneralMonotone(MonotoneSupply::Custom(Arc::new(curve)))
    }

    /// Maximum inflow at aggregate density `xi`, clamped at zero.
    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        let xi = xi.max(0.0);
        let raw = match self {
            SupplyFunction::Affine { intercept, slope } => intercept - slope * xi,
            SupplyFunction::GeneralMonotone(MonotoneSupply::Table(t)) => t.eval(xi, false),
            SupplyFunction::GeneralMonotone(MonotoneSupply::Custom(c)) => c.value(xi),
        };
        raw.max(0.0)
    }

    /// Greatest lower bound of the supply over all densities.
    pub fn infimum(&self) -> f64 {
        match self {
            SupplyFunction::Affine { intercept, slope } => {
                if *slope > 0.0 {
                    0.0
                } else {
                    intercept.max(0.0)
                }
            }
            SupplyFunction::GeneralMonotone(MonotoneSupply::Table(t)) => {
                t.points[t.points.len() - 1].1.max(0.0)
            }
            SupplyFunction::GeneralMonotone(MonotoneSupply::Custom(c)) => {
                c.limit().map_or(0.0, |l| l.max(0.0))
            }
        }
    }

    /// `(intercept, slope)` for affine supplies.
    pub fn affine_coefficients(&self) -> Option<(f64, f64)> {
        match self {
            SupplyFunction::Affine { intercept, slope } => Some((*intercept, *slope)),
            _ => None,
        }
    }

    pub fn check(&self, xi_max: f64, points: usize) -> Vec<String> {
        let mut problems = Vec::new();
        if let SupplyFunction::Affine { intercept, slope } = self {
            if !(intercept.is_finite() && *intercept > 0.0) {
                problems.push(format!("affine supply intercept must be positive, got {intercept}"));
            }
            if !(slope.is_finite() && *slope >= 0.0) {
                problems.push(format!("affine supply slope must be nonnegative, got {slope}"));
            }
            return problems;
        }
        let s0 = self.value(0.0);
        if !(s0 > 0.0) {
            problems.push(format!("supply at zero density must be positive, got {s0}"));
        }
        let mut prev = s0;
        for m in 1..points {
            let xi = xi_max * m as f64 / (points - 1) as f64;
            let v = self.value(xi);
            if !v.is_finite() || v > prev {
                problems.push(format!("supply increases near density {xi}"));
                break;
            }
            prev = v;
        }
        problems
    }
}
