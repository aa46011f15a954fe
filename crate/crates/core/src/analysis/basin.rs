//! Radius of the largest l1 ball around a free-flow equilibrium that stays
//! inside the free-flow region.
//!
//! Each free-flow constraint `Σ R_ji d_j(x_j) − s_i(Σ_k x_i^k) < 0` is
//! nondecreasing in every coordinate, so the nearest congested state is
//! always reached by increasing densities. For affine networks the distance
//! to each constraint is a ratio of slack to the largest coefficient. For
//! general curves the radius is bracketed: a certified lower bound from a
//! discretised budget allocation, and an upper bound from coordinate and
//! random searches that exhibit actual congested states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::spectral::require_free_flow;
use crate::dynamics::aggregate_demand_into;
use crate::error::Result;
use crate::functions::INVERSE_BRACKET;
use crate::model::Mtn;
use crate::state::StateArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaBarMethod {
    AffineClosedForm,
    /// Certified lower bound; `upper_bound` holds the best congested state found.
    SampledLowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBar {
    /// `+∞` when no state is ever congested.
    pub value: f64,
    pub method: DeltaBarMethod,
    /// Distance to the nearest congested state exhibited (equals `value` for
    /// the closed form).
    pub upper_bound: f64,
    /// Cell whose constraint is closest.
    pub binding_cell: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBarOptions {
    /// Use the general bracketing even for affine networks.
    pub force_general: bool,
    pub samples: usize,
    pub seed: u64,
    /// Budget resolution of the lower-bound allocation.
    pub grid: usize,
}

impl Default for DeltaBarOptions {
    fn default() -> Self {
        Self {
            force_general: false,
            samples: 100_000,
            seed: 0,
            grid: 64,
        }
    }
}

pub fn delta_bar(mtn: &Mtn, x_star: &StateArray) -> Result<DeltaBar> {
    delta_bar_with(mtn, x_star, &DeltaBarOptions::default())
}

pub fn delta_bar_with(mtn: &Mtn, x_star: &StateArray, options: &DeltaBarOptions) -> Result<DeltaBar> {
    require_free_flow(mtn, x_star)?;
    if mtn.is_affine() && !options.force_general {
        Ok(affine_closed_form(mtn, x_star))
    } else {
        Ok(bracket(mtn, x_star, options))
    }
}

fn affine_closed_form(mtn: &Mtn, x: &StateArray) -> DeltaBar {
    let kc = mtn.num_commodities();
    let mut best = f64::INFINITY;
    let mut binding = None;
    for i in 0..mtn.num_cells() {
        let Some(supply) = mtn.supply(i) else { continue };
        let (_, alpha) = supply.affine_coefficients().expect("affine network");
        let slack = supply.value(x.cell_total(i)) - aggregate_demand_into(mtn, x, i);
        let mut coef = alpha;
        for k in 0..kc {
            for r in mtn.routes(k).iter().filter(|r| r.to == i) {
                let beta = mtn.demand(r.from, k).linear_slope().expect("affine network");
                coef = coef.max(r.ratio * beta);
            }
        }
        if coef > 0.0 && slack / coef < best {
            best = slack / coef;
            binding = Some(i);
        }
    }
    DeltaBar {
        value: best,
        method: DeltaBarMethod::AffineClosedForm,
        upper_bound: best,
        binding_cell: binding,
    }
}

/// Increase of one constraint when a single coordinate (or the own-cell
/// aggregate) grows by `t`.
enum Term {
    Upstream { cell: usize, commodity: usize, ratio: f64 },
    OwnSupply,
}

struct Constraint<'a> {
    mtn: &'a Mtn,
    x: &'a StateArray,
    cell: usize,
    slack: f64,
    own_total: f64,
    terms: Vec<Term>,
}

impl<'a> Constraint<'a> {
    fn new(mtn: &'a Mtn, x: &'a StateArray, cell: usize) -> Option<Self> {
        let supply = mtn.supply(cell)?;
        let own_total = x.cell_total(cell);
        let slack = supply.value(own_total) - aggregate_demand_into(mtn, x, cell);
        let mut terms = vec![Term::OwnSupply];
        for k in 0..mtn.num_commodities() {
            for r in mtn.routes(k).iter().filter(|r| r.to == cell) {
                terms.push(Term::Upstream {
                    cell: r.from,
                    commodity: k,
                    ratio: r.ratio,
                });
            }
        }
        Some(Self {
            mtn,
            x,
            cell,
            slack,
            own_total,
            terms,
        })
    }

    fn increase(&self, term: &Term, t: f64) -> f64 {
        match *term {
            Term::Upstream {
                cell,
                commodity,
                ratio,
            } => {
                let d = self.mtn.demand(cell, commodity);
                let x0 = self.x.get(cell, commodity);
                ratio * (d.value(x0 + t) - d.value(x0))
            }
            Term::OwnSupply => {
                let s = self.mtn.supply(self.cell).expect("non-on-ramp");
                s.value(self.own_total) - s.value(self.own_total + t)
            }
        }
    }

    fn asymptotic_increase(&self, term: &Term) -> f64 {
        match *term {
            Term::Upstream {
                cell,
                commodity,
                ratio,
            } => {
                let d = self.mtn.demand(cell, commodity);
                ratio * (d.supremum() - d.value(self.x.get(cell, commodity)))
            }
            Term::OwnSupply => {
                let s = self.mtn.supply(self.cell).expect("non-on-ramp");
                s.value(self.own_total) - s.infimum()
            }
        }
    }

    fn never_violated(&self) -> bool {
        self.terms
            .iter()
            .map(|t| self.asymptotic_increase(t))
            .sum::<f64>()
            < self.slack
    }

    /// Smallest single-coordinate move that closes the slack.
    fn coordinate_search(&self) -> f64 {
        let mut best = f64::INFINITY;
        for term in &self.terms {
            if self.increase(term, INVERSE_BRACKET) < self.slack {
                continue;
            }
            let (mut lo, mut hi) = (0.0_f64, INVERSE_BRACKET);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.increase(term, mid) >= self.slack {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-15 * hi.max(1.0) {
                    break;
                }
            }
            best = best.min(hi);
        }
        best
    }

    /// Whether no move of l1 size at most `r` can close the slack.
    ///
    /// Each coordinate move is rounded up to a multiple of `r / grid`; since
    /// every term is nondecreasing the rounded allocation dominates the true
    /// one, and the best rounded allocation is found exactly by a knapsack
    /// recursion over at most `grid + terms` budget units.
    fn certifies(&self, r: f64, grid: usize) -> bool {
        let h = r / grid as f64;
        let budget = grid + self.terms.len();
        let mut best = vec![0.0_f64; budget + 1];
        let mut next = vec![0.0_f64; budget + 1];
        for term in &self.terms {
            let gains: Vec<f64> = (0..=grid).map(|u| self.increase(term, u as f64 * h)).collect();
            for b in 0..=budget {
                let mut v = f64::NEG_INFINITY;
                for (u, g) in gains.iter().enumerate().take(b.min(grid) + 1) {
                    v = v.max(best[b - u] + g);
                }
                next[b] = v;
            }
            std::mem::swap(&mut best, &mut next);
        }
        best[budget] < self.slack
    }

    fn lower_bound(&self, upper: f64, grid: usize) -> f64 {
        let hi0 = upper.min(INVERSE_BRACKET);
        if self.certifies(hi0, grid) {
            return hi0;
        }
        let (mut lo, mut hi) = (0.0, hi0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.certifies(mid, grid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn violated_by(&self, y: &StateArray) -> bool {
        let s = self.mtn.supply(self.cell).expect("non-on-ramp");
        !(aggregate_demand_into(self.mtn, y, self.cell) < s.value(y.cell_total(self.cell)))
    }
}

fn bracket(mtn: &Mtn, x: &StateArray, options: &DeltaBarOptions) -> DeltaBar {
    let constraints: Vec<Constraint> = (0..mtn.num_cells())
        .filter_map(|i| Constraint::new(mtn, x, i))
        .collect();

    let mut upper = f64::INFINITY;
    let mut per_cell_upper = Vec::with_capacity(constraints.len());
    for c in &constraints {
        let u = if c.never_violated() {
            f64::INFINITY
        } else {
            c.coordinate_search()
        };
        upper = upper.min(u);
        per_cell_upper.push(u);
    }

    // random increasing moves; any congested hit tightens the upper bound
    if upper.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let dim = x.as_slice().len();
        let mut y = vec![0.0; dim];
        for _ in 0..options.samples {
            let radius = rng.random_range(0.0..upper);
            let weights: Vec<f64> = (0..dim).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let total: f64 = weights.iter().sum();
            for (idx, w) in weights.iter().enumerate() {
                y[idx] = x.as_slice()[idx] + radius * w / total;
            }
            let candidate = StateArray::from_vec(x.cells(), x.commodities(), y.clone())
                .expect("increasing a nonnegative state keeps it nonnegative");
            if constraints.iter().any(|c| c.violated_by(&candidate)) {
                upper = upper.min(radius);
            }
        }
    }

    let mut value = f64::INFINITY;
    let mut binding = None;
    for (c, &u) in constraints.iter().zip(&per_cell_upper) {
        if u.is_infinite() && c.never_violated() {
            continue;
        }
        let lb = c.lower_bound(u, options.grid);
        if lb < value {
            value = lb;
            binding = Some(c.cell);
        }
    }
    DeltaBar {
        value,
        method: DeltaBarMethod::SampledLowerBound,
        upper_bound: upper,
        binding_cell: binding,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::networks::{diverge_junction, uncongestible_diverge};

    fn diverge_eq() -> (Mtn, StateArray) {
        let mtn = diverge_junction();
        let x = StateArray::for_mtn(&mtn, vec![0.5, 0.5, 0.25, 0.5, 0.25, 0.0]).unwrap();
        (mtn, x)
    }

    #[test]
    fn closed_form_on_diverge() {
        let (mtn, x) = diverge_eq();
        let d = delta_bar(&mtn, &x).unwrap();
        assert_eq!(d.method, DeltaBarMethod::AffineClosedForm);
        assert!((d.value - 0.5).abs() < 1e-15);
        assert_eq!(d.binding_cell, Some(1));
    }

    #[test]
    fn general_bracket_contains_closed_form() {
        let (mtn, x) = diverge_eq();
        let opts = DeltaBarOptions {
            force_general: true,
            samples: 20_000,
            ..Default::default()
        };
        let d = delta_bar_with(&mtn, &x, &opts).unwrap();
        assert_eq!(d.method, DeltaBarMethod::SampledLowerBound);
        assert!(d.value <= 0.5 + 1e-12, "{d:?}");
        assert!(d.value > 0.45, "{d:?}");
        assert!((d.upper_bound - 0.5).abs() < 1e-9, "{d:?}");
    }

    #[test]
    fn uncongestible_network_has_infinite_radius() {
        let mtn = uncongestible_diverge();
        let x = StateArray::for_mtn(&mtn, vec![1.0, 1.0, 0.5, 1.0, 0.5, 0.0]).unwrap();
        let d = delta_bar(&mtn, &x).unwrap();
        assert_eq!(d.value, f64::INFINITY);
        assert_eq!(d.upper_bound, f64::INFINITY);
    }

    #[test]
    fn boundary_state_is_rejected() {
        let mtn = diverge_junction();
        // incoming demand into cell 2 equals its supply
        let x = StateArray::for_mtn(&mtn, vec![1.0, 0.5, 0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(delta_bar(&mtn, &x), Err(Error::NotFreeFlow { .. })));
    }
}
