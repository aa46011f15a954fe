//! Random affine networks, inflows and states for property tests.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::analysis::capacity::stability_margin;
use crate::error::Result;
use crate::functions::{DemandFunction, SupplyFunction};
use crate::model::{CommoditySpec, Mtn};
use crate::state::{InflowArray, StateArray};
use crate::topology::NetworkTopology;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOptions {
    pub max_cells: usize,
    pub max_commodities: usize,
    /// Probability that an admissible routing entry is left at zero.
    pub drop_probability: f64,
    /// Probability that an extra cell points backwards, closing a cycle.
    pub backward_probability: f64,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            max_cells: 8,
            max_commodities: 3,
            drop_probability: 0.3,
            backward_probability: 0.2,
        }
    }
}

/// A random valid network with linear demands `β ξ`, `β ∈ [0.5, 2]`, and
/// affine supplies `γ − α ξ`, `γ ∈ [1, 3]`, `α ∈ [0.2, 1.5]`.
///
/// Nodes form a chain `v0 → v1 → …` that ends in an off-ramp; extra cells
/// are on-ramps, off-ramps, forward links and occasional backward links.
/// Draws whose routing has no path to a sink are discarded.
pub fn random_affine_network<R: Rng>(rng: &mut R, options: &GeneratorOptions) -> Mtn {
    loop {
        if let Some(mtn) = try_random_affine_network(rng, options) {
            return mtn;
        }
    }
}

fn try_random_affine_network<R: Rng>(rng: &mut R, options: &GeneratorOptions) -> Option<Mtn> {
    let max_cells = options.max_cells.max(3);
    // on-ramp, backbone and off-ramp need nodes - 1 + 2 cells
    let max_nodes = (max_cells - 1).min(4);
    let nodes = rng.random_range(1..=max_nodes);
    let node = |l: usize| format!("v{l}");
    let mut cells: Vec<(String, String)> = vec![("w".into(), node(0))];
    for l in 0..nodes - 1 {
        cells.push((node(l), node(l + 1)));
    }
    cells.push((node(nodes - 1), "w".into()));
    let target = rng.random_range(cells.len()..=max_cells);
    while cells.len() < target {
        let a = rng.random_range(0..nodes);
        let b = rng.random_range(0..nodes);
        let cell = match rng.random_range(0..3) {
            0 => ("w".into(), node(a)),
            1 => (node(a), "w".into()),
            _ if a < b => (node(a), node(b)),
            _ if a > b && rng.random_bool(options.backward_probability) => (node(a), node(b)),
            _ => continue,
        };
        cells.push(cell);
    }
    let topology = NetworkTopology::new(
        "w",
        cells
            .iter()
            .enumerate()
            .map(|(i, (t, h))| (format!("c{i}"), t.clone(), h.clone())),
    )
    .expect("generated topology is well formed");
    let n = topology.num_cells();

    let num_commodities = rng.random_range(1..=options.max_commodities.max(1));
    let commodities = (0..num_commodities)
        .map(|k| {
            let mut routes = Vec::new();
            for i in 0..n {
                let mut successors: Vec<usize> = topology.successors(i).to_vec();
                if successors.is_empty() {
                    continue;
                }
                successors.shuffle(rng);
                let keep = successors
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| *pos == 0 || !rng.random_bool(options.drop_probability))
                    .map(|(_, &j)| j)
                    .collect::<Vec<_>>();
                let weights: Vec<f64> = keep.iter().map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                for (&j, w) in keep.iter().zip(&weights) {
                    routes.push((i, j, w / total));
                }
            }
            let demands = (0..n)
                .map(|_| DemandFunction::linear(rng.random_range(0.5..=2.0)))
                .collect();
            CommoditySpec::from_routes(format!("k{k}"), n, &routes, demands)
        })
        .collect();
    let supplies = (0..n)
        .map(|i| {
            (!topology.is_onramp(i)).then(|| {
                SupplyFunction::affine(rng.random_range(1.0..=3.0), rng.random_range(0.2..=1.5))
            })
        })
        .collect();
    Mtn::new(topology, commodities, supplies).ok()
}

/// Random on-ramp inflow with entries uniform in `[0, 1)`.
pub fn random_inflow_direction<R: Rng>(rng: &mut R, mtn: &Mtn) -> InflowArray {
    let kc = mtn.num_commodities();
    let mut entries = Vec::new();
    for i in mtn.topology().onramps() {
        for k in 0..kc {
            entries.push((i, k, rng.random_range(0.0..1.0)));
        }
    }
    InflowArray::from_entries(mtn, &entries).expect("on-ramp entries are valid")
}

/// Random inflow strictly inside the stability region, at a uniformly drawn
/// fraction in `[0.1, 0.9]` of its largest stable multiple along a random
/// direction. Returns the inflow, the direction and its multiple `θ_max`.
pub fn random_stable_inflow<R: Rng>(rng: &mut R, mtn: &Mtn) -> Result<(InflowArray, InflowArray, f64)> {
    let direction = random_inflow_direction(rng, mtn);
    let theta_max = stability_margin(mtn, &direction, 1e6)?;
    let fraction = rng.random_range(0.1..=0.9);
    Ok((direction.scaled(fraction * theta_max), direction, theta_max))
}

/// A point `max(center + u, 0)` with `u` uniform in the l1 ball of the given
/// radius. The projection never increases the distance to `center`.
pub fn random_state_in_ball<R: Rng>(rng: &mut R, center: &StateArray, radius: f64) -> StateArray {
    let dim = center.as_slice().len();
    let e: Vec<f64> = (0..dim).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
    let total: f64 = e.iter().sum();
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    let values = center
        .as_slice()
        .iter()
        .zip(&e)
        .map(|(c, ei)| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (c + sign * r * ei / total).max(0.0)
        })
        .collect();
    StateArray::from_vec(center.cells(), center.commodities(), values).expect("projected state is nonnegative")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::capacity::{free_flow_equilibrium, stability_region_contains};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_networks_are_valid_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let options = GeneratorOptions::default();
        let mut cyclic = 0;
        for _ in 0..200 {
            let mtn = random_affine_network(&mut rng, &options);
            assert!(mtn.num_cells() <= 8 && mtn.num_commodities() <= 3);
            assert!(mtn.is_affine());
            assert!(mtn.topology().onramps().next().is_some());
            let t = mtn.topology();
            if (0..t.num_cells()).any(|i| t.head(i) != t.world() && t.tail(i) != t.world() && t.head(i) < t.tail(i)) {
                cyclic += 1;
            }
        }
        assert!(cyclic > 0);
    }

    #[test]
    fn stable_inflows_are_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
            let (lam, _, theta) = random_stable_inflow(&mut rng, &mtn).unwrap();
            assert!(theta > 0.0 && theta < 1e6);
            assert!(stability_region_contains(&mtn, &lam).unwrap().contains());
            assert!(free_flow_equilibrium(&mtn, &lam).unwrap().in_free_flow);
        }
    }

    #[test]
    fn ball_samples_stay_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = StateArray::from_vec(2, 2, vec![0.1, 0.0, 1.0, 2.0]).unwrap();
        for _ in 0..1000 {
            let x = random_state_in_ball(&mut rng, &c, 0.5);
            assert!(x.l1_distance(&c) <= 0.5 + 1e-12);
        }
    }
}
