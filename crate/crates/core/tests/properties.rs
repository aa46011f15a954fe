use mdfn_core::analysis::{
    capacity_contains, delta_bar, delta_bar_with, free_flow_equilibrium, jacobian_free_flow,
    l1_matrix_measure, single_commodity_capacity, stability_region_contains, transported_inflows,
    CapacityQuery, DeltaBarOptions,
};
use mdfn_core::dynamics::{flows, is_free_flow, offramp_outflow, rhs};
use mdfn_core::generate::{
    random_affine_network, random_inflow_direction, random_stable_inflow, random_state_in_ball,
    GeneratorOptions,
};
use mdfn_core::{
    integrate, AllocationRule, CommoditySpec, DemandFunction, InflowArray, IntegratorConfig, Mtn,
    NetworkTopology, StateArray, SupplyFunction,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    mtn: Mtn,
    lam: InflowArray,
    x_star: StateArray,
    radius: f64,
}

fn stable_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
    let (lam, _, _) = random_stable_inflow(&mut rng, &mtn).unwrap();
    let x_star = free_flow_equilibrium(&mtn, &lam).unwrap().x_star;
    let radius = delta_bar(&mtn, &x_star).unwrap().value;
    Case {
        mtn,
        lam,
        x_star,
        radius,
    }
}

fn random_state(rng: &mut ChaCha8Rng, mtn: &Mtn, hi: f64, zero_probability: f64) -> StateArray {
    let dim = mtn.num_cells() * mtn.num_commodities();
    let values = (0..dim)
        .map(|_| {
            if rng.random_bool(zero_probability) {
                0.0
            } else {
                rng.random_range(0.0..hi)
            }
        })
        .collect();
    StateArray::for_mtn(mtn, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transported_inflow_solves_the_flow_balance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
        let lam = random_inflow_direction(&mut rng, &mtn);
        let zeta = transported_inflows(&mtn, &lam).unwrap();
        let kc = mtn.num_commodities();
        for k in 0..kc {
            let z = nalgebra::DVector::from_iterator(mtn.num_cells(), (0..mtn.num_cells()).map(|i| zeta[i * kc + k]));
            let residual = &z - mtn.routing(k).transpose() * &z - lam.commodity_vector(k);
            prop_assert!(residual.amax() < 1e-10, "{residual}");
        }
    }

    #[test]
    fn routing_matrices_are_schur_stable(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
        let n = mtn.num_cells();
        for k in 0..mtn.num_commodities() {
            // every cell drains within n steps, so R^n is strictly substochastic
            let mut power = DMatrix::<f64>::identity(n, n);
            for _ in 0..n {
                power = &power * mtn.routing(k);
            }
            for row in 0..n {
                prop_assert!(power.row(row).sum() < 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn allocation_rules_agree_in_free_flow(seed in any::<u64>()) {
        let case = stable_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..160 {
            let x = random_state_in_ball(&mut rng, &case.x_star, case.radius);
            prop_assert!(is_free_flow(&case.mtn, &x));
            let free = flows(&case.mtn, &x, AllocationRule::FreeFlowOnly).unwrap();
            for rule in [AllocationRule::Fifo, AllocationRule::NonFifo] {
                let other = flows(&case.mtn, &x, rule).unwrap();
                prop_assert!(free.max_abs_difference(&other) < 1e-12);
            }
        }
    }

    #[test]
    fn flows_respect_demand_and_supply(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
        let kc = mtn.num_commodities();
        for _ in 0..20 {
            let x = random_state(&mut rng, &mtn, 4.0, 0.2);
            for rule in [AllocationRule::Fifo, AllocationRule::NonFifo] {
                let field = flows(&mtn, &x, rule).unwrap();
                for f in &field.flows {
                    let cap = mtn.routing(f.commodity)[(f.from, f.to)]
                        * mtn.demand(f.from, f.commodity).value(x.get(f.from, f.commodity));
                    prop_assert!(f.value >= 0.0 && f.value <= cap + 1e-12);
                }
                for j in 0..mtn.num_cells() {
                    if let Some(s) = mtn.supply(j) {
                        prop_assert!(field.total_inflow(j) <= s.value(x.cell_total(j)) + 1e-12);
                    }
                    for k in 0..kc {
                        let d = mtn.demand(j, k).value(x.get(j, k));
                        prop_assert!(field.outflow(j, k) <= d + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_densities_never_decrease(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
        let lam = random_inflow_direction(&mut rng, &mtn);
        for _ in 0..20 {
            let x = random_state(&mut rng, &mtn, 4.0, 0.4);
            for rule in [AllocationRule::Fifo, AllocationRule::NonFifo] {
                let r = rhs(&mtn, &x, &lam, rule).unwrap();
                for (v, d) in x.as_slice().iter().zip(&r) {
                    if *v == 0.0 {
                        prop_assert!(*d >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn mass_balance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
        let lam = random_inflow_direction(&mut rng, &mtn).scaled(3.0);
        for _ in 0..20 {
            let x = random_state(&mut rng, &mtn, 4.0, 0.2);
            for rule in [AllocationRule::Fifo, AllocationRule::NonFifo] {
                let total: f64 = rhs(&mtn, &x, &lam, rule).unwrap().iter().sum();
                let expected = lam.total() - offramp_outflow(&mtn, &x);
                prop_assert!((total - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobians_are_compartmental_in_free_flow(seed in any::<u64>()) {
        let case = stable_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        for _ in 0..20 {
            let x = random_state_in_ball(&mut rng, &case.x_star, case.radius);
            for k in 0..case.mtn.num_commodities() {
                let j = jacobian_free_flow(&case.mtn, &x, k).unwrap();
                for col in 0..j.ncols() {
                    prop_assert!(j.column(col).sum() <= 1e-12);
                }
                prop_assert!(l1_matrix_measure(&j) <= 1e-12);
            }
        }
    }

    #[test]
    fn stable_inflow_equilibria_are_stationary(seed in any::<u64>()) {
        let case = stable_case(seed);
        prop_assert!(stability_region_contains(&case.mtn, &case.lam).unwrap().contains());
        for rule in AllocationRule::ALL {
            let r = rhs(&case.mtn, &case.x_star, &case.lam, rule).unwrap();
            prop_assert!(r.iter().map(|v| v.abs()).sum::<f64>() < 1e-10);
        }
    }

    #[test]
    fn trajectories_stay_nonnegative_and_are_reproducible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtn = random_affine_network(&mut rng, &GeneratorOptions::default());
        // deliberately allows inflows beyond the stability region
        let lam = random_inflow_direction(&mut rng, &mtn).scaled(2.0);
        let x0 = random_state(&mut rng, &mtn, 3.0, 0.3);
        let cfg = IntegratorConfig { record_every: 50, ..IntegratorConfig::new(0.01, 10.0) };
        for rule in [AllocationRule::Fifo, AllocationRule::NonFifo] {
            let a = integrate(&mtn, &lam, rule, &x0, &cfg).unwrap();
            let b = integrate(&mtn, &lam, rule, &x0, &cfg).unwrap();
            prop_assert!(a.states.iter().all(|s| s.as_slice().iter().all(|v| *v >= 0.0)));
            prop_assert!(a.times.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn closed_form_radius_is_tight_and_sound(seed in any::<u64>()) {
        let case = stable_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba11);
        // rejection oracle: no congested sample is closer than the closed form
        let mut closest = f64::INFINITY;
        for _ in 0..5000 {
            let x = random_state_in_ball(&mut rng, &case.x_star, 2.0 * case.radius);
            if !is_free_flow(&case.mtn, &x) {
                closest = closest.min(x.l1_distance(&case.x_star));
            }
        }
        prop_assert!(closest >= case.radius - 1e-9, "{closest} < {}", case.radius);
        // the general bracket must contain the exact value
        let general = delta_bar_with(
            &case.mtn,
            &case.x_star,
            &DeltaBarOptions { force_general: true, samples: 2000, ..Default::default() },
        )
        .unwrap();
        prop_assert!(general.value <= case.radius + 1e-9);
        prop_assert!(general.upper_bound >= case.radius - 1e-9);
        prop_assert!(general.upper_bound <= case.radius * (1.0 + 1e-6) + 1e-9);
    }
}

/// Two-commodity diverge with concave (saturating) demands and affine supply.
fn concave_diverge(caps: [f64; 2], halves: [f64; 2], gamma: f64, alpha: f64) -> Mtn {
    let topology = NetworkTopology::new("w", [("1", "w", "v"), ("2", "v", "w"), ("3", "v", "w")]).unwrap();
    let commodity = |id: &str, k: usize, routes: &[(usize, usize, f64)]| {
        CommoditySpec::from_routes(id, 3, routes, vec![DemandFunction::saturating(caps[k], halves[k]); 3])
    };
    let supply = SupplyFunction::affine(gamma, alpha);
    Mtn::new(
        topology,
        vec![commodity("a", 0, &[(0, 1, 0.5), (0, 2, 0.5)]), commodity("b", 1, &[(0, 1, 1.0)])],
        vec![None, Some(supply.clone()), Some(supply)],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn capacity_regions_are_convex(
        caps in prop::array::uniform2(0.5f64..2.0),
        halves in prop::array::uniform2(0.2f64..2.0),
        gamma in 0.5f64..3.0,
        alpha in 0.1f64..2.0,
        seed in any::<u64>(),
    ) {
        let mtn = concave_diverge(caps, halves, gamma, alpha);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inside = |zeta: [f64; 2]| {
            capacity_contains(&mtn, &CapacityQuery { cell: 1, zeta: zeta.to_vec() }).unwrap().contains()
        };
        let mut pairs = 0;
        while pairs < 32 {
            let p = [rng.random_range(0.0..caps[0]), rng.random_range(0.0..caps[1])];
            let q = [rng.random_range(0.0..caps[0]), rng.random_range(0.0..caps[1])];
            if !(inside(p) && inside(q)) {
                continue;
            }
            pairs += 1;
            for step in 1..10 {
                let t = step as f64 / 10.0;
                let m = [t * p[0] + (1.0 - t) * q[0], t * p[1] + (1.0 - t) * q[1]];
                prop_assert!(inside(m), "{p:?} {q:?} {t}");
            }
        }
    }

    #[test]
    fn single_commodity_capacity_matches_sweep(
        kind in 0usize..3,
        slope in 0.3f64..3.0,
        gamma in 0.5f64..3.0,
        alpha in 0.0f64..2.0,
        zeta in 0.0f64..3.0,
    ) {
        let demand = match kind {
            0 => DemandFunction::linear(slope),
            1 => DemandFunction::saturating(slope, 1.0),
            _ => DemandFunction::table(vec![(0.0, 0.0), (1.0, slope), (2.0, 1.2 * slope)]).unwrap(),
        };
        let supply = SupplyFunction::affine(gamma, alpha);
        let c = single_commodity_capacity(&demand, &supply);
        // sweep oracle: largest demand value still below the supply
        let fine = (0..=200_000).map(|step| step as f64 * 1e-4);
        let tail = (1..=10_000).map(|step| 20.0 * 50_000f64.powf(step as f64 / 10_000.0));
        let mut sweep: f64 = 0.0;
        for xi in fine.chain(tail) {
            if demand.value(xi) < supply.value(xi) {
                sweep = sweep.max(demand.value(xi));
            }
        }
        prop_assert!((c - sweep).abs() < 1e-3, "{c} vs {sweep}");

        let topology = NetworkTopology::new("w", [("in", "w", "v"), ("out", "v", "w")]).unwrap();
        let mtn = Mtn::new(
            topology,
            vec![CommoditySpec::from_routes("k", 2, &[(0, 1, 1.0)], vec![demand.clone(); 2])],
            vec![None, Some(supply)],
        )
        .unwrap();
        prop_assume!((zeta - c).abs() > 1e-6);
        let check = capacity_contains(&mtn, &CapacityQuery { cell: 1, zeta: vec![zeta] }).unwrap();
        prop_assert_eq!(check.contains(), zeta < c);
    }
}
