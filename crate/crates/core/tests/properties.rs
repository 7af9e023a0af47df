use p2p_market::config::SimulationConfig;
use p2p_market::debate::{debate_run, repair, DebateParams};
use p2p_market::instances::random_period;
use p2p_market::market::{
    buyer_value, is_feasible, seller_value, AllocationMatrix, ProsumerProfile, FEASIBILITY_TOL,
};
use p2p_market::pqr::{Action, PriceGrid};
use p2p_market::rng::{stream, Domain};
use p2p_market::rule::rule_allocate;
use proptest::prelude::*;

fn profile() -> impl Strategy<Value = ProsumerProfile> {
    (2.10..=2.61f64, 2.10..=2.61f64, 0.60..=0.88f64, 0.52..=1.0f64, 0.06..=0.10f64).prop_map(
        |(k_plus, k_minus, zeta_plus, zeta_minus, ref_price)| ProsumerProfile {
            id: 0,
            k_plus,
            k_minus,
            zeta_plus,
            zeta_minus,
            ref_price,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn repair_always_feasible(
        seed in any::<u64>(),
        ns in 1usize..6,
        nb in 1usize..6,
        cells in prop::collection::vec(0.0..=1.0f64, 25),
    ) {
        let c = SimulationConfig::default();
        let p = random_period(ns, nb, &c, &mut stream(seed, Domain::Setup, 0));
        let x = repair(&AllocationMatrix::from_flat(ns, nb, cells[..ns * nb].to_vec()).unwrap(), &p);
        prop_assert!(is_feasible(&x, &p, FEASIBILITY_TOL));
    }

    #[test]
    fn repair_keeps_feasible_points(seed in any::<u64>(), ns in 1usize..5, nb in 1usize..5) {
        let c = SimulationConfig::default();
        let p = random_period(ns, nb, &c, &mut stream(seed, Domain::Setup, 0));
        let mut x = rule_allocate(&p).allocation;
        for v in x.as_mut_slice() {
            *v *= 0.5;
        }
        prop_assert_eq!(repair(&x, &p), x);
    }

    #[test]
    fn rule_output_feasible(seed in any::<u64>(), ns in 0usize..6, nb in 0usize..6) {
        let c = SimulationConfig::default();
        let p = random_period(ns, nb, &c, &mut stream(seed, Domain::Setup, 0));
        prop_assert!(is_feasible(&rule_allocate(&p).allocation, &p, FEASIBILITY_TOL));
    }

    #[test]
    fn buyer_value_decreases_with_cost(p in profile(), w in 0.5..20.0f64, a in 0.0..3.0f64, b in 0.0..3.0f64) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(buyer_value(lo, w, &p) > buyer_value(hi, w, &p));
    }

    #[test]
    fn buyer_value_sign_follows_reference(p in profile(), w in 0.5..20.0f64, y in 0.0..3.0f64) {
        let v = buyer_value(y, w, &p);
        if y < p.ref_price * w {
            prop_assert!(v > 0.0);
        } else {
            prop_assert!(v <= 0.0);
        }
    }

    #[test]
    fn seller_value_keeps_sign(p in profile(), td in -5.0..5.0f64) {
        let v = seller_value(td, &p);
        prop_assert_eq!(v > 0.0, td > 0.0);
        prop_assert_eq!(v < 0.0, td < 0.0);
    }

    #[test]
    fn grid_moves_stay_on_grid(state in 0usize..61) {
        let g = PriceGrid::new(0.06, 0.12, 0.001).unwrap();
        prop_assert_eq!(g.index_of(g.price(state)), Some(state));
        for a in g.admissible(state) {
            let next = g.apply(state, a);
            prop_assert!(next < g.n_states());
            prop_assert!((g.price(next) - g.price(state) - a.amount(0.001)).abs() < 1e-12);
        }
        prop_assert!(g.is_admissible(state, Action::Hold));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_trace_monotone_and_result_feasible(seed in any::<u64>(), ns in 1usize..5, nb in 1usize..5) {
        let c = SimulationConfig::default();
        let p = random_period(ns, nb, &c, &mut stream(seed, Domain::Setup, 0));
        let params = DebateParams { np: 6, g_max: 150, ..DebateParams::default() };
        let out = debate_run(&p, &params, &mut stream(seed, Domain::Allocation, 0)).unwrap();
        prop_assert_eq!(out.trace.len(), 150);
        prop_assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*out.trace.last().unwrap(), out.fitness);
        prop_assert!(is_feasible(&out.allocation, &p, FEASIBILITY_TOL));
    }
}
