use distopf::mdistflow::{solve_fixed_load, solve_fixed_load_dense};
use distopf::network::{
    build_path_incidence, duplicate_system, Branch, Bus, Generator, Injections, Network, NetworkData, PathIncidence,
    ScaleRange,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tree(seed: u64, n: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = Generator { p_min: -1e9, p_max: 1e9, q_min: -1e9, q_max: 1e9, cost_p: 30.0, cost_q: 3.0 };
    let mut buses = vec![Bus { id: 0, p_load: 0.0, q_load: 0.0, v_min: 1.0, v_max: 1.0, gen: Some(gen) }];
    let mut branches = Vec::new();
    for id in 1..n {
        buses.push(Bus {
            id,
            p_load: rng.random_range(0.0..0.03),
            q_load: rng.random_range(0.0..0.015),
            v_min: 0.9,
            v_max: 1.1,
            gen: None,
        });
        branches.push(Branch {
            from_bus: rng.random_range(0..id),
            to_bus: id,
            r: rng.random_range(0.001..0.02),
            x: rng.random_range(0.001..0.02),
            i_max: None,
        });
    }
    Network::new(NetworkData { base_mva: 1.0, base_kv: 12.66, slack: 0, slack_voltage: 1.0, buses, branches }).unwrap()
}

/// Breadth-first order, which differs from the default depth-first one.
fn breadth_first(ti: &PathIncidence) -> Vec<usize> {
    let mut order: Vec<usize> = ti.roots().to_vec();
    let mut i = 0;
    while i < order.len() {
        order.extend_from_slice(ti.children(order[i]));
        i += 1;
    }
    order.iter().map(|&k| ti.order()[k]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_of_path_incidence_is_signed_incidence(seed in any::<u64>(), n in 2usize..40) {
        let net = random_tree(seed, n);
        let ti = build_path_incidence(&net);
        let inv = ti.dense().try_inverse().unwrap();
        for v in inv.iter() {
            prop_assert!([-1.0, 0.0, 1.0].iter().any(|c| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn voltages_do_not_depend_on_bus_order(seed in any::<u64>(), n in 2usize..60) {
        let net = random_tree(seed, n);
        let ti = build_path_incidence(&net);
        let alt = PathIncidence::with_order(&net, &breadth_first(&ti)).unwrap();
        let inj = Injections::from_loads(&net);
        let a = solve_fixed_load(&net, &ti, &inj).unwrap().by_bus(&net, &ti);
        let b = solve_fixed_load(&net, &alt, &inj).unwrap().by_bus(&net, &alt);
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_matches_dense_solve(seed in any::<u64>(), n in 2usize..80) {
        let net = random_tree(seed, n);
        let ti = build_path_incidence(&net);
        let inj = Injections::from_loads(&net);
        let a = solve_fixed_load(&net, &ti, &inj).unwrap();
        let b = solve_fixed_load_dense(&net, &ti, &inj).unwrap();
        for (x, y) in a.w.iter().zip(&b.w).chain(a.p_br_hat.iter().zip(&b.p_br_hat)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_preserves_network(seed in any::<u64>(), n in 2usize..30) {
        let net = random_tree(seed, n);
        let text = serde_json::to_string(net.data()).unwrap();
        let back = Network::new(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(back.data(), net.data());
    }
}

#[test]
fn duplication_is_deterministic_per_seed() {
    let net = random_tree(1, 12);
    let range = ScaleRange::new(0.7, 1.3).unwrap();
    let a = duplicate_system(&net, 5, 42, range).unwrap();
    let b = duplicate_system(&net, 5, 42, range).unwrap();
    let c = duplicate_system(&net, 5, 43, range).unwrap();
    assert_eq!(a.bus_count(), 5 * 11 + 1);
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
}

#[test]
fn bundled_fixtures_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for (name, buses) in [("case33bw.m", 33), ("case69.m", 69), ("case141.m", 141)] {
        let net = distopf::scenario::load_case(&dir.join(name)).unwrap();
        assert_eq!(net.bus_count(), buses, "{name}");
        assert_eq!(net.branches().len(), buses - 1, "{name}");
    }
}
