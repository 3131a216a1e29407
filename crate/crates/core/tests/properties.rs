use std::collections::BTreeMap;

use l1net::addressing::check_scrambling;
use l1net::engine::{run, run_log, DEFAULT_WINDOW};
use l1net::metrics::{self, SweepConfig};
use l1net::topology::{build_crossbar, LatencyClass, SwitchSpec};
use l1net::traffic::{SyntheticConfig, SyntheticWorkload};
use l1net::*;
use proptest::prelude::*;

fn sweep_csv(variant: Variant, grid: &[f64], seed: u64, parallel: usize) -> Vec<u8> {
    let cfg = SweepConfig {
        cluster: ClusterConfig::new(variant),
        p_local: None,
        seed,
        seeds: 1,
        run: RunConfig::with_horizon(600),
        parallel,
    };
    let rows = metrics::sweep(grid, &cfg).unwrap();
    let mut out = Vec::new();
    metrics::write_csv(&mut out, &rows, 600).unwrap();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scramble_is_a_bijection_with_inverse(b in 1u32..5, t in 2u32..7, s in 0u32..5, extra in 0u32..3) {
        let layout = AddressLayout::new(b, t, s + extra, s).unwrap();
        let report = check_scrambling(&layout, |a| layout.scramble(a).unwrap());
        prop_assert!(report.is_ok(), "{:?}", report);
        let total = layout.total_bytes();
        for addr in (0..total).step_by(4) {
            let m = layout.scramble(addr).unwrap();
            prop_assert!(m < total);
            prop_assert_eq!(layout.descramble(m).unwrap(), addr);
        }
    }

    #[test]
    fn scramble_is_identity_outside_window(addr in 0u32..(1 << 20)) {
        let layout = AddressLayout::default();
        let m = layout.scramble(addr).unwrap();
        if addr >= layout.seq_window_bytes() {
            prop_assert_eq!(m, addr);
        } else {
            prop_assert!(m < layout.seq_window_bytes());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn same_seed_same_csv(seed in any::<u64>(), lambda in 0.05f64..0.5) {
        let grid = [lambda];
        let a = sweep_csv(Variant::Top4, &grid, seed, 1);
        let b = sweep_csv(Variant::Top4, &grid, seed, 1);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn parallelism_does_not_change_output() {
    let grid = [0.05, 0.2, 0.4];
    assert_eq!(sweep_csv(Variant::TopH, &grid, 7, 1), sweep_csv(Variant::TopH, &grid, 7, 3));
}

#[test]
fn different_seeds_differ() {
    let grid = [0.3];
    assert_ne!(sweep_csv(Variant::Top1, &grid, 1, 1), sweep_csv(Variant::Top1, &grid, 2, 1));
}

#[test]
fn conservation_checked_every_cycle() {
    for v in Variant::ALL {
        let g = build_cluster(&ClusterConfig::new(v)).unwrap();
        let mut cfg = RunConfig::with_horizon(800);
        cfg.check_invariants = true;
        let mut traffic = SyntheticConfig::uniform(0.6, 3);
        traffic.store_fraction = 0.3;
        let mut w = SyntheticWorkload::new(traffic, &g).unwrap();
        let log = run_log(&g, &mut w, &cfg).unwrap();
        let m = log.finalize().unwrap();
        assert_eq!(m.histogram.iter().sum::<u64>(), m.completed());
    }
}

#[test]
fn latency_floor_matches_zero_load_per_class() {
    for v in Variant::ALL {
        let cluster = ClusterConfig::new(v);
        let g = build_cluster(&cluster).unwrap();
        let mut state = SimState::new(&g, DEFAULT_WINDOW);
        let mut w = SyntheticWorkload::new(SyntheticConfig::uniform(0.02, 11), &g).unwrap();
        let mut floor: BTreeMap<LatencyClass, u64> = BTreeMap::new();
        for _ in 0..3000 {
            w.drive(&g, &mut state).unwrap();
            state.step(&g).unwrap();
            for c in state.drain_completions() {
                let class = cluster.classify(c.core, c.bank);
                let e = floor.entry(class).or_insert(u64::MAX);
                *e = (*e).min(c.latency());
            }
        }
        let classes: &[LatencyClass] = match v {
            Variant::TopH => &[LatencyClass::Local, LatencyClass::IntraGroup, LatencyClass::Remote],
            _ => &[LatencyClass::Local, LatencyClass::Remote],
        };
        for &class in classes {
            assert_eq!(floor[&class], cluster.expected_zero_load(class), "{v} {class}");
        }
    }
}

#[test]
fn full_contention_round_robin_is_fair() {
    for inputs in [2usize, 3, 5] {
        let g = build_crossbar(SwitchSpec::new(inputs, 1, false).unwrap()).unwrap();
        let mut s = SimState::new(&g, 1 << 20);
        let loc = PhysicalLocation { tile: 0, bank: 0, row: 0 };
        for c in 0..inputs as u32 {
            for _ in 0..2000 {
                s.enqueue(&g, c, AccessKind::Store, 0, loc, 0).unwrap();
            }
        }
        let mut wins = vec![0i64; inputs];
        for _ in 0..1001 {
            s.step(&g).unwrap();
            for c in s.drain_completions() {
                wins[c.core as usize] += 1;
            }
        }
        let (lo, hi) = (*wins.iter().min().unwrap(), *wins.iter().max().unwrap());
        assert!(hi - lo <= 1, "{inputs} inputs: {wins:?}");
    }
}

#[test]
fn flow_balance_below_saturation() {
    for (v, lambda) in [(Variant::Top1, 0.06), (Variant::Top4, 0.2), (Variant::TopH, 0.25), (Variant::TopX, 0.5)] {
        let g = build_cluster(&ClusterConfig::new(v)).unwrap();
        let mut w = SyntheticWorkload::new(SyntheticConfig::uniform(lambda, 5), &g).unwrap();
        let m = run(&g, &mut w, &RunConfig::with_horizon(5000)).unwrap();
        let rel = (m.throughput - m.offered).abs() / m.offered;
        assert!(rel <= 0.02, "{v} at {lambda}: offered {} accepted {}", m.offered, m.throughput);
    }
}

#[test]
fn toph_low_load_latency_near_uniform_floor() {
    let g = build_cluster(&ClusterConfig::new(Variant::TopH)).unwrap();
    let mut w = SyntheticWorkload::new(SyntheticConfig::uniform(0.10, 21), &g).unwrap();
    let m = run(&g, &mut w, &RunConfig::with_horizon(5000)).unwrap();
    let lat = m.avg_latency().unwrap();
    assert!((4.44..5.5).contains(&lat), "avg latency {lat}");
}
