use proptest::prelude::*;

use radiocast::dynamics::{edge_intervals, gen_churn_schedule, stable_distances, TemporalTopology};
use radiocast::engine::{run, ProtocolConfig, SimulationConfig, SimulationTrace};
use radiocast::experiments::{default_radii, planar_instance};
use radiocast::instance::Instance;
use radiocast::metric::{
    ball, compute_metricity, greedy_packing, is_packing, metricity_violation, BallKind, PathLossMap, QuasiMetricSpace,
    RadiusSet,
};
use radiocast::models::{
    interference_at, neighbors, resolve_round, succ_clear_guarantee, Guarantee, ModelKind, ModelParams,
    ReceptionModelConfig,
};
use radiocast::protocols::{try_adjust_init, try_adjust_init_uniform, try_adjust_step, ProtocolKind};
use radiocast::sensing::{product_bounds, sense_all, Channel, SensingConfig, SensingParams};

fn points(max: usize, side: f64) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..side, 0.0..side).prop_map(|(x, y)| [x, y]), 2..=max)
}

fn distinct(pts: &[[f64; 2]]) -> bool {
    pts.iter()
        .enumerate()
        .all(|(i, a)| pts[i + 1..].iter().all(|b| (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-3))
}

fn asymmetric_map(max: usize) -> impl Strategy<Value = PathLossMap> {
    (2..=max).prop_flat_map(|n| {
        prop::collection::vec(0.1f64..10.0, n * n).prop_map(move |t| PathLossMap::from_fn(n, 1.0, |u, v| t[u * n + v]).unwrap())
    })
}

fn space_of(map: PathLossMap) -> QuasiMetricSpace {
    let zeta = compute_metricity(&map, 1e-9).unwrap();
    QuasiMetricSpace::new(map, zeta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn product_is_sandwiched(x in prop::collection::vec(0.0f64..=0.5, 0..50)) {
        let (lo, mid, hi) = product_bounds(&x);
        prop_assert!(lo <= mid + 1e-12 && mid <= hi + 1e-12);
    }

    #[test]
    fn metricity_is_tight(map in asymmetric_map(6)) {
        let z = compute_metricity(&map, 1e-9).unwrap();
        prop_assert!(metricity_violation(&map, z, 1e-9).is_none());
        if z > 1.0 + 1e-3 {
            prop_assert!(metricity_violation(&map, z - 1e-3, 1e-9).is_some());
        }
    }

    #[test]
    fn symmetric_ball_inside_in_ball(map in asymmetric_map(8), r in 0.1f64..3.0) {
        let s = space_of(map);
        for u in 0..s.n() {
            let b = ball(&s, u, r, BallKind::Symmetric).unwrap();
            let d = ball(&s, u, r, BallKind::In).unwrap();
            prop_assert!(b.iter().all(|v| d.contains(v)));
        }
    }

    #[test]
    fn maximal_packing_covers_at_twice_the_radius(map in asymmetric_map(10), r in 0.05f64..2.0) {
        let s = space_of(map);
        let all: Vec<usize> = (0..s.n()).collect();
        let p = greedy_packing(&s, &all, r);
        prop_assert!(is_packing(&s, &p, r));
        for v in all {
            prop_assert!(p.iter().any(|&c| s.d(c, v) < 2.0 * r || s.d(v, c) < 2.0 * r));
        }
    }

    #[test]
    fn try_adjust_stays_clamped(n in 2usize..500, beta in 1.0f64..3.0, steps in prop::collection::vec(any::<bool>(), 0..200)) {
        let mut s = try_adjust_init(n, beta).unwrap();
        for busy in steps {
            let before = s.p;
            try_adjust_step(&mut s, if busy { Channel::Busy } else { Channel::Idle });
            prop_assert!(s.p >= s.min_p && s.p <= 0.5);
            if before >= s.min_p {
                if busy { prop_assert!(s.p <= before) } else { prop_assert!(s.p >= before) }
            }
        }
    }

    #[test]
    fn uniform_try_adjust_stays_positive(p in 1e-6f64..=0.5, steps in prop::collection::vec(any::<bool>(), 0..200)) {
        let mut s = try_adjust_init_uniform(p).unwrap();
        for busy in steps {
            try_adjust_step(&mut s, if busy { Channel::Busy } else { Channel::Idle });
            prop_assert!(s.p > 0.0 && s.p <= 0.5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Clear transmitters reach every neighbour, each receiver hears at most one sender,
    /// and ACK only fires on mass delivery.
    #[test]
    fn round_resolution_contracts(
        pts in points(25, 3.0),
        mask in prop::collection::vec(any::<bool>(), 25),
        kind in prop::sample::select(vec![ModelKind::Sinr, ModelKind::Udg, ModelKind::Protocol]),
    ) {
        prop_assume!(distinct(&pts));
        let radii = default_radii();
        let inst = planar_instance(pts, radii).unwrap();
        let s = &inst.space;
        let params = match kind {
            ModelKind::Sinr => ModelParams::sinr(2.0),
            ModelKind::Protocol => ModelParams::new(kind).with_r_prime(1.5),
            _ => ModelParams::new(kind),
        };
        let model = ReceptionModelConfig::derive(&params, s, &radii).unwrap();
        let sensing = SensingConfig::derive(s, &model, &radii, &SensingParams::default()).unwrap();
        let tx: Vec<usize> = (0..s.n()).filter(|&v| mask[v]).collect();
        let real = resolve_round(s, &model, &radii, &tx, 0, 0).unwrap();
        for &u in &tx {
            if succ_clear_guarantee(s, &model, &radii, &tx, u) == Guarantee::Guaranteed {
                for v in neighbors(s, &radii, u, radii.epsilon).unwrap() {
                    prop_assert!(tx.contains(&v) || real.delivered(u, v));
                }
            }
        }
        for v in 0..s.n() {
            prop_assert!(real.deliveries.iter().filter(|&&(_, w)| w == v).count() <= 1);
            prop_assert!((real.interference[v] - interference_at(s, &tx, v)).abs() <= 1e-9 * (1.0 + real.interference[v]));
        }
        let sensed = sense_all(s, &sensing, &radii, &real);
        for &u in &sensed.acks {
            for v in neighbors(s, &radii, u, radii.epsilon).unwrap() {
                prop_assert!(real.delivered(u, v));
            }
        }
        for &(v, u) in &sensed.ntd {
            prop_assert!(real.delivered(u, v) && s.d(u, v) < sensing_radius(&radii));
        }
    }
}

fn sensing_radius(radii: &RadiusSet) -> f64 {
    radii.epsilon * radii.r / 2.0
}

fn small_run(pts: Vec<[f64; 2]>, kind: ProtocolKind, seed: u64) -> (Instance, SimulationConfig, SimulationTrace) {
    let inst = planar_instance(pts, default_radii()).unwrap();
    let n = inst.n() as u64;
    let cfg = SimulationConfig::new(ModelParams::sinr(2.0), ProtocolConfig::new(kind), n * n, seed);
    let trace = run(&inst, &cfg).unwrap();
    (inst, cfg, trace)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_deterministic_and_round_trip(
        pts in points(12, 2.0),
        seed in any::<u64>(),
        kind in prop::sample::select(vec![ProtocolKind::LocalBcast, ProtocolKind::Bcast, ProtocolKind::BcastStar]),
    ) {
        prop_assume!(distinct(&pts));
        let (inst, cfg, trace) = small_run(pts, kind, seed);
        let again = run(&inst, &cfg).unwrap();
        prop_assert_eq!(&trace.footer.hash, &again.footer.hash);
        prop_assert_eq!(trace.compute_hash().unwrap(), trace.footer.hash.clone());
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let back = SimulationTrace::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back.footer.hash, trace.footer.hash);
        prop_assert_eq!(back.rounds.len(), trace.rounds.len());
    }

    #[test]
    fn probabilities_in_trace_are_clamped(pts in points(12, 2.0), seed in any::<u64>()) {
        prop_assume!(distinct(&pts));
        let (_, _, trace) = small_run(pts, ProtocolKind::LocalBcast, seed);
        for r in &trace.rounds {
            prop_assert!(r.probs.iter().all(|&p| (0.0..=0.5).contains(&p)));
        }
    }
}

/// Earliest-end search over every stable path with explicit interval choices.
fn brute_stable(iv: &[Vec<Vec<(u64, u64)>>], l: u64, s: usize, horizon: u64) -> Vec<Option<u64>> {
    let n = iv.len();
    let mut best = vec![None; n];
    best[s] = Some(0);
    fn go(iv: &[Vec<Vec<(u64, u64)>>], l: u64, x: usize, b1: u64, prev: Option<u64>, depth: usize, best: &mut [Option<u64>]) {
        if depth == 0 {
            return;
        }
        for y in 0..iv.len() {
            for &(b, e) in &iv[x][y] {
                let lo_start = match prev {
                    None => b1.max(b),
                    Some(_) => b,
                };
                if prev.is_none() && lo_start != b1 {
                    continue;
                }
                for end in lo_start + l..=e {
                    if prev.is_some_and(|p| end < p + l) {
                        continue;
                    }
                    let len = end - b1;
                    if best[y].map_or(true, |v| len < v) && y != best.len() {
                        best[y] = Some(len);
                    }
                    go(iv, l, y, b1, Some(end), depth - 1, best);
                }
            }
        }
    }
    for b1 in 0..horizon {
        let mut local = vec![None; n];
        go(iv, l, s, b1, None, n, &mut local);
        for v in 0..n {
            if v != s {
                if let Some(x) = local[v] {
                    if best[v].map_or(true, |b| x < b) {
                        best[v] = Some(x);
                    }
                }
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stable_distances_match_brute_force(
        pts in points(5, 1.5),
        rate in 0.0f64..0.3,
        horizon in 4u64..12,
        seed in any::<u64>(),
        c in 0.2f64..1.0,
    ) {
        prop_assume!(distinct(&pts));
        let inst = planar_instance(pts, default_radii()).unwrap();
        let n = inst.n();
        let schedule = gen_churn_schedule(n, rate, horizon, seed, Some(0)).unwrap();
        let topo = TemporalTopology::new(&inst.space, schedule).unwrap();
        let iv = edge_intervals(&topo, &inst.radii).unwrap();
        let l = (c * (n as f64).log2()).ceil() as u64;
        let fast = stable_distances(&topo, &inst.radii, c, 0, n).unwrap();
        prop_assert_eq!(fast, brute_stable(&iv, l, 0, horizon));
    }

    #[test]
    fn snapshots_match_replay(pts in points(6, 1.5), rate in 0.0f64..0.3, horizon in 1u64..15, seed in any::<u64>()) {
        prop_assume!(distinct(&pts));
        let inst = planar_instance(pts, default_radii()).unwrap();
        let n = inst.n();
        let schedule = gen_churn_schedule(n, rate, horizon, seed, None).unwrap();
        let topo = TemporalTopology::new(&inst.space, schedule).unwrap();
        let iv = edge_intervals(&topo, &inst.radii).unwrap();
        let mut seen = Vec::new();
        topo.replay(horizon, |t, s| seen.push((t, s.present_nodes().collect::<Vec<_>>()))).unwrap();
        for (t, present) in seen {
            let snap = topo.snapshot(t).unwrap();
            prop_assert_eq!(snap.present_nodes().collect::<Vec<_>>(), present.clone());
            for x in 0..n {
                let nb = if snap.is_present(x) { neighbors(&snap, &inst.radii, x, inst.radii.epsilon).unwrap() } else { Vec::new() };
                for y in 0..n {
                    let alive = iv[x][y].iter().any(|&(b, e)| b <= t && t <= e);
                    prop_assert_eq!(alive, nb.contains(&y), "edge {}->{} at {}", x, y, t);
                }
            }
        }
    }
}

#[test]
fn stable_distance_on_a_static_line() {
    let inst = planar_instance(vec![[0.0, 0.0], [0.7, 0.0], [1.4, 0.0]], default_radii()).unwrap();
    let topo = TemporalTopology::fixed(&inst.space, 10);
    let fast = stable_distances(&topo, &inst.radii, 1.0, 0, 3).unwrap();
    assert_eq!(fast, vec![Some(0), Some(2), Some(4)]);
    let iv = edge_intervals(&topo, &inst.radii).unwrap();
    assert_eq!(brute_stable(&iv, 2, 0, 10), fast);
}
