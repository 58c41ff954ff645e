mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use execlab::diagnostics::{
    centroid_distances, classify_quadrant, rolling_share, transition_stats, Quadrant,
};
use execlab::dqn::{admissible_actions, ActionGrid, Normalizer, Obs, ReplayBuffer, Transition};
use execlab::market::{run_schedules, Convention, MarketParams, NoiseStream};
use execlab::nn::{Network, NetworkSpec, QBatch};
use execlab::schedule::{clip_rebalance, schedule_from_z};

const N: usize = 10;
const Q0: f64 = 100.0;

fn quadrant() -> impl Strategy<Value = Quadrant> {
    (0usize..4).prop_map(|i| Quadrant::ALL[i])
}

/// Feasible schedules: random non-negative weights scaled to `Q0`.
fn schedule() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, N).prop_filter_map("all-zero weights", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|v| Q0 * v / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn episodes_conserve_inventory_and_cash(a in schedule(), b in schedule(), seed in 0u64..1000) {
        let p = MarketParams::table1(Convention::Aggregate).with_sigma(0.05);
        let rec = run_schedules(&p, &[&a, &b], NoiseStream::new(seed, 0)).unwrap();
        let last = rec.steps.last().unwrap();
        prop_assert!(last.inv.iter().all(|q| *q == 0.0));
        for k in 0..2 {
            let cash: f64 = rec.steps.iter().map(|s| s.outcome.trades[k] * s.outcome.exec_price[k]).sum();
            prop_assert!((cash - last.cash[k]).abs() < 1e-9);
            prop_assert!((rec.is[k] - (Q0 * p.s0 - last.cash[k])).abs() < 1e-9);
        }
        let again = run_schedules(&p, &[&a, &b], NoiseStream::new(seed, 0)).unwrap();
        prop_assert_eq!(last.cash.iter().map(|c| c.to_bits()).collect::<Vec<_>>(),
                        again.steps.last().unwrap().cash.iter().map(|c| c.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn conventions_share_state_dynamics(a in schedule(), b in schedule(), seed in 0u64..1000) {
        let agg = MarketParams::table1(Convention::Aggregate).with_sigma(0.05);
        let own = agg.clone().with_convention(Convention::Own);
        let ra = run_schedules(&agg, &[&a, &b], NoiseStream::new(seed, 3)).unwrap();
        let ro = run_schedules(&own, &[&a, &b], NoiseStream::new(seed, 3)).unwrap();
        for (x, y) in ra.steps.iter().zip(&ro.steps) {
            prop_assert_eq!(x.mid.to_bits(), y.mid.to_bits());
            prop_assert_eq!(&x.inv, &y.inv);
        }
    }

    #[test]
    fn noise_free_shortfall_matches_telescoping_oracle(a in schedule(), b in schedule(), own in any::<bool>()) {
        let conv = if own { Convention::Own } else { Convention::Aggregate };
        let p = MarketParams::table1(conv).with_sigma(0.0);
        let rec = run_schedules(&p, &[&a, &b], NoiseStream::new(0, 0)).unwrap();
        let oracle = common::telescoping_is(&p, &[&a, &b]);
        for k in 0..2 {
            prop_assert!((rec.is[k] - oracle[k]).abs() < 1e-9, "{} vs {}", rec.is[k], oracle[k]);
        }
    }

    #[test]
    fn own_game_quadratic_reproduces_shortfall(v in schedule(), w in schedule()) {
        let p = MarketParams::table1(Convention::Own).with_sigma(0.0);
        let (h, c) = common::own_game_quadratic(&p, &w, false);
        let q = common::quadratic_value(&h, &c, &v);
        let is = common::telescoping_is(&p, &[&v, &w])[0];
        prop_assert!((q - is).abs() < 1e-9);
    }

    #[test]
    fn simplex_projection_is_feasible_and_idempotent(y in prop::collection::vec(-50.0f64..80.0, N)) {
        let v = common::project_simplex(&y, Q0);
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - Q0).abs() < 1e-9);
        let again = common::project_simplex(&v, Q0);
        prop_assert!(v.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn learned_schedules_are_feasible(z in prop::collection::vec(-30.0f64..30.0, N), kick in prop::collection::vec(-20.0f64..20.0, N)) {
        let u = schedule_from_z(&z, Q0);
        prop_assert!(u.iter().all(|x| *x >= 0.0));
        prop_assert!((u.iter().sum::<f64>() - Q0).abs() < 1e-9);
        let mean = kick.iter().sum::<f64>() / N as f64;
        let moved: Vec<f64> = u.iter().zip(&kick).map(|(a, k)| a + k - mean).collect();
        let fixed = clip_rebalance(&moved);
        prop_assert!(fixed.iter().all(|x| *x >= 0.0));
        prop_assert!((fixed.iter().sum::<f64>() - Q0).abs() < 1e-9);
    }

    #[test]
    fn admissible_actions_respect_inventory(inv in 0.0f64..100.0, t in 0usize..N, steps in 1usize..40) {
        let grid = ActionGrid { q0: Q0, n_slices: N, steps };
        let acts = admissible_actions(inv, t, &grid);
        prop_assert!(!acts.is_empty());
        prop_assert!(acts.iter().all(|a| *a >= 0.0 && *a <= inv));
        if t + 1 == N {
            prop_assert_eq!(acts, vec![inv]);
        }
    }

    #[test]
    fn normalization_round_trips(s in 5.0f64..15.0, q in 0.0f64..100.0, t in 0usize..=N, a in 0.0f64..100.0) {
        let p = MarketParams::table1(Convention::Aggregate);
        let n = Normalizer::new(&p, 0);
        let x = n.state(s, q, t);
        let back = n.denormalize(&[x[0], x[1], x[2], n.action(a)]);
        prop_assert!((back[0] - s).abs() < 1e-12);
        prop_assert!((back[1] - q).abs() < 1e-12);
        prop_assert!((back[2] - t as f64).abs() < 1e-12);
        prop_assert!((back[3] - a).abs() < 1e-12);
    }

    #[test]
    fn replay_returns_only_live_transitions(capacity in 1usize..64, pushes in 1usize..300, draw in 1usize..64, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(capacity);
        let obs = Obs { x: [0.0; 3], inv: 0.0, t: 0, history: None };
        for i in 0..pushes {
            buf.push(Transition { state: obs.clone(), action: 0.0, reward: i as f64, next: obs.clone(), done: true });
        }
        let live = pushes.min(capacity);
        prop_assert_eq!(buf.len(), live);
        let oldest = (pushes - live) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match buf.sample(draw, &mut rng) {
            Ok(batch) => {
                prop_assert!(draw <= live);
                prop_assert!(batch.iter().all(|t| t.reward >= oldest && t.reward < pushes as f64));
            }
            Err(_) => prop_assert!(draw > live),
        }
    }

    #[test]
    fn quadrant_labels_partition_the_plane(x in -5.0f64..5.0, y in -5.0f64..5.0, bx in -5.0f64..5.0, by in -5.0f64..5.0) {
        let q = classify_quadrant([x, y], [bx, by]);
        let expect = [x < bx && y < by, x >= bx && y < by, x < bx && y >= by, x >= bx && y >= by];
        prop_assert_eq!(expect.iter().filter(|e| **e).count(), 1);
        prop_assert!(expect[q.index()]);
    }

    #[test]
    fn rolling_share_and_transitions_match_enumeration(series in prop::collection::vec(quadrant(), 2..300), window in 1usize..40) {
        let got = rolling_share(&series, window).unwrap();
        prop_assert!(got.iter().all(|s| (0.0..=1.0).contains(s)));
        for (a, b) in got.iter().zip(common::brute_rolling_share(&series, window)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let st = transition_stats(&series).unwrap();
        let (occ, counts) = common::brute_transitions(&series);
        prop_assert_eq!(st.counts, counts);
        prop_assert!(st.occupancy.iter().zip(occ).all(|(a, b)| (a - b).abs() < 1e-15));
        for (row, c) in st.transitions.iter().zip(counts) {
            match row {
                Some(r) => prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12),
                None => prop_assert_eq!(c.iter().sum::<usize>(), 0),
            }
        }
    }

    #[test]
    fn centroid_distances_are_translation_invariant(
        pts in prop::collection::vec((0.0f64..30.0, 0.0f64..30.0), 1..20),
        shift in (-10.0f64..10.0, -10.0f64..10.0),
    ) {
        let run: Vec<[f64; 2]> = pts.iter().map(|(a, b)| [*a, *b]).collect();
        let moved: Vec<[f64; 2]> = run.iter().map(|p| [p[0] + N as f64 * shift.0, p[1] + N as f64 * shift.1]).collect();
        let (nash, twap) = ([1.3656, 1.3656], [1.3, 1.3]);
        let d = centroid_distances(&[run], N, nash, twap).unwrap();
        let sh = |p: [f64; 2]| [p[0] + shift.0, p[1] + shift.1];
        let e = centroid_distances(&[moved], N, sh(nash), sh(twap)).unwrap();
        prop_assert!((d.d_nash - e.d_nash).abs() < 1e-9);
        prop_assert!((d.d_twap - e.d_twap).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn film_modulation_stays_bounded(seed in any::<u64>(), xs in prop::collection::vec(-100.0f64..100.0, 16)) {
        let net = Network::build(&NetworkSpec::film_q()).unwrap();
        let f = net.film().unwrap();
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(seed));
        for m in f.modulations(&p.values, &xs, 4) {
            prop_assert!(m.iter().all(|g| g.abs() <= f.lambda_film));
        }
    }

    #[test]
    fn forward_and_gradient_are_bit_stable(seed in any::<u64>(), xs in prop::collection::vec(-1.0f64..1.0, 12)) {
        let net = Network::build(&NetworkSpec::baseline_q()).unwrap();
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(seed));
        let run = || {
            let (q, cache) = net.q_forward(&p, &QBatch::plain(&xs)).unwrap();
            let mut g = vec![0.0; net.n_params()];
            net.q_backward(&p, &cache, &[1.0, -0.5, 2.0], &mut g, false).unwrap();
            (q.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}
