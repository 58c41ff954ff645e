use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::market::{Convention, MarketParams};
use crate::nn::{NetworkSpec, Variant};

fn grid() -> ActionGrid {
    ActionGrid {
        q0: 100.0,
        n_slices: 10,
        steps: 20,
    }
}

fn obs(inv: f64, t: usize) -> Obs {
    Obs {
        x: [0.0, inv / 100.0, t as f64 / 10.0],
        inv,
        t,
        history: None,
    }
}

/// Q depends on the action only, through `f(a_norm)`.
struct ActionOnly<F: Fn(f64) -> f64>(F);

impl<F: Fn(f64) -> f64> QFunction for ActionOnly<F> {
    fn q_pairs(&self, _obs: &[&Obs], pairs: &[(usize, f64)]) -> crate::Result<Vec<f64>> {
        Ok(pairs.iter().map(|p| (self.0)(p.1)).collect())
    }
}

fn small_cfg(variant: Variant) -> DqnConfig {
    let mut spec = NetworkSpec::for_variant(variant, 10);
    match variant {
        Variant::HistoryQ => {
            spec.embed_dim = 8;
            spec.ff_dim = 8;
            spec.encoder_layers = 1;
            spec.hidden = vec![8];
            spec.fusion_hidden = vec![8];
        }
        Variant::FilmQ => {
            spec.hidden = vec![8, 8];
            spec.price_hidden = vec![8];
            spec.residual_blocks = 1;
        }
        _ => spec.hidden = vec![16, 16],
    }
    DqnConfig {
        variant,
        network: Some(spec),
        batch_size: 16,
        replay_capacity: 200,
        training_episodes: 12,
        test_episodes: 3,
        eps_floor_episode: 6,
        ig_every: 4,
        ig_steps: 4,
        probe_prices: 2,
        probe_inventories: 2,
        ..DqnConfig::default()
    }
}

#[test]
fn admissible_set_examples() {
    let g = grid();
    assert_eq!(g.admissible(37.5, 9), vec![37.5]);
    assert_eq!(g.admissible(0.0, 3), vec![0.0]);
    let full = g.admissible(100.0, 0);
    assert_eq!(full.len(), 21);
    assert_eq!(full.first(), Some(&0.0));
    assert_eq!(full.last(), Some(&100.0));
    assert!(full.windows(2).all(|w| (w[1] - w[0] - 5.0).abs() < 1e-12));
    assert_eq!(g.admissible(37.5, 2).len(), 8);
    assert!(g.admissible(f64::NAN, 2).is_empty());
}

#[test]
fn epsilon_schedule() {
    let r = 0.05f64.powf(1.0 / 4000.0);
    // 0.05^(1/4000) = exp(ln 0.05 / 4000), evaluated independently.
    assert!((r - 0.9992513473119822).abs() < 1e-15);
    assert!((r - 0.9992514).abs() < 1e-7);
    assert_eq!(epsilon_at(0, 1.0, 0.05, 4000), 1.0);
    assert!((epsilon_at(1, 1.0, 0.05, 4000) - r).abs() < 1e-15);
    for e in [4000, 4001, 9999] {
        assert_eq!(epsilon_at(e, 1.0, 0.05, 4000), 0.05);
    }
    let mut prev = f64::INFINITY;
    for e in 0..5000 {
        let v = epsilon_at(e, 1.0, 0.05, 4000);
        assert!(v <= prev && v >= 0.05);
        prev = v;
    }
}

#[test]
fn random_actions_are_uniform() {
    let g = grid();
    let acts = g.admissible(100.0, 0);
    let q = ActionOnly(|a| a);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = vec![0usize; acts.len()];
    let draws = 10_000;
    for _ in 0..draws {
        let a = select_action(&q, &obs(100.0, 0), &acts, &g, 1.0, &mut rng).unwrap();
        counts[(a / 5.0).round() as usize] += 1;
    }
    let e = draws as f64 / acts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 99th percentile of chi-square with 20 degrees of freedom.
    assert!(chi2 < 37.566, "chi2 = {chi2}");
}

#[test]
fn greedy_selection() {
    let g = grid();
    let acts = g.admissible(40.0, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inc = ActionOnly(|a| a);
    assert_eq!(
        select_action(&inc, &obs(40.0, 2), &acts, &g, 0.0, &mut rng).unwrap(),
        40.0
    );
    let flat = ActionOnly(|_| 1.0);
    assert_eq!(
        select_action(&flat, &obs(40.0, 2), &acts, &g, 0.0, &mut rng).unwrap(),
        0.0
    );
    for eps in [0.0, 0.5, 1.0] {
        assert_eq!(
            select_action(&inc, &obs(12.5, 9), &[12.5], &g, eps, &mut rng).unwrap(),
            12.5
        );
    }
}

fn transition(next_inv: f64, next_t: usize, reward: f64, done: bool) -> Transition {
    Transition {
        state: obs(next_inv + 5.0, next_t - 1),
        action: 5.0,
        reward,
        next: obs(next_inv, next_t),
        done,
    }
}

#[test]
fn ddqn_target_cases() {
    let g = grid();
    let inc = ActionOnly(|a| 10.0 * a);
    let dec = ActionOnly(|a| -a);
    let term = transition(0.0, 10, -2.0, true);
    let live = transition(50.0, 4, -1.0, false);

    assert_eq!(
        ddqn_target(&[&term], &inc, &dec, 1.0, &g).unwrap(),
        vec![-2.0]
    );
    assert_eq!(
        ddqn_target(&[&live], &inc, &inc, 0.0, &g).unwrap(),
        vec![-1.0]
    );
    // Identical networks: max over next actions.
    assert_eq!(
        ddqn_target(&[&live], &inc, &inc, 1.0, &g).unwrap(),
        vec![-1.0 + 10.0 * 0.5]
    );
    // Selection on the online net, evaluation on the target net.
    let y = ddqn_target(&[&live, &term], &dec, &inc, 1.0, &g).unwrap();
    assert_eq!(y, vec![-1.0 + 0.0, -2.0]);
    let y = ddqn_target(&[&live], &inc, &dec, 1.0, &g).unwrap();
    assert_eq!(y, vec![-1.0 - 0.5]);

    let bad = transition(-1.0, 4, 0.0, false);
    assert!(matches!(
        ddqn_target(&[&bad], &inc, &inc, 1.0, &g),
        Err(crate::Error::Corruption(_))
    ));
}

#[test]
fn replay_wraparound_integrity() {
    let mut b = ReplayBuffer::new(10);
    for i in 0..25 {
        b.push(transition(50.0, 4, i as f64, false));
        assert!(b.len() <= 10);
    }
    let mut rewards: Vec<f64> = (0..10).map(|i| b.get(i).unwrap().reward).collect();
    rewards.sort_by(f64::total_cmp);
    assert_eq!(rewards, (15..25).map(|i| i as f64).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let s = b.sample(10, &mut rng).unwrap();
        let mut r: Vec<f64> = s.iter().map(|t| t.reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, rewards);
    }
    assert!(b.sample(11, &mut rng).is_err());
}

#[test]
fn polyak_fixed_point_and_blend() {
    let cfg = small_cfg(Variant::BaselineQ);
    let a = DqnAgent::new(cfg.network.as_ref().unwrap(), &cfg, 0, 3).unwrap();
    let mut t = a.online.clone();
    polyak(&mut t, &a.online, 5e-3);
    assert_eq!(t, a.online);
    let mut t = a.online.clone();
    t.values.iter_mut().for_each(|v| *v = 0.0);
    polyak(&mut t, &a.online, 0.25);
    assert!(t
        .values
        .iter()
        .zip(&a.online.values)
        .all(|(x, y)| *x == 0.25 * y));
}

#[test]
fn single_transition_regression() {
    let mut cfg = small_cfg(Variant::BaselineQ);
    cfg.batch_size = 1;
    cfg.learning_rate = 1e-3;
    let g = grid();
    let mut a = DqnAgent::new(cfg.network.as_ref().unwrap(), &cfg, 0, 11).unwrap();
    let tr = Transition {
        state: obs(40.0, 3),
        action: 10.0,
        reward: -3.7,
        next: obs(30.0, 4),
        done: true,
    };
    a.buffer.push(tr.clone());
    let mut last = f64::INFINITY;
    for _ in 0..3000 {
        last = train_step(&mut a, &cfg, &g).unwrap();
        assert!(last >= 0.0);
    }
    let q = a.online_q().q_pairs(&[&tr.state], &[(0, 0.1)]).unwrap()[0];
    assert!((q + 3.7).abs() < 1e-3, "Q = {q}, last loss {last:e}");
}

#[test]
fn training_is_reproducible_and_feasible() {
    let params = MarketParams::table1(Convention::Aggregate).with_sigma(0.0);
    for variant in [Variant::BaselineQ, Variant::FilmQ, Variant::HistoryQ] {
        let cfg = small_cfg(variant);
        let a = train_ddqn_pair(&params, &cfg, 21).unwrap();
        let b = train_ddqn_pair(&params, &cfg, 21).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.params, b.params);
        assert_eq!(a.episodes.len(), 12);
        assert_eq!(a.ig.len(), 3);
        assert!(a.episodes[0].loss[0].is_none() && a.episodes[11].loss[0].is_some());
        for path in &a.test.inventory_paths {
            assert_eq!(path.len(), 11);
            assert_eq!(path[0], 100.0);
            assert_eq!(path[10], 0.0);
        }
        // Greedy agents and a deterministic market repeat the same episode.
        assert!(a.test.is_pairs.iter().all(|p| p == &a.test.is_pairs[0]));
        let c = train_ddqn_pair(&params, &cfg, 22).unwrap();
        assert_ne!(
            serde_json::to_string(&a.episodes).unwrap(),
            serde_json::to_string(&c.episodes).unwrap()
        );
    }
}

#[test]
fn random_policies_liquidate_and_match_is_accounting() {
    let params = MarketParams::table1(Convention::Own);
    let mut cfg = small_cfg(Variant::BaselineQ);
    cfg.eps_min = 1.0;
    cfg.ig_every = 0;
    let r = train_ddqn_pair(&params, &cfg, 5).unwrap();
    assert!(r
        .episodes
        .iter()
        .all(|e| e.eps == 1.0 && e.is.iter().all(|v| v.is_finite())));
}

#[test]
fn invalid_configs_are_rejected() {
    let params = MarketParams::table1(Convention::Aggregate);
    for f in [
        (|c: &mut DqnConfig| c.tau_polyak = 0.0) as fn(&mut DqnConfig),
        |c| c.eps_min = 1.5,
        |c| c.gamma = 1.1,
        |c| c.batch_size = 0,
        |c| c.variant = Variant::TimeOnlySchedule,
    ] {
        let mut cfg = small_cfg(Variant::BaselineQ);
        f(&mut cfg);
        assert!(matches!(
            train_ddqn_pair(&params, &cfg, 0),
            Err(crate::Error::Config(_))
        ));
    }
}
